"""Separation metrics and oracle machinery.

STFT/ISTFT with exact-length inversion, ideal ratio masks
(M_s = |X_s| / sum_s |X_s|) as the masking upper bound, scale-invariant SDR,
permutation-invariant assignment (brute force and Hungarian), and SDR
improvement under the optimal pairing.

Reported SDRi is SI-SDR improvement (filter-free), not the 512-tap
distortion-filter variant; reports carry an explicit metric label.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from tastas.audio import Waveform

SI_SDR_CAP_DB = 100.0
METRIC_LABEL = "si_sdr_improvement"

DEFAULT_FRAME_LEN = 256
DEFAULT_HOP = 128


@dataclass
class TFRepresentation:
    """Complex STFT grid (frames x bins) plus the metadata needed to invert it."""

    grid: np.ndarray
    frame_len: int
    hop: int
    window: str
    n_samples: int
    sample_rate: int = 8000

    @property
    def n_frames(self) -> int:
        return self.grid.shape[0]

    @property
    def n_bins(self) -> int:
        return self.grid.shape[1]


def _hann(frame_len: int) -> np.ndarray:
    # periodic hann; sums to 1 across 50%-overlapped shifts
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)


def stft(
    w: Waveform,
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
    window: str = "hann",
) -> TFRepresentation:
    """Windowed DFT frames of a waveform, center-padded for exact inversion.

    frame_len must be a power of two; 0 < hop <= frame_len. hop = frame_len/2
    with hann satisfies the perfect-reconstruction (COLA) condition.
    """
    if frame_len <= 0 or frame_len & (frame_len - 1):
        raise ValueError(f"frame_len must be a power of two, got {frame_len}")
    if not 0 < hop <= frame_len:
        raise ValueError(f"hop must satisfy 0 < hop <= frame_len, got {hop}")
    if window != "hann":
        raise ValueError(f"unsupported window: {window!r}")
    pad = frame_len // 2
    x = np.concatenate([np.zeros(pad), w.samples, np.zeros(pad)])
    n_frames = 1 + max(0, int(np.ceil((len(x) - frame_len) / hop)))
    total = (n_frames - 1) * hop + frame_len
    x = np.concatenate([x, np.zeros(total - len(x))])
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(frame_len)[None, :]
    return TFRepresentation(
        np.fft.rfft(frames, axis=1), frame_len, hop, window, len(w), w.sample_rate
    )


def istft(tf: TFRepresentation) -> Waveform:
    """Invert an STFT by weighted overlap-add; output length equals the original."""
    if tf.grid.shape[1] != tf.frame_len // 2 + 1:
        raise ValueError(
            f"grid has {tf.grid.shape[1]} bins, expected {tf.frame_len // 2 + 1}"
        )
    win = _hann(tf.frame_len)
    frames = np.fft.irfft(tf.grid, n=tf.frame_len, axis=1) * win[None, :]
    total = (tf.n_frames - 1) * tf.hop + tf.frame_len
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(tf.n_frames):
        out[t * tf.hop : t * tf.hop + tf.frame_len] += frames[t]
        wsum[t * tf.hop : t * tf.hop + tf.frame_len] += win**2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    pad = tf.frame_len // 2
    return Waveform(out[pad : pad + tf.n_samples], tf.sample_rate)


@dataclass
class MaskSet:
    """Per-source real T-F masks; entries in [0, 1], summing to 1 at active bins."""

    masks: list[np.ndarray]

    @property
    def n_sources(self) -> int:
        return len(self.masks)


def ideal_ratio_masks(source_mags: list[np.ndarray]) -> MaskSet:
    """Ideal ratio masks M_s = |X_s| / sum_s |X_s|.

    Bins where every source magnitude is zero get the uniform mask 1/S, which
    keeps the sum-to-one invariant on silent bins.
    """
    mags = [np.asarray(m, dtype=np.float64) for m in source_mags]
    if len(mags) < 2:
        raise ValueError(f"need at least 2 sources, got {len(mags)}")
    shape = mags[0].shape
    for m in mags[1:]:
        if m.shape != shape:
            raise ValueError(f"magnitude shape mismatch: {m.shape} vs {shape}")
    if any((m < 0).any() for m in mags):
        raise ValueError("magnitudes must be nonnegative")
    denom = np.sum(mags, axis=0)
    zero = denom == 0
    denom_safe = np.where(zero, 1.0, denom)
    s = len(mags)
    return MaskSet([np.where(zero, 1.0 / s, m / denom_safe) for m in mags])


def oracle_irm_separate(
    mixture: Waveform,
    sources: list[Waveform],
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
) -> list[Waveform]:
    """Apply ideal ratio masks built from the true sources to the mixture STFT.

    Upper bound for magnitude-masking separators; each output has the
    mixture's length and sample rate.
    """
    for s in sources:
        if len(s) != len(mixture):
            raise ValueError("source/mixture length mismatch")
    mix_tf = stft(mixture, frame_len, hop)
    mask_set = ideal_ratio_masks(
        [np.abs(stft(s, frame_len, hop).grid) for s in sources]
    )
    outs = []
    for mask in mask_set.masks:
        tf = TFRepresentation(
            mask * mix_tf.grid, frame_len, hop, mix_tf.window, len(mixture), mixture.sample_rate
        )
        outs.append(istft(tf))
    return outs


def si_sdr(est: Waveform | np.ndarray, ref: Waveform | np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +/-100.

    Both signals are mean-removed, the estimate is projected onto the
    reference, and the ratio of projection to residual energy is returned.
    """
    e = est.samples if isinstance(est, Waveform) else np.asarray(est, dtype=np.float64)
    r = ref.samples if isinstance(ref, Waveform) else np.asarray(ref, dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {r.shape}")
    e = e - e.mean()
    r = r - r.mean()
    ref_pow = float(np.dot(r, r))
    if ref_pow == 0.0:
        raise ValueError("reference has zero power after mean removal")
    t = (np.dot(e, r) / ref_pow) * r
    resid = e - t
    t_pow = float(np.dot(t, t))
    resid_pow = float(np.dot(resid, resid))
    if resid_pow == 0.0:
        return SI_SDR_CAP_DB
    if t_pow == 0.0:
        return -SI_SDR_CAP_DB
    val = 10.0 * np.log10(t_pow / resid_pow)
    return float(np.clip(val, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


@dataclass
class PermutationAssignment:
    """Bijection estimate index -> reference index plus its summed score."""

    perm: tuple[int, ...]
    objective: float


def pit_assign(score_matrix: np.ndarray, method: str = "hungarian") -> PermutationAssignment:
    """Maximizing assignment over an S x S score matrix.

    "brute-force" enumerates all S! permutations; "hungarian" solves the
    assignment problem. Entry (i, j) scores pairing estimate i with
    reference j; the returned perm maps estimate index to reference index.
    """
    m = np.asarray(score_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("score matrix contains non-finite entries")
    s = m.shape[0]
    if method == "brute-force":
        best_perm, best_val = None, -np.inf
        for perm in itertools.permutations(range(s)):
            val = sum(m[i, perm[i]] for i in range(s))
            if val > best_val:
                best_perm, best_val = perm, val
        return PermutationAssignment(best_perm, float(best_val))
    if method == "hungarian":
        rows, cols = linear_sum_assignment(m, maximize=True)
        perm = tuple(int(cols[np.where(rows == i)[0][0]]) for i in range(s))
        return PermutationAssignment(perm, float(sum(m[i, perm[i]] for i in range(s))))
    raise ValueError(f"unknown method: {method!r}")


def pairwise_si_sdr(estimates: list[Waveform], references: list[Waveform]) -> np.ndarray:
    """S x S matrix of si_sdr(estimates[i], references[j])."""
    return np.array([[si_sdr(e, r) for r in references] for e in estimates])


def sdri(
    estimates: list[Waveform],
    references: list[Waveform],
    mixture: Waveform,
) -> tuple[list[float], float, PermutationAssignment]:
    """SI-SDR improvement over the mixture under the PIT-optimal pairing.

    Returns (per-source improvements ordered by reference, their mean, and
    the assignment). Improvement for reference i is
    si_sdr(matched estimate, ref_i) - si_sdr(mixture, ref_i).
    """
    if len(estimates) != len(references):
        raise ValueError(
            f"count mismatch: {len(estimates)} estimates vs {len(references)} references"
        )
    scores = pairwise_si_sdr(estimates, references)
    assignment = pit_assign(scores, method="hungarian")
    est_for_ref = {ref_i: est_i for est_i, ref_i in enumerate(assignment.perm)}
    per_source = [
        scores[est_for_ref[j], j] - si_sdr(mixture, references[j])
        for j in range(len(references))
    ]
    return per_source, float(np.mean(per_source)), assignment


def write_eval_report(path, rows: list[dict], summary: dict) -> None:
    """Write one JSON line per mixture plus a sibling summary JSON."""
    path = str(path)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    with open(path + ".summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
