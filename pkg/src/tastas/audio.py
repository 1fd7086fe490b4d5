"""Core audio types and arithmetic: waveforms, WAV I/O, power/SNR gains, segmentation.

Convention: samples are float64 in [-1, 1], 16-bit PCM on disk, mono only.
Power is mean-square amplitude; SNR is a power ratio in dB.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PCM_FULL_SCALE = 32768  # int16 divisor; 0x7FFF maps to 32767/32768

# counts clipped samples across save_wav calls; reset via clip_warnings.clear()
clip_warnings: dict[str, int] = {}


class MultiChannelError(ValueError):
    """WAV file has more than one channel."""


class UnsupportedEncodingError(ValueError):
    """WAV file is not 16-bit PCM."""


class EmptyWaveformError(ValueError):
    """Operation requires a non-empty waveform."""


@dataclass
class Waveform:
    """Single-channel audio: float samples plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform must be one-dimensional, got shape {arr.shape}")
        self.samples = arr
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains NaN or Inf samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file, scaling samples to [-1, 1).

    Raises FileNotFoundError, MultiChannelError, or UnsupportedEncodingError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such WAV file: {path}")
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise MultiChannelError(
                f"{path}: multi-channel unsupported ({wf.getnchannels()} channels)"
            )
        if wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
            raise UnsupportedEncodingError(
                f"{path}: only 16-bit PCM is supported "
                f"(width={wf.getsampwidth()}, comp={wf.getcomptype()})"
            )
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / PCM_FULL_SCALE, rate)


def save_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file.

    Samples outside [-1, 1] are clipped (counted in clip_warnings).
    Round-trip through load_wav reproduces in-range samples within 1/32768.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = w.samples
    hi = (PCM_FULL_SCALE - 1) / PCM_FULL_SCALE  # largest representable positive value
    n_clipped = int(np.sum((x > hi) | (x < -1.0)))
    if n_clipped:
        clip_warnings[str(path)] = clip_warnings.get(str(path), 0) + n_clipped
        x = np.clip(x, -1.0, hi)
    ints = np.round(x * PCM_FULL_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(ints.tobytes())


def power(w: Waveform) -> float:
    """Mean-square amplitude of the waveform."""
    if len(w) == 0:
        raise EmptyWaveformError("power of empty waveform is undefined")
    return float(np.mean(w.samples**2))


def gain_for_snr(signal_power: float, reference_power: float, target_snr_db: float) -> float:
    """Scale factor g with 10*log10(g^2 * signal_power / reference_power) == target_snr_db."""
    if signal_power <= 0 or reference_power <= 0:
        raise ValueError(
            f"powers must be positive (signal={signal_power}, reference={reference_power})"
        )
    return float(np.sqrt(reference_power / signal_power * 10.0 ** (target_snr_db / 10.0)))


def fix_length(w: Waveform, n_samples: int, mode: str = "pad-zeros", seed: int = 0) -> Waveform:
    """Force a waveform to exactly n_samples.

    mode "pad-zeros": appends trailing zeros (truncates longer inputs to the head).
    mode "random-crop": seed-deterministic window; errors on inputs shorter than
    n_samples.
    """
    if n_samples <= 0:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    n = len(w)
    if mode == "pad-zeros":
        if n >= n_samples:
            out = w.samples[:n_samples]
        else:
            out = np.concatenate([w.samples, np.zeros(n_samples - n)])
    elif mode == "random-crop":
        if n < n_samples:
            raise ValueError(f"cannot crop {n} samples to {n_samples}")
        offset = int(np.random.default_rng(seed).integers(0, n - n_samples + 1))
        out = w.samples[offset : offset + n_samples]
    else:
        raise ValueError(f"unknown mode: {mode!r}")
    return Waveform(out.copy(), w.sample_rate)
