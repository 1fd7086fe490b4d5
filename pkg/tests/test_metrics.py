import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tastas.audio import Waveform
from tastas.metrics import (
    SI_SDR_CAP_DB,
    ideal_ratio_masks,
    istft,
    oracle_irm_separate,
    pairwise_si_sdr,
    pit_assign,
    sdri,
    si_sdr,
    stft,
    write_eval_report,
)


def _tone(freq, n=4000, sr=8000, amp=0.5, phase=0.0):
    t = np.arange(n) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


# ---------------------------------------------------------------------------
# STFT / ISTFT


@given(
    n=st.integers(3, 5000),
    log_frame=st.integers(4, 9),
    seed=st.integers(0, 100),
)
@settings(max_examples=60, deadline=None)
def test_stft_roundtrip_exact_length_and_values(n, log_frame, seed):
    frame = 2 ** log_frame
    x = np.random.default_rng(seed).normal(size=n)
    w = Waveform(x, 8000)
    back = istft(stft(w, frame, frame // 2))
    assert len(back) == n
    assert back.sample_rate == 8000
    np.testing.assert_allclose(back.samples, x, atol=1e-10)


def test_stft_frame_count_formula():
    # centered analysis: frames = 1 + ceil((n + 2*(frame//2) - frame) / hop)
    w = Waveform(np.zeros(1000), 8000)
    tf = stft(w, 256, 128)
    padded = 1000 + 2 * 128
    expected = 1 + int(np.ceil((padded - 256) / 128))
    assert tf.n_frames == expected == tf.grid.shape[0]
    assert tf.n_bins == 129 == tf.grid.shape[1]  # rfft bins for frame 256


def test_stft_rejects_bad_frame_len():
    w = Waveform(np.zeros(100), 8000)
    for bad in (0, 3, 100, 257):
        with pytest.raises(ValueError):
            stft(w, bad, 2)
    with pytest.raises(ValueError):
        stft(w, 256, 0)
    with pytest.raises(ValueError):
        stft(w, 256, 512)


def test_bin_centered_sine_concentrates_energy():
    # frequency on an exact DFT bin: a hann window spreads it over 3 lines
    sr, frame = 8000, 256
    k = 20
    freq = k * sr / frame
    w = _tone(freq, n=4096, sr=sr)
    tf = stft(w, frame, frame // 2)
    mags = np.abs(tf.grid) ** 2
    inner = mags[4:-4, :]  # steady-state frames away from edge padding
    total = inner.sum()
    neighborhood = inner[:, k - 1 : k + 2].sum()
    assert neighborhood / total > 0.99


# ---------------------------------------------------------------------------
# ideal ratio masks


def test_irm_exact_values_and_zero_bin_convention():
    a = np.array([[3.0, 0.0]])
    b = np.array([[1.0, 0.0]])
    c = np.array([[1.0, 0.0]])
    masks = ideal_ratio_masks([a, b, c]).masks
    assert masks[0][0, 0] == pytest.approx(0.6)
    assert masks[1][0, 0] == pytest.approx(0.2)
    assert masks[2][0, 0] == pytest.approx(0.2)
    # all-zero bin: uniform share
    for m in masks:
        assert m[0, 1] == pytest.approx(1.0 / 3.0)


@given(s=st.integers(2, 5), seed=st.integers(0, 50))
@settings(max_examples=30, deadline=None)
def test_irm_partition_of_unity_and_range(s, seed):
    rng = np.random.default_rng(seed)
    mags = [np.abs(rng.normal(size=(7, 11))) for _ in range(s)]
    mags[0][2, 3] = 0.0  # exercise a partial-zero bin
    masks = ideal_ratio_masks(mags).masks
    total = sum(masks)
    np.testing.assert_allclose(total, 1.0, atol=1e-12)
    for m in masks:
        assert (m >= 0).all() and (m <= 1).all()


def test_irm_rejects_mismatched_shapes_and_counts():
    with pytest.raises(ValueError):
        ideal_ratio_masks([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        ideal_ratio_masks([np.zeros((2, 2)), np.zeros((3, 2))])


def test_oracle_irm_separates_disjoint_tones():
    s1 = _tone(500.0, amp=0.5)
    s2 = _tone(1500.0, amp=0.5)
    mix = Waveform(s1.samples + s2.samples, 8000)
    est = oracle_irm_separate(mix, [s1, s2], frame_len=256, hop=128)
    assert all(len(e) == len(mix) for e in est)
    assert si_sdr(est[0], s1) > 20.0
    assert si_sdr(est[1], s2) > 20.0


# ---------------------------------------------------------------------------
# SI-SDR


def test_si_sdr_scale_invariance():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=2000)
    est = ref + 0.1 * rng.normal(size=2000)
    base = si_sdr(est, ref)
    for alpha in (1e-3, 1.0, 1e3):
        assert si_sdr(alpha * est, ref) == pytest.approx(base, abs=1e-6)


def test_si_sdr_orthogonal_energy_ratio():
    # est = ref + orthogonal error with 10x less power -> exactly 10 dB
    n = 4000
    t = np.arange(n)
    ref = np.sqrt(2) * np.cos(2 * np.pi * 100 * t / n)
    err = np.sqrt(0.2) * np.cos(2 * np.pi * 200 * t / n)
    assert si_sdr(ref + err, ref) == pytest.approx(10.0, abs=1e-6)


def test_si_sdr_identical_hits_cap():
    x = np.random.default_rng(0).normal(size=100)
    assert si_sdr(x, x) == SI_SDR_CAP_DB


def test_si_sdr_mean_invariance():
    rng = np.random.default_rng(4)
    ref = rng.normal(size=500)
    est = ref + 0.2 * rng.normal(size=500)
    assert si_sdr(est + 5.0, ref - 3.0) == pytest.approx(si_sdr(est, ref), abs=1e-9)


def test_si_sdr_zero_reference_rejected():
    with pytest.raises(ValueError):
        si_sdr(np.ones(10), np.zeros(10))
    # constant reference has zero power after mean removal
    with pytest.raises(ValueError):
        si_sdr(np.ones(10), np.full(10, 3.0))


def test_si_sdr_length_mismatch():
    with pytest.raises(ValueError):
        si_sdr(np.ones(10), np.ones(11))


# ---------------------------------------------------------------------------
# PIT


def _brute_best(mat):
    s = mat.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(s)):
        val = sum(mat[i, perm[i]] for i in range(s))
        if val > best:
            best, best_perm = val, perm
    return best, best_perm


@given(s=st.integers(1, 6), seed=st.integers(0, 500))
@settings(max_examples=80, deadline=None)
def test_pit_hungarian_matches_brute_force(s, seed):
    mat = np.random.default_rng(seed).normal(size=(s, s)) * 10
    hung = pit_assign(mat, method="hungarian")
    brute = pit_assign(mat, method="brute-force")
    best, _ = _brute_best(mat)
    assert hung.objective == pytest.approx(best, rel=1e-12, abs=1e-12)
    assert brute.objective == pytest.approx(best, rel=1e-12, abs=1e-12)
    assert sorted(hung.perm) == list(range(s))


def test_pit_assign_accepts_lists_and_validates():
    res = pit_assign(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert res.perm == (0, 1)
    assert res.objective == pytest.approx(2.0)
    with pytest.raises(ValueError):
        pit_assign(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        pit_assign(np.zeros((2, 2)), method="simplex")


def test_pit_perm_maps_estimate_to_reference():
    # estimate 0 matches reference 1 and vice versa
    mat = np.array([[0.0, 50.0], [50.0, 0.0]])
    res = pit_assign(mat)
    assert res.perm == (1, 0)
    assert res.objective == pytest.approx(100.0)


# ---------------------------------------------------------------------------
# SDR improvement


def test_sdri_perfect_estimates_improve_by_cap_minus_mix():
    s1 = _tone(440.0)
    s2 = _tone(880.0)
    mix = Waveform(s1.samples + s2.samples, 8000)
    per_source, mean, assignment = sdri([s2, s1], [s1, s2], mix)
    assert assignment.perm == (1, 0)
    for j, ref in enumerate((s1, s2)):
        expected = SI_SDR_CAP_DB - si_sdr(mix, ref)
        assert per_source[j] == pytest.approx(expected, abs=1e-9)
    assert mean == pytest.approx(np.mean(per_source))


def test_sdri_count_mismatch():
    s1 = _tone(440.0)
    with pytest.raises(ValueError):
        sdri([s1], [s1, s1], s1)


def test_pairwise_matrix_orientation():
    s1 = _tone(440.0)
    s2 = _tone(880.0)
    mat = pairwise_si_sdr([s1], [s1, s2])
    assert mat.shape == (1, 2)
    assert mat[0, 0] == SI_SDR_CAP_DB
    assert mat[0, 1] < 0


def test_write_eval_report_roundtrip(tmp_path):
    import json

    rows = [{"record_id": "a", "mean_sdri": 1.5}, {"record_id": "b", "mean_sdri": 2.5}]
    summary = {"metric": "si_sdr_improvement", "count": 2, "mean_sdri": 2.0}
    out = tmp_path / "report.jsonl"
    write_eval_report(out, rows, summary)
    lines = out.read_text().splitlines()
    assert [json.loads(ln)["record_id"] for ln in lines] == ["a", "b"]
    back = json.loads((tmp_path / "report.jsonl.summary.json").read_text())
    assert back == summary
