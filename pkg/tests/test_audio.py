import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tastas.audio import (
    EmptyWaveformError,
    MultiChannelError,
    Waveform,
    fix_length,
    gain_for_snr,
    load_wav,
    power,
    save_wav,
)


def test_waveform_casts_to_float64():
    w = Waveform(np.array([1, 2, 3], dtype=np.int16), 8000)
    assert w.samples.dtype == np.float64
    assert w.sample_rate == 8000
    assert len(w) == 3
    assert w.duration == pytest.approx(3 / 8000)


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), 8000)
    with pytest.raises(ValueError):
        Waveform(np.array([np.inf]), 8000)


def test_waveform_rejects_bad_rate_and_shape():
    with pytest.raises(ValueError):
        Waveform(np.zeros(4), 0)
    with pytest.raises(ValueError):
        Waveform(np.zeros((2, 4)), 8000)


def test_wav_roundtrip_is_lossless_for_quantized_values(tmp_path):
    rng = np.random.default_rng(0)
    # values already on the 16-bit grid survive a write/read cycle exactly
    q = np.round(rng.uniform(-0.9, 0.9, 1000) * 32768.0) / 32768.0
    w = Waveform(q, 8000)
    save_wav(tmp_path / "x.wav", w)
    back = load_wav(tmp_path / "x.wav")
    assert back.sample_rate == 8000
    np.testing.assert_array_equal(back.samples, w.samples)


def test_wav_roundtrip_error_bounded_by_quantization_step(tmp_path):
    rng = np.random.default_rng(1)
    w = Waveform(rng.uniform(-0.99, 0.99, 500), 16000)
    save_wav(tmp_path / "x.wav", w)
    back = load_wav(tmp_path / "x.wav")
    assert np.max(np.abs(back.samples - w.samples)) <= 0.5 / 32768.0


def test_save_wav_clips_and_counts(tmp_path):
    from tastas.audio import clip_warnings

    clip_warnings.clear()
    w = Waveform(np.array([0.0, 1.5, -2.0, 0.5]), 8000)
    save_wav(tmp_path / "x.wav", w)
    assert clip_warnings[str(tmp_path / "x.wav")] == 2
    back = load_wav(tmp_path / "x.wav")
    assert back.samples.max() <= 1.0
    assert back.samples.min() >= -1.0
    clip_warnings.clear()


def test_load_wav_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")


def test_load_wav_rejects_stereo(tmp_path):
    import wave

    with wave.open(str(tmp_path / "st.wav"), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(8000)
        f.writeframes(b"\x00\x00" * 8)
    with pytest.raises(MultiChannelError):
        load_wav(tmp_path / "st.wav")


def test_power_matches_mean_square():
    w = Waveform(np.array([3.0, -3.0, 3.0, -3.0]), 8000)
    assert power(w) == pytest.approx(9.0)
    with pytest.raises(EmptyWaveformError):
        power(Waveform(np.array([]), 8000))


@given(
    sig=st.floats(1e-6, 1e6),
    ref=st.floats(1e-6, 1e6),
    snr=st.floats(-30, 30),
)
def test_gain_for_snr_closed_form(sig, ref, snr):
    g = gain_for_snr(sig, ref, snr)
    achieved = 10.0 * np.log10(g * g * sig / ref)
    assert achieved == pytest.approx(snr, abs=1e-9)


def test_gain_for_snr_rejects_nonpositive_power():
    with pytest.raises(ValueError):
        gain_for_snr(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        gain_for_snr(1.0, -1.0, 0.0)


def test_fix_length_pad_and_truncate():
    w = Waveform(np.arange(5, dtype=float), 8000)
    padded = fix_length(w, 8)
    np.testing.assert_array_equal(padded.samples, [0, 1, 2, 3, 4, 0, 0, 0])
    cut = fix_length(w, 3)
    np.testing.assert_array_equal(cut.samples, [0, 1, 2])


def test_fix_length_random_crop_is_seeded_and_in_bounds():
    w = Waveform(np.arange(100, dtype=float), 8000)
    a = fix_length(w, 10, mode="random-crop", seed=7)
    b = fix_length(w, 10, mode="random-crop", seed=7)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert len(a) == 10
    # the crop is a contiguous window of the original
    start = int(a.samples[0])
    np.testing.assert_array_equal(a.samples, np.arange(start, start + 10))
    with pytest.raises(ValueError):
        fix_length(Waveform(np.zeros(4), 8000), 10, mode="random-crop")


def test_fix_length_unknown_mode():
    with pytest.raises(ValueError):
        fix_length(Waveform(np.zeros(4), 8000), 2, mode="stretch")
