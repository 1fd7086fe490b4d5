"""Monaural multi-speaker separation: dual-path recurrent stages, speaker-identity
awareness, multi-step training, and SI-SDR/PIT evaluation machinery."""

__version__ = "0.1.0"

from tastas.audio import Waveform, load_wav, save_wav

__all__ = ["Waveform", "load_wav", "save_wav", "__version__"]
