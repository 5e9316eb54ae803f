"""Audio clips, WAV I/O, coordinate grids and training-time augmentation."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import FormatError, ShapeError, UnsupportedFormatError

DEFAULT_SAMPLE_RATE = 22050
_PCM16_SCALE = 32768.0
_PCM16_MAX = 1.0 - 2.0**-15


@dataclass
class AudioClip:
    """Mono waveform with its sample rate.

    Samples are stored as a 1-D float array; construction rejects empty,
    non-finite or out-of-range data.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ShapeError(f"clip samples must be 1-D, got shape {s.shape}")
        if s.size == 0:
            raise ShapeError("clip is empty")
        if not np.issubdtype(s.dtype, np.floating):
            s = s.astype(np.float64)
        if not np.all(np.isfinite(s)):
            raise ValueError("clip contains non-finite samples")
        if np.max(np.abs(s)) > 1.0:
            raise ValueError("clip samples must lie in [-1, 1]")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        self.samples = s
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class CoordinateGrid:
    coords: np.ndarray

    @property
    def count(self):
        return self.coords.shape[0]


@dataclass(frozen=True)
class AugmentationConfig:
    crop_length: int
    dequantize_bits: int = 16
    phase_mangle_enabled: bool = False
    allpass_coeff_range: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if self.crop_length <= 0:
            raise ValueError("crop_length must be positive")
        lo, hi = self.allpass_coeff_range
        if not (-1.0 < lo <= hi < 1.0):
            raise ValueError(
                f"allpass_coeff_range must lie inside (-1, 1), got {self.allpass_coeff_range}"
            )


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file, averaging channels down to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if width != 2:
        raise UnsupportedFormatError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    data = np.frombuffer(raw, dtype="<i2")
    usable = data.size - data.size % n_channels
    frames = data[:usable].reshape(-1, n_channels).astype(np.float64) / _PCM16_SCALE
    if frames.shape[0] == 0:
        raise FormatError(f"{path}: no audio frames")
    return AudioClip(frames.mean(axis=1), rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as mono 16-bit PCM; values are clamped to the int16 range."""
    s = np.clip(np.asarray(clip.samples, dtype=np.float64), -1.0, _PCM16_MAX)
    ints = np.rint(s * _PCM16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(ints.tobytes())


def make_grid(n: int) -> CoordinateGrid:
    """``n`` evenly spaced coordinates spanning [-1, 1] inclusive."""
    if n < 2:
        raise ValueError(f"grid needs at least 2 points, got {n}")
    i = np.arange(n, dtype=np.float64)
    # written symmetrically so coords[i] == -coords[n-1-i] holds bitwise
    return CoordinateGrid((2.0 * i - (n - 1)) / (n - 1))


def allpass(x, coeff):
    """First-order all-pass: y[n] = a*x[n] + x[n-1] - a*y[n-1], zero initial state."""
    return lfilter([coeff, 1.0], [1.0, coeff], x)


def augment(clip: AudioClip, cfg: AugmentationConfig, rng_seed: int) -> AudioClip:
    """Random crop, then optional phase mangle, then dequantization noise."""
    n = len(clip)
    if cfg.crop_length > n:
        raise ValueError(f"crop_length {cfg.crop_length} exceeds clip length {n}")
    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, n - cfg.crop_length + 1))
    x = clip.samples[start : start + cfg.crop_length].astype(np.float64)
    if cfg.phase_mangle_enabled:
        lo, hi = cfg.allpass_coeff_range
        x = allpass(x, rng.uniform(lo, hi))
    if cfg.dequantize_bits > 0:
        step = 2.0 ** -(cfg.dequantize_bits - 1)
        x = x + rng.uniform(-step, step, size=x.shape)
    return AudioClip(np.clip(x, -1.0, 1.0), clip.sample_rate)


def sine_mixture(freqs, duration=None, sample_rate=DEFAULT_SAMPLE_RATE, n_samples=None,
                 amplitudes=None, phases=None) -> AudioClip:
    """Sum of sinusoids, scaled so the peak amplitude never exceeds 1."""
    if n_samples is None:
        n_samples = int(round(duration * sample_rate))
    t = np.arange(n_samples) / sample_rate
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    amps = np.ones_like(freqs) / len(freqs) if amplitudes is None else np.asarray(amplitudes, float)
    ph = np.zeros_like(freqs) if phases is None else np.asarray(phases, float)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + ph[:, None])).sum(axis=0)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    return AudioClip(x, sample_rate)


def random_tones(n_clips, length, sample_rate=DEFAULT_SAMPLE_RATE, seed=0, n_partials=3,
                 freq_range=(100.0, 2000.0), peak=0.8):
    """Deterministic synthetic dataset: each clip is a few random partials with a decaying envelope."""
    rng = np.random.default_rng(seed)
    clips = []
    t = np.arange(length) / sample_rate
    for _ in range(n_clips):
        f = rng.uniform(*freq_range, n_partials)
        a = rng.uniform(0.2, 1.0, n_partials)
        ph = rng.uniform(0, 2 * np.pi, n_partials)
        x = (a[:, None] * np.sin(2 * np.pi * f[:, None] * t + ph[:, None])).sum(axis=0)
        x *= np.exp(-t * rng.uniform(0.0, 20.0))
        x *= peak / np.max(np.abs(x))
        clips.append(AudioClip(x, sample_rate))
    return clips
