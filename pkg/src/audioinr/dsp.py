"""STFT, mel filterbanks and the time/frequency reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .errors import ConfigError, ShapeError

MAG_EPS = 1e-12
SILENT_REF_NORM = 1e-8


@dataclass(frozen=True)
class StftConfig:
    fft_sizes: tuple = (2048, 1024, 512, 256, 128)
    n_mels: int = 128
    sample_rate: int = 22050

    def __post_init__(self):
        object.__setattr__(self, "fft_sizes", tuple(int(n) for n in self.fft_sizes))
        if not self.fft_sizes:
            raise ConfigError("at least one FFT size is required")
        for n in self.fft_sizes:
            if n < 4 or n & (n - 1):
                raise ConfigError(f"FFT size must be a power of two >= 4, got {n}")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be positive")

    @staticmethod
    def hop(fft_size):
        return fft_size // 4

    @property
    def max_fft(self):
        return max(self.fft_sizes)


@dataclass(frozen=True)
class FreqWeighting:
    p: float = 0.0
    anneal_epochs: int = 500

    def __post_init__(self):
        if self.p < 0:
            raise ConfigError(f"frequency weighting exponent must be >= 0, got {self.p}")
        if self.anneal_epochs < 1:
            raise ConfigError("anneal_epochs must be positive")


@dataclass(frozen=True)
class LossConfig:
    lambda_t: float = 1.0
    lambda_f: float = 1.0
    stft: StftConfig = field(default_factory=StftConfig)
    weighting: FreqWeighting = field(default_factory=FreqWeighting)
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.lambda_t < 0 or self.lambda_f < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.lambda_t == 0 and self.lambda_f == 0:
            raise ConfigError("lambda_t and lambda_f cannot both be zero")


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def hann_window(n):
    w = get_window("hann", n, fftbins=True)
    w.setflags(write=False)
    return w


def n_frames(length, fft_size, hop):
    return 1 + (length - fft_size) // hop


def _frames(x, fft_size, hop):
    if x.shape[-1] < fft_size:
        raise ValueError(f"signal of length {x.shape[-1]} is shorter than FFT size {fft_size}")
    return sliding_window_view(x, fft_size, axis=-1)[..., ::hop, :]


def stft(x, fft_size, hop):
    """Complex one-sided STFT with a periodic Hann window, frames starting at sample 0."""
    x = np.asarray(x)
    return np.fft.rfft(_frames(x, fft_size, hop) * hann_window(fft_size).astype(x.dtype), axis=-1)


def stft_mag(x, fft_size, hop):
    """Magnitude spectrogram (..., frames, fft_size // 2 + 1)."""
    spec = stft(x, fft_size, hop)
    return np.sqrt(spec.real**2 + spec.imag**2 + MAG_EPS)


def stft_mag_backward(g_mag, spec, mag, length, fft_size, hop):
    """Gradient w.r.t. the time signal given the gradient w.r.t. ``stft_mag``."""
    if fft_size % hop:
        raise ValueError("hop must divide the FFT size")
    c = (g_mag / mag) * spec
    c[..., 0] *= 2
    c[..., -1] *= 2
    g_frames = np.fft.irfft(c, fft_size, axis=-1) * (fft_size / 2) * hann_window(fft_size)
    n_fr = g_frames.shape[-2]
    ratio = fft_size // hop
    lead = g_frames.shape[:-2]
    blocks = np.zeros(lead + (n_fr + ratio - 1, hop), dtype=g_frames.dtype)
    chunks = g_frames.reshape(lead + (n_fr, ratio, hop))
    for j in range(ratio):
        blocks[..., j : j + n_fr, :] += chunks[..., :, j, :]
    gx = np.zeros(lead + (length,), dtype=g_frames.dtype)
    covered = blocks.reshape(lead + (-1,))
    gx[..., : covered.shape[-1]] = covered
    return gx


# ---------------------------------------------------------------------------
# mel filterbank
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(n_mels, sample_rate):
    """The n_mels + 2 band edges/centers, uniform in mel from 0 Hz to Nyquist."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))


def mel_centers(n_mels, sample_rate):
    return mel_points(n_mels, sample_rate)[1:-1]


@lru_cache(maxsize=None)
def mel_filterbank(fft_size, n_mels, sample_rate):
    """Triangular mel filters (n_mels, fft_size // 2 + 1), each row summing to 1.

    Raises ConfigError when two adjacent band points fall within one FFT bin,
    since such a filter would not cover any bin.
    """
    if not n_mels < fft_size / 2:
        raise ConfigError(f"n_mels={n_mels} must be smaller than fft_size/2={fft_size // 2}")
    pts = mel_points(n_mels, sample_rate)
    bin_width = sample_rate / fft_size
    if np.min(np.diff(pts)) < bin_width:
        raise ConfigError(
            f"{n_mels} mel bands are too dense for FFT size {fft_size} at {sample_rate} Hz"
        )
    freqs = np.arange(fft_size // 2 + 1) * bin_width
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rise, fall))
    fb /= fb.sum(axis=1, keepdims=True)
    fb.setflags(write=False)
    return fb


def effective_n_mels(fft_size, n_mels, sample_rate):
    """Largest band count <= n_mels that builds a valid filterbank for this FFT size."""
    bin_width = sample_rate / fft_size
    top = hz_to_mel(sample_rate / 2.0)
    m = min(n_mels, fft_size // 2 - 1)
    while m > 1:
        if mel_to_hz(top / (m + 1)) >= bin_width:
            return m
        m -= 1
    return 1


# ---------------------------------------------------------------------------
# frequency weighting
# ---------------------------------------------------------------------------

def freq_weights(N, p):
    """Per-bin weights proportional to i**p for i = 1..N, normalized to sum to N."""
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    powers = np.arange(1, N + 1, dtype=np.float64) ** p
    return N * powers / powers.sum()


def anneal_weights(target, epoch, anneal_epochs):
    """Linear blend from all-ones (epoch 0) to ``target`` (epoch >= anneal_epochs)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    alpha = min(epoch / anneal_epochs, 1.0)
    return (1.0 - alpha) + alpha * np.asarray(target, dtype=np.float64)


def resolution_weights(fft_size, weighting: FreqWeighting, epoch):
    target = freq_weights(fft_size // 2 + 1, weighting.p)
    return anneal_weights(target, epoch, weighting.anneal_epochs)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class LossResult(NamedTuple):
    total: float
    time: float
    freq: float
    grad: np.ndarray


def _check_pair(x, x_hat):
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reference {x.shape} and estimate {x_hat.shape} differ in shape")
    return x, x_hat


def _mel_stft_terms(x, x_hat, cfg: LossConfig, epoch):
    """Returns per-item spectral loss (batch,) and its gradient w.r.t. x_hat."""
    x2 = x.reshape(-1, x.shape[-1])
    xh2 = x_hat.reshape(-1, x_hat.shape[-1])
    length = x2.shape[-1]
    if length < cfg.stft.max_fft:
        raise ValueError(f"signal length {length} is below the largest FFT size "
                         f"{cfg.stft.max_fft}")
    loss = np.zeros(x2.shape[0])
    grad = np.zeros(xh2.shape, dtype=np.float64)
    n_res = len(cfg.stft.fft_sizes)
    sr = cfg.stft.sample_rate
    eps = cfg.epsilon
    for n_fft in cfg.stft.fft_sizes:
        hop = cfg.stft.hop(n_fft)
        fb = mel_filterbank(n_fft, effective_n_mels(n_fft, cfg.stft.n_mels, sr), sr)
        w = resolution_weights(n_fft, cfg.weighting, epoch)
        s_ref = stft(x2, n_fft, hop)
        s_est = stft(xh2, n_fft, hop)
        mag_ref = np.sqrt(s_ref.real**2 + s_ref.imag**2 + MAG_EPS)
        mag_est = np.sqrt(s_est.real**2 + s_est.imag**2 + MAG_EPS)
        m_ref = (mag_ref * w) @ fb.T
        m_est = (mag_est * w) @ fb.T
        diff = m_ref - m_est
        ref_norm = np.sqrt(np.sum(m_ref**2, axis=(1, 2)))
        diff_norm = np.sqrt(np.sum(diff**2, axis=(1, 2)))
        log_gap = np.log(m_est + eps) - np.log(m_ref + eps)
        count = m_ref.shape[1] * m_ref.shape[2]
        active = ref_norm >= SILENT_REF_NORM
        sc = np.where(active, diff_norm / np.where(active, ref_norm, 1.0), 0.0)
        loss += (sc + np.abs(log_gap).sum(axis=(1, 2)) / count) / n_res

        denom = np.where(active & (diff_norm > 0), diff_norm * ref_norm, np.inf)
        g_m = -diff / denom[:, None, None]
        g_m = g_m + np.sign(log_gap) / (count * (m_est + eps))
        g_m /= n_res
        g_mag = (g_m @ fb) * w
        grad += stft_mag_backward(g_mag, s_est, mag_est, length, n_fft, hop)
    return loss, grad.reshape(x_hat.shape)


def compute_loss(x, x_hat, cfg: LossConfig = None, epoch=0) -> LossResult:
    """Weighted sum of time-domain L1 and multi-resolution mel-STFT loss.

    A batch of shape (B, T) is reduced by the mean over items. The gradient
    is w.r.t. ``x_hat`` and has its dtype.
    """
    cfg = cfg or LossConfig()
    x, x_hat = _check_pair(x, x_hat)
    batch = 1 if x.ndim == 1 else int(np.prod(x.shape[:-1]))
    n = x.shape[-1]
    t_loss = f_loss = 0.0
    grad = np.zeros(x_hat.shape, dtype=np.float64)
    if cfg.lambda_t > 0:
        d = x_hat.astype(np.float64) - x
        t_loss = float(np.mean(np.abs(d)))
        grad += cfg.lambda_t * np.sign(d) / (n * batch)
    if cfg.lambda_f > 0:
        per_item, g = _mel_stft_terms(x, x_hat, cfg, epoch)
        f_loss = float(per_item.mean())
        grad += cfg.lambda_f * g / batch
    total = cfg.lambda_t * t_loss + cfg.lambda_f * f_loss
    return LossResult(total, t_loss, f_loss, grad.astype(x_hat.dtype, copy=False))


def mel_stft_loss(x, x_hat, cfg: LossConfig = None, epoch=0, return_grad=False):
    cfg = cfg or LossConfig()
    x, x_hat = _check_pair(x, x_hat)
    per_item, g = _mel_stft_terms(x, x_hat, cfg, epoch)
    batch = per_item.shape[0]
    value = float(per_item.mean())
    if return_grad:
        return value, (g / batch).astype(x_hat.dtype, copy=False)
    return value


def total_loss(x, x_hat, cfg: LossConfig = None, epoch=0, return_grad=False):
    res = compute_loss(x, x_hat, cfg, epoch)
    return (res.total, res.grad) if return_grad else res.total
