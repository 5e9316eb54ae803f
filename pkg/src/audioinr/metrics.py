"""Reconstruction metrics: MSE, log-spectral distance and SI-SNR."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dsp import stft
from .errors import UndefinedMetricError

LSD_FFT = 2048
LSD_HOP = 512
LSD_FLOOR = 1e-10
SI_SNR_CAP = 100.0
CSV_COLUMNS = ("clip_id", "mse", "lsd", "si_snr")


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    lsd: float
    si_snr: float


def _pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    return x, x_hat


def mse(x, x_hat):
    x, x_hat = _pair(x, x_hat)
    return float(np.mean((x - x_hat) ** 2))


def lsd(x, x_hat):
    """Frame-averaged RMS distance between log10 power spectra (2048-point frames, hop 512)."""
    x, x_hat = _pair(x, x_hat)
    if x.shape[-1] < LSD_FFT:
        raise ValueError(f"LSD needs at least {LSD_FFT} samples, got {x.shape[-1]}")
    p = np.abs(stft(x, LSD_FFT, LSD_HOP)) ** 2 + LSD_FLOOR
    p_hat = np.abs(stft(x_hat, LSD_FFT, LSD_HOP)) ** 2 + LSD_FLOOR
    per_frame = np.sqrt(np.mean((np.log10(p) - np.log10(p_hat)) ** 2, axis=-1))
    return float(np.mean(per_frame))


def si_snr(x, x_hat):
    """Scale-invariant SNR in dB of ``x_hat`` against reference ``x``, clamped to +-100 dB."""
    x, x_hat = _pair(x, x_hat)
    x = x - x.mean()
    x_hat = x_hat - x_hat.mean()
    ref_energy = float(np.dot(x, x))
    if math.sqrt(ref_energy) < 1e-12:
        raise UndefinedMetricError("SI-SNR is undefined for a silent reference")
    s = (np.dot(x_hat, x) / ref_energy) * x
    e = x_hat - s
    num = float(np.dot(s, s))
    den = float(np.dot(e, e))
    if num == 0.0:
        # estimate carries no component along the reference
        return -SI_SNR_CAP
    if den == 0.0:
        return SI_SNR_CAP
    return max(-SI_SNR_CAP, min(SI_SNR_CAP, 10.0 * math.log10(num / den)))


def report(x, x_hat) -> MetricsReport:
    return MetricsReport(mse(x, x_hat), lsd(x, x_hat), si_snr(x, x_hat))


def write_metrics_csv(path, rows):
    """``rows`` are (clip_id, MetricsReport-or-dict); missing values print as "undefined"."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for clip_id, rep in rows:
            vals = rep if isinstance(rep, dict) else {
                "mse": rep.mse, "lsd": rep.lsd, "si_snr": rep.si_snr}
            w.writerow([clip_id] + [_fmt(vals.get(k)) for k in CSV_COLUMNS[1:]])


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "undefined"
    return repr(float(v))
