"""Fixed set of differentiable layers with hand-derived backward rules.

Every trainable computation in the package is assembled from the functions
below. Each ``op`` has a matching ``op_backward`` that maps the upstream
gradient to gradients of the op's inputs. Arrays keep whatever float dtype
they arrive in, so the same code runs in 32-bit for training and in 64-bit
for gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError


class ParamStore:
    """Named parameter arrays with matching gradient slots, in insertion order."""

    def __init__(self, params=None):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.asarray(value)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        value = np.asarray(value)
        if value.shape != self._values[name].shape:
            raise ShapeError(
                f"parameter {name!r}: shape {value.shape} != {self._values[name].shape}"
            )
        self._values[name] = value

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def grad(self, name):
        return self._grads[name]

    def set_grad(self, name, g):
        g = np.asarray(g)
        if g.shape != self._values[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected "
                             f"{self._values[name].shape}")
        self._grads[name] = g.astype(self._values[name].dtype, copy=False)

    def zero_grad(self):
        for name, v in self._values.items():
            self._grads[name] = np.zeros_like(v)

    def num_params(self):
        return int(sum(v.size for v in self._values.values()))

    def astype(self, dtype):
        return ParamStore({k: v.astype(dtype) for k, v in self._values.items()})

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self._values.items()})

    def as_dict(self):
        return dict(self._values)


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def dense(x, W, b):
    """``x @ W.T + b``.

    With 2-D ``W`` the leading axes of ``x`` are free. With 3-D ``W`` of shape
    (B, F_out, F_in) each batch item has its own weights and ``x`` must be
    (B, n, F_in), ``b`` (B, F_out).
    """
    if W.ndim == 2:
        if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
            raise ShapeError(f"dense: x {x.shape}, W {W.shape}, b {b.shape} do not conform")
        return x @ W.T + b
    if W.ndim != 3 or x.ndim != 3 or x.shape[0] != W.shape[0] or x.shape[2] != W.shape[2] \
            or b.shape != W.shape[:2]:
        raise ShapeError(f"batched dense: x {x.shape}, W {W.shape}, b {b.shape} do not conform")
    return np.matmul(x, W.transpose(0, 2, 1)) + b[:, None, :]


def dense_backward(gy, x, W):
    """Return (grad_x, grad_W, grad_b) for ``dense``."""
    if W.ndim == 2:
        gx = gy @ W
        gy2 = gy.reshape(-1, gy.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        return gx, gy2.T @ x2, gy2.sum(axis=0)
    gx = np.matmul(gy, W)
    gW = np.matmul(gy.transpose(0, 2, 1), x)
    return gx, gW, gy.sum(axis=1)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(z):
    return np.maximum(z, 0)


def relu_backward(gy, z):
    # relu'(0) = 0
    return gy * (z > 0)


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))


def elu_backward(gy, z):
    return gy * np.where(z > 0, 1, np.exp(np.minimum(z, 0)))


def sin_scaled(z, omega):
    return np.sin(omega * z)


def sin_scaled_backward(gy, z, omega):
    return gy * (omega * np.cos(omega * z))


# ---------------------------------------------------------------------------
# strided causal convolution
# ---------------------------------------------------------------------------

def conv_output_length(T, stride):
    return -(-T // stride)


def _conv_columns(x, K, stride):
    B, C, T = x.shape
    t_out = conv_output_length(T, stride)
    xp = np.concatenate([np.zeros((B, C, K - 1), dtype=x.dtype), x], axis=2)
    cols = sliding_window_view(xp, K, axis=2)[:, :, : (t_out - 1) * stride + 1 : stride, :]
    # (B, T_out, C*K)
    return cols.transpose(0, 2, 1, 3).reshape(B, t_out, C * K)


def conv1d_strided(x, kernel, bias, stride):
    """Causal 1-D convolution: left zero-padding of K-1, output length ceil(T/stride).

    x: (B, C_in, T); kernel: (C_out, C_in, K); bias: (C_out,).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1] \
            or bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv1d: x {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    c_out, _, K = kernel.shape
    cols = _conv_columns(x, K, stride)
    y = cols @ kernel.reshape(c_out, -1).T + bias
    return y.transpose(0, 2, 1)


def conv1d_strided_backward(gy, x, kernel, stride):
    """Return (grad_x, grad_kernel, grad_bias) for ``conv1d_strided``."""
    B, C, T = x.shape
    c_out, _, K = kernel.shape
    t_out = gy.shape[2]
    cols = _conv_columns(x, K, stride)
    g = gy.transpose(0, 2, 1)  # (B, T_out, C_out)
    gk = (g.reshape(-1, c_out).T @ cols.reshape(-1, C * K)).reshape(kernel.shape)
    gb = g.sum(axis=(0, 1))
    gcols = (g @ kernel.reshape(c_out, -1)).reshape(B, t_out, C, K)
    gxp = np.zeros((B, C, T + K - 1), dtype=gy.dtype)
    stop = (t_out - 1) * stride + 1
    for k in range(K):
        gxp[:, :, k : k + stop : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
    return gxp[:, :, K - 1 :], gk, gb


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def failed(self):
        return [k for k, e in self.errors.items() if not e < self.tol]

    @property
    def passed(self):
        return not self.failed

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric):
    """Max absolute deviation scaled by the larger of the two gradient magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def numeric_gradient(fn, params, name, rel_step=1e-5):
    """Central differences of ``fn(params)[0]`` w.r.t. one parameter, in 64-bit."""
    base = params[name]
    g = np.zeros(base.shape, dtype=np.float64)
    flat = base.astype(np.float64).ravel()
    for i in range(flat.size):
        h = rel_step * max(1.0, abs(flat[i]))
        vals = []
        for sign in (1.0, -1.0):
            trial = flat.copy()
            trial[i] += sign * h
            params[name] = trial.reshape(base.shape)
            v = float(fn(params)[0])
            if not np.isfinite(v):
                params[name] = base
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            vals.append(v)
        g.flat[i] = (vals[0] - vals[1]) / (2.0 * h)
    params[name] = base
    return g


def grad_check(fn, params, tol=1e-6, rel_step=1e-5, analytic_dtype=None):
    """Compare analytic gradients with central finite differences.

    ``fn(params) -> (value, grads)`` where ``grads`` maps parameter names to
    arrays. Finite differences always run in 64-bit; the analytic pass runs
    in ``analytic_dtype`` (defaults to 64-bit too).
    """
    p64 = ParamStore({k: np.asarray(v, dtype=np.float64) for k, v in params.items()})
    pa = p64 if analytic_dtype is None else p64.astype(analytic_dtype)
    value, grads = fn(pa)
    if not np.isfinite(value):
        raise NumericError("objective is not finite at the check point")
    report = GradCheckReport(tol=tol)
    for name in p64.names():
        numeric = numeric_gradient(fn, p64, name, rel_step)
        report.errors[name] = relative_error(grads[name], numeric)
    return report
