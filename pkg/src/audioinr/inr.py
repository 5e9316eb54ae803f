"""Coordinate networks (FMLP and SIREN) evaluated from explicit weight vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ShapeError
from .signal import CoordinateGrid, make_grid

KINDS = ("fmlp", "siren")
VARIANTS = ("standard", "residual", "modulated", "shared")


@dataclass(frozen=True)
class TargetNetworkSpec:
    kind: str = "fmlp"
    embedding_L: int = 10
    hidden_widths: tuple = (32, 32, 32, 32, 32)
    omega_0: float = 2000.0
    omega_i: float = 30.0
    variant: str = "standard"
    shared_layer_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        object.__setattr__(self, "variant", self.variant.lower())
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown target network kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown target network variant {self.variant!r}")
        if self.embedding_L < 1:
            raise ConfigError("embedding_L must be >= 1")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden widths must be positive")
        if not 0 <= self.shared_layer_count < self.n_layers:
            raise ConfigError(
                f"shared_layer_count must be in [0, {self.n_layers}), got {self.shared_layer_count}"
            )

    @property
    def in_width(self):
        return 2 * self.embedding_L if self.kind == "fmlp" else 1

    @property
    def dims(self):
        return (self.in_width,) + self.hidden_widths + (1,)

    @property
    def n_layers(self):
        return len(self.hidden_widths) + 1

    def layer_shapes(self, i):
        d = self.dims
        return (d[i + 1], d[i]), (d[i + 1],)

    def is_shared(self, i):
        """Layer i takes shared weights only (no hypernetwork-generated part)."""
        return self.variant == "shared" and i < self.shared_layer_count

    def has_shared(self, i):
        return self.variant in ("residual", "modulated") or self.is_shared(i)

    def omega(self, i):
        return self.omega_0 if i == 0 else self.omega_i


class LayoutEntry(NamedTuple):
    layer: int
    role: str
    shape: tuple
    offset: int

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def key(self):
        return f"L{self.layer}.{self.role}"


@dataclass(frozen=True)
class Layout:
    entries: tuple = field(default_factory=tuple)

    @property
    def size(self):
        return sum(e.size for e in self.entries)

    def describe(self):
        return " ".join(f"{e.key}{list(e.shape)}@{e.offset}" for e in self.entries)

    def to_json(self):
        return [[e.layer, e.role, list(e.shape), e.offset] for e in self.entries]

    @classmethod
    def from_json(cls, data):
        return cls(tuple(LayoutEntry(int(a), str(r), tuple(s), int(o)) for a, r, s, o in data))


def layout(spec: TargetNetworkSpec) -> Layout:
    """Layout of the instance-specific weights, layer by layer, W before b."""
    entries, offset = [], 0
    for i in range(spec.n_layers):
        if spec.is_shared(i):
            continue
        for role, shape in zip(("W", "b"), spec.layer_shapes(i)):
            entries.append(LayoutEntry(i, role, shape, offset))
            offset += math.prod(shape)
    return Layout(tuple(entries))


def shared_names(spec: TargetNetworkSpec):
    return [f"shared.L{i}.{r}" for i in range(spec.n_layers) if spec.has_shared(i) for r in "Wb"]


def param_count(spec: TargetNetworkSpec) -> int:
    return layout(spec).size


def compression_ratio(spec: TargetNetworkSpec, input_len: int) -> float:
    return input_len / param_count(spec)


def hidden_width_for_ratio(input_len, ratio, kind="fmlp", embedding_L=10, depth=5):
    """Equal hidden width whose compression ratio is closest to ``ratio``."""
    def cr(w):
        spec = TargetNetworkSpec(kind=kind, embedding_L=embedding_L, hidden_widths=(w,) * depth)
        return compression_ratio(spec, input_len)

    target = input_len / ratio
    # count grows like depth*w^2, so start near the root and scan neighbours
    w0 = max(1, int(math.sqrt(target / max(depth - 1, 1))))
    lo = max(1, w0 // 2)
    candidates = range(lo, 2 * w0 + 2)
    return min(candidates, key=lambda w: abs(math.log(cr(w) / ratio)))


def flatten_weights(tensors, lay: Layout):
    """Pack {"L0.W": array, ...} into one flat vector following ``lay``."""
    parts = []
    for e in lay.entries:
        t = np.asarray(tensors[e.key])
        if t.shape[-len(e.shape):] != e.shape:
            raise ShapeError(f"{e.key}: shape {t.shape} does not end with {e.shape}")
        parts.append(t.reshape(t.shape[: t.ndim - len(e.shape)] + (-1,)))
    return np.concatenate(parts, axis=-1)


def unflatten(flat, lay: Layout):
    """Views into ``flat`` (..., P) keyed by "L{i}.{W|b}"; leading axes are batch axes."""
    flat = np.asarray(flat)
    if flat.shape[-1] != lay.size:
        raise ShapeError(f"weight vector has length {flat.shape[-1]}, layout needs {lay.size}")
    lead = flat.shape[:-1]
    return {e.key: flat[..., e.offset : e.offset + e.size].reshape(lead + e.shape)
            for e in lay.entries}


def positional_encoding(coords, L):
    """Rows [sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(L-1) pi t), cos(2^(L-1) pi t)]."""
    t = np.asarray(coords.coords if isinstance(coords, CoordinateGrid) else coords,
                   dtype=np.float64)
    freqs = (2.0 ** np.arange(L)) * np.pi
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (2 * L,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def encoding_as_sine_layer(L):
    """Fixed (W, b) such that sin(t * W.T + b) reproduces ``positional_encoding``."""
    freqs = np.repeat((2.0 ** np.arange(L)) * np.pi, 2)
    b = np.tile([0.0, np.pi / 2], L)
    return freqs[:, None], b


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_layer(spec: TargetNetworkSpec, i, rng):
    """Sample (W, b) for layer ``i`` from the kind's usual initialization.

    FMLP: Kaiming-uniform weights, bias U(+-1/sqrt(fan_in)).
    SIREN: first-layer weights U(+-1/n), later U(+-sqrt(6/n)/omega_i); same biases.
    """
    (w_shape, b_shape) = spec.layer_shapes(i)
    n = w_shape[1]
    if spec.kind == "fmlp":
        bound = math.sqrt(6.0 / n)
    elif i == 0:
        bound = 1.0 / n
    else:
        bound = math.sqrt(6.0 / n) / spec.omega_i
    b_bound = 1.0 / math.sqrt(n)
    return rng.uniform(-bound, bound, w_shape), rng.uniform(-b_bound, b_bound, b_shape)


def init_weights(spec: TargetNetworkSpec, seed=0, dtype=np.float32):
    """A flat instance weight vector drawn from the kind's initialization."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for i in range(spec.n_layers):
        W, b = init_layer(spec, i, rng)
        tensors[f"L{i}.W"], tensors[f"L{i}.b"] = W, b
    return flatten_weights(tensors, layout(spec)).astype(dtype)


def init_shared(spec: TargetNetworkSpec, seed=0, dtype=np.float32):
    """Starting shared weights: zeros (residual), ones (modulated), usual init (shared)."""
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(spec.n_layers):
        if not spec.has_shared(i):
            continue
        w_shape, b_shape = spec.layer_shapes(i)
        if spec.variant == "residual":
            W, b = np.zeros(w_shape), np.zeros(b_shape)
        elif spec.variant == "modulated":
            W, b = np.ones(w_shape), np.ones(b_shape)
        else:
            W, b = init_layer(spec, i, rng)
        out[f"shared.L{i}.W"] = W.astype(dtype)
        out[f"shared.L{i}.b"] = b.astype(dtype)
    return out


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _coords(grid):
    if isinstance(grid, CoordinateGrid):
        return grid.coords
    if np.isscalar(grid) or np.ndim(grid) == 0:
        return make_grid(int(grid)).coords
    return np.asarray(grid, dtype=np.float64)


def _check_shared(spec, shared):
    need = shared_names(spec)
    shared = shared or {}
    missing = [k for k in need if k not in shared]
    if missing:
        raise ShapeError(f"variant {spec.variant!r} needs shared weights {missing}")
    return shared


def _effective(spec, i, hyper, shared):
    if spec.is_shared(i):
        return shared[f"shared.L{i}.W"], shared[f"shared.L{i}.b"]
    Wh, bh = hyper[f"L{i}.W"], hyper[f"L{i}.b"]
    if spec.variant == "residual":
        return shared[f"shared.L{i}.W"] + Wh, shared[f"shared.L{i}.b"] + bh
    if spec.variant == "modulated":
        return shared[f"shared.L{i}.W"] * Wh, shared[f"shared.L{i}.b"] * bh
    return Wh, bh


def forward(spec: TargetNetworkSpec, theta, shared=None, grid=None, return_cache=False):
    """Evaluate the target network at the grid coordinates.

    ``theta`` is (P,) or (B, P); the output is (n,) or (B, n) accordingly.
    ``grid`` may be a CoordinateGrid, an array of coordinates, or a sample count.
    """
    theta = np.asarray(theta)
    single = theta.ndim == 1
    th = theta[None] if single else theta
    B = th.shape[0]
    dtype = th.dtype if np.issubdtype(th.dtype, np.floating) else np.float64
    shared = _check_shared(spec, shared)
    hyper = unflatten(th, layout(spec))
    t = _coords(grid)
    if spec.kind == "fmlp":
        feats = positional_encoding(t, spec.embedding_L)
    else:
        feats = t[:, None]
    h = np.broadcast_to(feats.astype(dtype), (B,) + feats.shape)
    cache = {"inputs": [], "pre": [], "eff": [], "hyper": hyper, "shared": shared}
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        W, b = _effective(spec, i, hyper, shared)
        z = dc.dense(h, W, b)
        cache["inputs"].append(h)
        cache["pre"].append(z)
        cache["eff"].append(W)
        if i == last:
            h = z
        elif spec.kind == "fmlp":
            h = dc.relu(z)
        else:
            h = dc.sin_scaled(z, spec.omega(i))
    out = h[..., 0]
    if single:
        out = out[0]
    if return_cache:
        cache["single"] = single
        return out, cache
    return out


def backward(spec: TargetNetworkSpec, cache, g_out):
    """Gradients of a scalar objective w.r.t. theta and the shared weights.

    Returns ``(g_theta, g_shared)`` with g_theta shaped like the theta passed to
    ``forward`` and g_shared a dict keyed like the shared weights.
    """
    g = np.asarray(g_out)
    if cache["single"]:
        g = g[None]
    g = g[..., None]
    hyper, shared = cache["hyper"], cache["shared"]
    g_hyper, g_shared = {}, {}
    for i in reversed(range(spec.n_layers)):
        if i < spec.n_layers - 1:
            z = cache["pre"][i]
            if spec.kind == "fmlp":
                g = dc.relu_backward(g, z)
            else:
                g = dc.sin_scaled_backward(g, z, spec.omega(i))
        g_in, gW, gb = dc.dense_backward(g, cache["inputs"][i], cache["eff"][i])
        wk, bk = f"L{i}.W", f"L{i}.b"
        sw, sb = f"shared.{wk}", f"shared.{bk}"
        if spec.is_shared(i):
            g_shared[sw], g_shared[sb] = gW, gb
        elif spec.variant == "residual":
            g_hyper[wk], g_hyper[bk] = gW, gb
            g_shared[sw], g_shared[sb] = gW.sum(axis=0), gb.sum(axis=0)
        elif spec.variant == "modulated":
            g_hyper[wk], g_hyper[bk] = gW * shared[sw], gb * shared[sb]
            g_shared[sw] = (gW * hyper[wk]).sum(axis=0)
            g_shared[sb] = (gb * hyper[bk]).sum(axis=0)
        else:
            g_hyper[wk], g_hyper[bk] = gW, gb
        g = g_in
    g_theta = flatten_weights(g_hyper, layout(spec))
    if cache["single"]:
        g_theta = g_theta[0]
    return g_theta, g_shared


def render(spec: TargetNetworkSpec, theta, shared=None, n_out=None):
    """Evaluate on ``make_grid(n_out)``; n_out may exceed the training length."""
    if n_out is None or n_out < 2:
        raise ValueError("n_out must be >= 2")
    return forward(spec, theta, shared, make_grid(int(n_out)))


def export_weights_csv(path, weights, spec: TargetNetworkSpec, clip_ids=None):
    """Write a k x param_count matrix, one flattened INR per row."""
    weights = np.atleast_2d(np.asarray(weights))
    lay = layout(spec)
    if weights.shape[1] != lay.size:
        raise ShapeError(f"rows have {weights.shape[1]} values, spec needs {lay.size}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# layout: {lay.describe()}\n")
        if clip_ids is not None:
            fh.write("# clip_ids: " + ",".join(str(c) for c in clip_ids) + "\n")
        fh.write(",".join(f"p{j}" for j in range(lay.size)) + "\n")
        for row in weights:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_weights_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=_header_lines(path), ndmin=2)


def _header_lines(path):
    """Comment lines plus the column header line."""
    n = 0
    with open(path) as fh:
        for line in fh:
            n += 1
            if not line.startswith("#"):
                break
    return n
