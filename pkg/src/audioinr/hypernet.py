"""Hypernetwork: strided convolutional encoder plus dense head emitting INR weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import inr
from .errors import ConfigError, ShapeError

PROBE_COUNT = 256
SIREN_HEAD_BOUND = 1e-4


@dataclass(frozen=True)
class HypernetworkSpec:
    input_len: int = 32768
    encoder_strides: tuple = (2, 4, 5, 8)
    encoder_channels: tuple = (16, 16, 32, 32)
    head_hidden: tuple = (400, 768, 768, 768, 768, 768, 400)
    target: inr.TargetNetworkSpec = field(default_factory=inr.TargetNetworkSpec)

    def __post_init__(self):
        for name in ("encoder_strides", "encoder_channels", "head_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.input_len < 1:
            raise ConfigError("input_len must be positive")
        if len(self.encoder_strides) != len(self.encoder_channels) or not self.encoder_strides:
            raise ConfigError("encoder_strides and encoder_channels must be non-empty and "
                              "of equal length")
        if any(v < 1 for v in self.encoder_strides + self.encoder_channels + self.head_hidden):
            raise ConfigError("strides, channels and head widths must be positive")

    @property
    def kernel_sizes(self):
        return tuple(2 * s + 1 for s in self.encoder_strides)

    @property
    def latent_frames(self):
        return -(-self.input_len // math.prod(self.encoder_strides))

    @property
    def latent_size(self):
        return self.latent_frames * self.encoder_channels[-1]

    @property
    def head_dims(self):
        return (self.latent_size,) + self.head_hidden + (inr.param_count(self.target),)


@dataclass
class HypernetworkState:
    spec: HypernetworkSpec
    params: dc.ParamStore
    epoch: int = 0
    seed: int = 0

    @property
    def shared(self):
        return {k: self.params[k] for k in inr.shared_names(self.spec.target)}


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, shape).astype(dtype)


def build_state(spec: HypernetworkSpec, seed=0, dtype=np.float32) -> HypernetworkState:
    """Fresh hypernetwork with fan-in scaled uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    params = dc.ParamStore()
    c_in = 1
    for i, (c, k) in enumerate(zip(spec.encoder_channels, spec.kernel_sizes)):
        params.add(f"enc.{i}.kernel", _uniform(rng, math.sqrt(6.0 / (c_in * k)), (c, c_in, k), dtype))
        params.add(f"enc.{i}.bias", np.zeros(c, dtype))
        c_in = c
    dims = spec.head_dims
    for i in range(len(dims) - 1):
        params.add(f"head.{i}.W", _uniform(rng, math.sqrt(6.0 / dims[i]), (dims[i + 1], dims[i]), dtype))
        params.add(f"head.{i}.b", np.zeros(dims[i + 1], dtype))
    for name, value in inr.init_shared(spec.target, seed=seed + 1, dtype=dtype).items():
        params.add(name, value)
    if params[f"head.{len(dims) - 2}.W"].shape[0] != inr.param_count(spec.target):
        raise ShapeError("head output does not match the target parameter count")
    return HypernetworkState(spec, params, epoch=0, seed=seed)


def _n_head(spec):
    return len(spec.head_dims) - 1


def encode(state: HypernetworkState, clips, return_cache=False):
    """(B, input_len) waveforms -> (B, frames * channels) latent."""
    spec = state.spec
    x = np.asarray(clips, dtype=state.params["enc.0.kernel"].dtype)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] != spec.input_len:
        raise ShapeError(f"hypernetwork expects {spec.input_len} samples, got {x.shape[-1]}")
    h = x[:, None, :]
    cache = {"inputs": [], "pre": []}
    n_blocks = len(spec.encoder_strides)
    for i, stride in enumerate(spec.encoder_strides):
        z = dc.conv1d_strided(h, state.params[f"enc.{i}.kernel"], state.params[f"enc.{i}.bias"],
                              stride)
        cache["inputs"].append(h)
        cache["pre"].append(z)
        h = dc.elu(z) if i < n_blocks - 1 else z
    latent = h.reshape(h.shape[0], -1)
    if return_cache:
        cache["shape"] = h.shape
        return latent, cache
    return latent


def head_hidden(state: HypernetworkState, latent, return_cache=False):
    """Head activations feeding the final projection."""
    h = latent
    cache = {"inputs": [], "pre": []}
    for i in range(_n_head(state.spec) - 1):
        z = dc.dense(h, state.params[f"head.{i}.W"], state.params[f"head.{i}.b"])
        cache["inputs"].append(h)
        cache["pre"].append(z)
        h = dc.elu(z)
    return (h, cache) if return_cache else h


def head(state: HypernetworkState, latent, return_cache=False):
    """Latent (B, D) -> flat target weights (B, param_count)."""
    latent = np.asarray(latent)
    if latent.shape[-1] != state.spec.latent_size:
        raise ShapeError(f"latent has {latent.shape[-1]} values, head expects "
                         f"{state.spec.latent_size}")
    h, cache = head_hidden(state, latent, return_cache=True)
    last = _n_head(state.spec) - 1
    theta = dc.dense(h, state.params[f"head.{last}.W"], state.params[f"head.{last}.b"])
    cache["final_input"] = h
    return (theta, cache) if return_cache else theta


def generate(state: HypernetworkState, clips, return_cache=False):
    """Waveforms -> target weight vectors, one per clip."""
    clips = np.asarray(clips)
    single = clips.ndim == 1
    latent, enc_cache = encode(state, clips, return_cache=True)
    theta, head_cache = head(state, latent, return_cache=True)
    if single:
        theta = theta[0]
    if return_cache:
        return theta, {"enc": enc_cache, "head": head_cache, "single": single}
    return theta


def generate_backward(state: HypernetworkState, cache, g_theta):
    """Gradients of all encoder/head parameters given d(objective)/d(theta)."""
    params = state.params
    grads = {}
    g = np.asarray(g_theta)
    if cache["single"]:
        g = g[None]
    hc = cache["head"]
    last = _n_head(state.spec) - 1
    g, grads[f"head.{last}.W"], grads[f"head.{last}.b"] = dc.dense_backward(
        g, hc["final_input"], params[f"head.{last}.W"])
    for i in reversed(range(last)):
        g = dc.elu_backward(g, hc["pre"][i])
        g, grads[f"head.{i}.W"], grads[f"head.{i}.b"] = dc.dense_backward(
            g, hc["inputs"][i], params[f"head.{i}.W"])
    ec = cache["enc"]
    g = g.reshape(ec["shape"])
    n_blocks = len(state.spec.encoder_strides)
    for i in reversed(range(n_blocks)):
        if i < n_blocks - 1:
            g = dc.elu_backward(g, ec["pre"][i])
        g, grads[f"enc.{i}.kernel"], grads[f"enc.{i}.bias"] = dc.conv1d_strided_backward(
            g, ec["inputs"][i], params[f"enc.{i}.kernel"], state.spec.encoder_strides[i])
    return grads


# ---------------------------------------------------------------------------
# specialized initializations
# ---------------------------------------------------------------------------

def probe_clips(n, input_len, rng):
    """Random waveforms used to calibrate initialization: clipped Gaussian noise."""
    return np.clip(rng.normal(0.0, 0.3, (n, input_len)), -1.0, 1.0)


def _reinit_body(state, rng):
    spec = state.spec
    dtype = state.params["head.0.W"].dtype
    c_in = 1
    for i, (c, k) in enumerate(zip(spec.encoder_channels, spec.kernel_sizes)):
        state.params[f"enc.{i}.kernel"] = _uniform(rng, math.sqrt(6.0 / (c_in * k)), (c, c_in, k), dtype)
        state.params[f"enc.{i}.bias"] = np.zeros(c, dtype)
        c_in = c
    dims = spec.head_dims
    for i in range(len(dims) - 2):
        state.params[f"head.{i}.W"] = _uniform(rng, math.sqrt(6.0 / dims[i]), (dims[i + 1], dims[i]), dtype)
        state.params[f"head.{i}.b"] = np.zeros(dims[i + 1], dtype)


def target_variances(target: inr.TargetNetworkSpec):
    """Kaiming-uniform variance (2 / fan_in) for weights, U(+-1/sqrt(fan_in)) for biases."""
    out = {}
    for e in inr.layout(target).entries:
        fan_in = target.layer_shapes(e.layer)[0][1]
        out[e.key] = 2.0 / fan_in if e.role == "W" else 1.0 / (3.0 * fan_in)
    return out


def init_for_fmlp(state: HypernetworkState, rng_seed=0):
    """Scale the final projection so generated weights start at Kaiming variance.

    The final layer's rows for each target tensor get a uniform scale chosen
    from the head activations on random probe clips; its bias cancels the
    probe-mean activation so generated weights are centred at zero.
    """
    rng = np.random.default_rng(rng_seed)
    _reinit_body(state, rng)
    spec = state.spec
    last = _n_head(spec) - 1
    dtype = state.params[f"head.{last}.W"].dtype
    h = head_hidden(state, encode(state, probe_clips(PROBE_COUNT, spec.input_len, rng)))
    h = h.astype(np.float64)
    h_mean = h.mean(axis=0)
    spread = float(np.mean(np.sum((h - h_mean) ** 2, axis=1)))
    V = np.empty(state.params[f"head.{last}.W"].shape)
    for e in inr.layout(spec.target).entries:
        var = target_variances(spec.target)[e.key]
        bound = math.sqrt(3.0 * var / max(spread, 1e-12))
        V[e.offset : e.offset + e.size] = rng.uniform(-bound, bound, (e.size, V.shape[1]))
    state.params[f"head.{last}.W"] = V.astype(dtype)
    state.params[f"head.{last}.b"] = (-(V @ h_mean)).astype(dtype)


def init_for_siren(state: HypernetworkState, rng_seed=0):
    """Near-zero final projection; its bias holds one SIREN-initialized weight vector."""
    rng = np.random.default_rng(rng_seed)
    _reinit_body(state, rng)
    spec = state.spec
    last = _n_head(spec) - 1
    dtype = state.params[f"head.{last}.W"].dtype
    shape = state.params[f"head.{last}.W"].shape
    state.params[f"head.{last}.W"] = _uniform(rng, SIREN_HEAD_BOUND, shape, dtype)
    seed = int(rng.integers(2**31))
    state.params[f"head.{last}.b"] = inr.init_weights(spec.target, seed=seed, dtype=dtype)
