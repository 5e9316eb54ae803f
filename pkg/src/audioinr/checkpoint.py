"""HSND1 checkpoint files.

Layout: the 5 magic bytes ``HSND1``, a little-endian uint32 header length,
that many bytes of UTF-8 JSON, then every tensor declared in the header as
raw little-endian float32 in header order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import inr
from .errors import CorruptionError, FormatError

MAGIC = b"HSND1"
VERSION = 1


@dataclass
class INRModel:
    """A single fitted INR: architecture, instance weights and optional shared weights."""

    spec: inr.TargetNetworkSpec
    theta: np.ndarray
    shared: dict = field(default_factory=dict)
    n_samples: int = 0
    sample_rate: int = 22050

    def __post_init__(self):
        if self.shared is None:
            self.shared = {}


@dataclass
class Checkpoint:
    model: object
    extra: dict
    meta: dict


def target_spec_to_dict(spec: inr.TargetNetworkSpec):
    d = asdict(spec)
    d["hidden_widths"] = list(spec.hidden_widths)
    return d


def target_spec_from_dict(d):
    return inr.TargetNetworkSpec(**d)


def hyper_spec_to_dict(spec):
    return {
        "input_len": spec.input_len,
        "encoder_strides": list(spec.encoder_strides),
        "encoder_channels": list(spec.encoder_channels),
        "head_hidden": list(spec.head_hidden),
        "target": target_spec_to_dict(spec.target),
    }


def hyper_spec_from_dict(d):
    from .hypernet import HypernetworkSpec

    d = dict(d)
    d["target"] = target_spec_from_dict(d["target"])
    return HypernetworkSpec(**d)


def _encode(header, tensors):
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    parts += [np.ascontiguousarray(t, dtype="<f4").tobytes() for t in tensors]
    return b"".join(parts)


def save_checkpoint(model, path, extra=None, extra_meta=None):
    """Write a hypernetwork state or an INRModel to ``path``."""
    from .hypernet import HypernetworkState

    extra = extra or {}
    if isinstance(model, HypernetworkState):
        names = model.params.names()
        tensors = [model.params[n] for n in names]
        header = {"kind": "hypernetwork", "spec": hyper_spec_to_dict(model.spec),
                  "epoch": int(model.epoch), "seed": int(model.seed)}
        target = model.spec.target
    elif isinstance(model, INRModel):
        names = ["theta"] + sorted(model.shared)
        tensors = [model.theta] + [model.shared[n] for n in names[1:]]
        header = {"kind": "inr", "spec": target_spec_to_dict(model.spec),
                  "n_samples": int(model.n_samples), "sample_rate": int(model.sample_rate)}
        target = model.spec
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    extra_names = list(extra)
    header.update({
        "version": VERSION,
        "layout": inr.layout(target).to_json(),
        "params": [[n, list(np.shape(t))] for n, t in zip(names, tensors)],
        "extra": [[n, list(np.shape(extra[n]))] for n in extra_names],
        "meta": extra_meta or {},
    })
    data = _encode(header, tensors + [extra[n] for n in extra_names])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def read_checkpoint(path) -> Checkpoint:
    from .hypernet import HypernetworkState

    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an HSND1 checkpoint")
    if len(data) < len(MAGIC) + 4:
        raise CorruptionError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + hlen:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    decl = header["params"] + header.get("extra", [])
    expected = sum(math.prod(shape) for _, shape in decl) * 4
    payload = data[start + hlen :]
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: header declares {expected // 4} values, payload holds {len(payload) / 4:g}"
        )
    arrays, offset = {}, 0
    for name, shape in decl:
        n = math.prod(shape)
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=n, offset=offset
                                     ).astype(np.float32).reshape(shape)
        offset += 4 * n
    main = [n for n, _ in header["params"]]
    extra = {n: arrays[n] for n, _ in header.get("extra", [])}
    if header["kind"] == "hypernetwork":
        spec = hyper_spec_from_dict(header["spec"])
        params = dc.ParamStore({n: arrays[n] for n in main})
        model = HypernetworkState(spec, params, epoch=header["epoch"], seed=header["seed"])
        target = spec.target
    elif header["kind"] == "inr":
        spec = target_spec_from_dict(header["spec"])
        model = INRModel(spec, arrays["theta"], {n: arrays[n] for n in main if n != "theta"},
                         header["n_samples"], header["sample_rate"])
        target = spec
    else:
        raise FormatError(f"{path}: unknown checkpoint kind {header['kind']!r}")
    if inr.layout(target).to_json() != header["layout"]:
        raise CorruptionError(f"{path}: stored layout does not match the target spec")
    return Checkpoint(model, extra, header.get("meta", {}))


def load_checkpoint(path):
    return read_checkpoint(path).model
