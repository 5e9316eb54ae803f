"""TOML run configuration with an exact-match schema.

Every section and key is optional; anything not listed in ``SCHEMA`` is an
error so that typos fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dsp, hypernet, inr
from .errors import ConfigError
from .signal import AugmentationConfig
from .train import FitConfig, OneCycle, TrainConfig

_INT, _FLOAT, _BOOL, _STR = int, float, bool, str
_INTS, _FLOATS, _STRS = "ints", "floats", "strs"

SCHEMA = {
    "target": {"kind": _STR, "embedding_L": _INT, "hidden_widths": _INTS, "omega_0": _FLOAT,
               "omega_i": _FLOAT, "variant": _STR, "shared_layer_count": _INT},
    "hypernet": {"input_len": _INT, "encoder_strides": _INTS, "encoder_channels": _INTS,
                 "head_hidden": _INTS, "init": _STR},
    "train": {"batch_size": _INT, "epochs": _INT, "samples_per_epoch": _INT, "max_lr": _FLOAT,
              "weight_decay": _FLOAT, "lr_scale": _FLOAT, "seed": _INT,
              "checkpoint_every": _INT, "pct_warmup": _FLOAT, "div_initial": _FLOAT,
              "div_final": _FLOAT},
    "fit": {"steps": _INT, "lr": _FLOAT, "objective": _STR, "seed": _INT},
    "loss": {"lambda_t": _FLOAT, "lambda_f": _FLOAT, "fft_sizes": _INTS, "n_mels": _INT,
             "sample_rate": _INT, "p": _FLOAT, "anneal_epochs": _INT, "epsilon": _FLOAT},
    "augment": {"dequantize_bits": _INT, "phase_mangle": _BOOL, "allpass_coeff_range": _FLOATS},
    "data": {"paths": _STRS, "output_dir": _STR},
}


@dataclass
class RunConfig:
    target: inr.TargetNetworkSpec = field(default_factory=inr.TargetNetworkSpec)
    hyper: hypernet.HypernetworkSpec = field(default_factory=hypernet.HypernetworkSpec)
    init: str = "auto"
    train: TrainConfig = field(default_factory=TrainConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    loss: dsp.LossConfig = field(default_factory=dsp.LossConfig)
    augment: AugmentationConfig | None = None
    data_paths: list = field(default_factory=list)
    output_dir: str | None = None


def _check_value(section, key, kind, value):
    where = f"[{section}].{key}"
    if kind is _BOOL:
        ok = isinstance(value, bool)
    elif kind is _INT:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is _FLOAT:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif kind is _STR:
        ok = isinstance(value, str)
    else:
        inner = {_INTS: _INT, _FLOATS: _FLOAT, _STRS: _STR}[kind]
        ok = isinstance(value, list)
        if ok:
            value = [_check_value(section, key, inner, v) for v in value]
    if not ok:
        raise ConfigError(f"{where}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def validate(raw: dict) -> dict:
    """Type-check a parsed TOML document against SCHEMA; returns a cleaned copy."""
    out = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        out[section] = {}
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out[section][key] = _check_value(section, key, SCHEMA[section][key], value)
    return out


def build(raw: dict) -> RunConfig:
    cfg = validate(raw)
    get = lambda s: cfg.get(s, {})  # noqa: E731
    try:
        target = inr.TargetNetworkSpec(**{k: tuple(v) if isinstance(v, list) else v
                                          for k, v in get("target").items()})
        hsec = dict(get("hypernet"))
        init = hsec.pop("init", "auto")
        if init not in ("auto", "default", "fmlp", "siren"):
            raise ConfigError(f"[hypernet].init must be auto/default/fmlp/siren, got {init!r}")
        hyper = hypernet.HypernetworkSpec(target=target, **{k: tuple(v) for k, v in hsec.items()
                                                            if isinstance(v, list)},
                                          **{k: v for k, v in hsec.items()
                                             if not isinstance(v, list)})
        lsec = get("loss")
        stft_kw = {k: lsec[k] for k in ("fft_sizes", "n_mels", "sample_rate") if k in lsec}
        weight_kw = {k: lsec[k] for k in ("p", "anneal_epochs") if k in lsec}
        loss = dsp.LossConfig(
            **{k: lsec[k] for k in ("lambda_t", "lambda_f", "epsilon") if k in lsec},
            stft=dsp.StftConfig(**stft_kw), weighting=dsp.FreqWeighting(**weight_kw))
        asec = get("augment")
        augment = AugmentationConfig(
            crop_length=hyper.input_len,
            dequantize_bits=asec.get("dequantize_bits", 16),
            phase_mangle_enabled=asec.get("phase_mangle", False),
            allpass_coeff_range=tuple(asec.get("allpass_coeff_range", (-0.5, 0.5))),
        )
        tsec = dict(get("train"))
        sched_kw = {k: tsec.pop(k) for k in ("pct_warmup", "div_initial", "div_final") if k in tsec}
        tcfg = TrainConfig(schedule=OneCycle(**sched_kw), loss=loss, augment=augment,
                                 **tsec)
        fcfg = FitConfig(loss=loss, **get("fit"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    dsec = get("data")
    return RunConfig(target, hyper, init, tcfg, fcfg, loss, augment,
                     dsec.get("paths", []), dsec.get("output_dir"))


def load_config(path=None) -> RunConfig:
    """Parse a TOML file; ``None`` gives the all-defaults configuration."""
    if path is None:
        return build({})
    try:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return build(raw)
