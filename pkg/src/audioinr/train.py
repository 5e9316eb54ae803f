"""Optimization loops: per-clip INR fitting and hypernetwork training."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import dsp, hypernet, inr, metrics
from .checkpoint import save_checkpoint
from .errors import DivergenceError, ShapeError
from .signal import AudioClip, AugmentationConfig, CoordinateGrid, augment, make_grid

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "step", "lr", "loss_total", "loss_t", "loss_f")
DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class OneCycle:
    pct_warmup: float = 0.3
    div_initial: float = 25.0
    div_final: float = 1e4


def one_cycle_lr(step, total_steps, max_lr, schedule: OneCycle = OneCycle()):
    """Linear warm-up from max_lr/div_initial to max_lr, then cosine decay to max_lr/div_final.

    The peak sits at step ``round(pct_warmup * (total_steps - 1))``; the last
    step returns exactly the final value.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    last = total_steps - 1
    if last == 0:
        return max_lr
    initial = max_lr / schedule.div_initial
    final = max_lr / schedule.div_final
    peak = min(max(1, round(schedule.pct_warmup * last)), last)
    if step == peak:
        return max_lr
    if step < peak:
        return initial + (max_lr - initial) * step / peak
    progress = (step - peak) / (last - peak)
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam with optional decoupled weight decay (AdamW when weight_decay > 0)."""

    def __init__(self, params: dc.ParamStore, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in self.params.names():
            p = self.params[name]
            g = self.params.grad(name)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p = p * (1.0 - lr * self.weight_decay)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            self.params[name] = (p - lr * update).astype(p.dtype, copy=False)

    def state_dict(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, data, t):
        for k in self.m:
            if f"adam.m.{k}" in data:
                self.m[k] = np.asarray(data[f"adam.m.{k}"]).copy()
                self.v[k] = np.asarray(data[f"adam.v.{k}"]).copy()
        self.t = int(t)


# ---------------------------------------------------------------------------
# individual INR fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    steps: int = 5000
    lr: float = 1e-4
    seed: int = 0
    objective: str = "mse"
    loss: dsp.LossConfig = field(default_factory=dsp.LossConfig)
    schedule: OneCycle | None = None

    def __post_init__(self):
        if self.objective not in ("mse", "total"):
            raise ValueError(f"objective must be 'mse' or 'total', got {self.objective!r}")
        if self.steps < 1 or self.lr <= 0:
            raise ValueError("steps and lr must be positive")


@dataclass
class FitResult:
    theta: np.ndarray
    shared: dict | None
    loss_curve: list
    metrics: metrics.MetricsReport | None = None
    history: list = field(default_factory=list)


def _objective(x, out, cfg: FitConfig):
    if cfg.objective == "mse":
        d = out - x
        return float(np.mean(d.astype(np.float64) ** 2)), (2.0 / d.size) * d
    res = dsp.compute_loss(x, out, cfg.loss)
    return res.total, res.grad


def fit_individual_inr(clip: AudioClip, spec: inr.TargetNetworkSpec, cfg: FitConfig = FitConfig(),
                       dtype=np.float32, coords=None) -> FitResult:
    """Optimize one INR's weights directly against ``clip``.

    ``coords`` overrides the default evenly spaced grid; it must hold one
    coordinate per sample.
    """
    x = np.asarray(clip.samples, dtype=dtype)
    grid = make_grid(len(x)) if coords is None else CoordinateGrid(np.asarray(coords, np.float64))
    if grid.count != len(x):
        raise ShapeError(f"{grid.count} coordinates for {len(x)} samples")
    params = dc.ParamStore({"theta": inr.init_weights(spec, seed=cfg.seed, dtype=dtype)})
    for name, value in inr.init_shared(spec, seed=cfg.seed + 1, dtype=dtype).items():
        params.add(name, value)
    opt = Adam(params)
    curve = []
    for step in range(cfg.steps):
        shared = {k: params[k] for k in params.names() if k != "theta"}
        out, cache = inr.forward(spec, params["theta"], shared, grid, return_cache=True)
        value, g_out = _objective(x, out, cfg)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", step=step)
        curve.append(value)
        g_theta, g_shared = inr.backward(spec, cache, g_out)
        params.set_grad("theta", g_theta)
        for k, g in g_shared.items():
            params.set_grad(k, g)
        lr = cfg.lr if cfg.schedule is None else one_cycle_lr(step, cfg.steps, cfg.lr, cfg.schedule)
        opt.step(lr)
    shared = {k: params[k] for k in params.names() if k != "theta"} or None
    recon = inr.forward(spec, params["theta"], shared, grid)
    report = metrics.report(clip.samples, recon) if len(x) >= metrics.LSD_FFT else None
    return FitResult(params["theta"], shared, curve, report)


# ---------------------------------------------------------------------------
# hypernetwork training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 2500
    samples_per_epoch: int = 10000
    max_lr: float = 1e-4
    schedule: OneCycle = field(default_factory=OneCycle)
    seed: int = 0
    loss: dsp.LossConfig = field(default_factory=dsp.LossConfig)
    weight_decay: float = 0.01
    lr_scale: float = 1.0
    augment: AugmentationConfig | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.epochs < 1 or self.samples_per_epoch < 1:
            raise ValueError("epochs and samples_per_epoch must be positive")

    @property
    def steps_per_epoch(self):
        return -(-self.samples_per_epoch // self.batch_size)

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch


@dataclass
class TrainResult:
    state: hypernet.HypernetworkState
    history: list
    optimizer: Adam


def batch_plan(n_clips, cfg: TrainConfig, epoch):
    """Clip indices and augmentation seeds for every step of one epoch.

    Depends only on (seed, epoch), so any pipeline that consumes the plan
    sees the same batches regardless of scheduling.
    """
    rng = np.random.default_rng([cfg.seed, epoch])
    steps = []
    remaining = cfg.samples_per_epoch
    for _ in range(cfg.steps_per_epoch):
        size = min(cfg.batch_size, remaining)
        remaining -= size
        idx = rng.integers(0, n_clips, size)
        seeds = rng.integers(0, 2**63 - 1, size)
        steps.append((idx, seeds))
    return steps


def assemble_batch(dataset, idx, seeds, aug: AugmentationConfig, dtype):
    return np.stack([augment(dataset[i], aug, int(s)).samples for i, s in zip(idx, seeds)]
                    ).astype(dtype)


def hyper_loss_and_grads(state: hypernet.HypernetworkState, batch, loss_cfg, epoch):
    """One forward/backward pass; fills ``state.params`` gradients."""
    spec = state.spec
    theta, gcache = hypernet.generate(state, batch, return_cache=True)
    out, tcache = inr.forward(spec.target, theta, state.shared, make_grid(spec.input_len),
                              return_cache=True)
    res = dsp.compute_loss(batch, out, loss_cfg, epoch)
    g_theta, g_shared = inr.backward(spec.target, tcache, res.grad)
    grads = hypernet.generate_backward(state, gcache, g_theta)
    grads.update(g_shared)
    for name in state.params.names():
        state.params.set_grad(name, grads[name])
    return res


def train_hypernetwork(dataset, hspec: hypernet.HypernetworkSpec = None,
                       cfg: TrainConfig = TrainConfig(), state=None, init="auto",
                       out_dir=None, optimizer_state=None) -> TrainResult:
    """Train a hypernetwork on a list of AudioClips.

    ``state`` resumes from an existing hypernetwork (its epoch counter is
    honoured); otherwise a fresh one is built and initialized according to
    ``init`` ("auto" picks the scheme matching the target kind, "default"
    keeps plain fan-in initialization).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if state is None:
        state = hypernet.build_state(hspec, seed=cfg.seed)
        if init == "auto":
            init = state.spec.target.kind
        if init == "fmlp":
            hypernet.init_for_fmlp(state, cfg.seed)
        elif init == "siren":
            hypernet.init_for_siren(state, cfg.seed)
        elif init != "default":
            raise ValueError(f"unknown init {init!r}")
    spec = state.spec
    short = [i for i, c in enumerate(dataset) if len(c) < spec.input_len]
    if short:
        raise ValueError(f"clips {short[:5]} are shorter than input_len={spec.input_len}")
    aug = cfg.augment or AugmentationConfig(crop_length=spec.input_len)
    if aug.crop_length != spec.input_len:
        aug = replace(aug, crop_length=spec.input_len)
    dtype = state.params["head.0.W"].dtype
    opt = Adam(state.params, weight_decay=cfg.weight_decay)
    if optimizer_state is not None:
        opt.load_state_dict(*optimizer_state)
    max_lr = cfg.max_lr * cfg.lr_scale
    total = cfg.total_steps
    history = []
    initial_loss = None
    last_good = state.params.copy()
    start_epoch = state.epoch
    for epoch in range(start_epoch, cfg.epochs):
        sums = np.zeros(3)
        count = 0
        for k, (idx, seeds) in enumerate(batch_plan(len(dataset), cfg, epoch)):
            step = epoch * cfg.steps_per_epoch + k
            batch = assemble_batch(dataset, idx, seeds, aug, dtype)
            res = hyper_loss_and_grads(state, batch, cfg.loss, epoch)
            if initial_loss is None:
                initial_loss = res.total
            if not np.isfinite(res.total) or res.total > DIVERGENCE_FACTOR * initial_loss:
                state.params = last_good
                state.epoch = epoch
                if out_dir is not None:
                    save_checkpoint(state, Path(out_dir) / "last_good.hsnd")
                raise DivergenceError(f"loss {res.total!r} diverged at step {step}", step=step)
            last_good = state.params.copy()
            opt.step(one_cycle_lr(min(step, total - 1), total, max_lr, cfg.schedule))
            sums += (res.total, res.time, res.freq)
            count += 1
        lr = one_cycle_lr(min(step, total - 1), total, max_lr, cfg.schedule)
        mean = sums / count
        history.append({"epoch": epoch, "step": step + 1, "lr": lr, "loss_total": mean[0],
                        "loss_t": mean[1], "loss_f": mean[2]})
        state.epoch = epoch + 1
        log.debug("epoch %d loss %.5f", epoch, mean[0])
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(state, Path(out_dir) / f"epoch{epoch + 1:05d}.hsnd",
                            extra=opt.state_dict(), extra_meta={"adam_t": opt.t})
    return TrainResult(state, history, opt)


def write_history(path, history, append=False):
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], row["step"], repr(float(row["lr"])),
                        repr(float(row["loss_total"])), repr(float(row["loss_t"])),
                        repr(float(row["loss_f"]))])


def evaluate(state: hypernet.HypernetworkState, dataset, loss_cfg=None, epoch=0, batch_size=16):
    """Loss and metrics of the hypernetwork's reconstructions, without augmentation."""
    spec = state.spec
    loss_cfg = loss_cfg or dsp.LossConfig()
    x = np.stack([c.samples[: spec.input_len] for c in dataset])
    recon = []
    for i in range(0, len(x), batch_size):
        theta = hypernet.generate(state, x[i : i + batch_size])
        recon.append(inr.forward(spec.target, theta, state.shared, make_grid(spec.input_len)))
    recon = np.concatenate(recon).astype(np.float64)
    loss = dsp.compute_loss(x, recon, loss_cfg, epoch).total
    return loss, recon
