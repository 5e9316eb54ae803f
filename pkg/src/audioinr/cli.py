"""Command-line entry point: ``audioinr <command> ...``.

Exit codes: 0 success, 1 I/O, 2 configuration or usage, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import hypernet, inr, metrics, train
from .checkpoint import INRModel, read_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, DivergenceError, FormatError, UndefinedMetricError
from .hypernet import HypernetworkState
from .signal import AudioClip, load_wav, make_grid, save_wav

log = logging.getLogger("audioinr")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _wav_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")


def _read_input(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return load_wav(path)


def _out_paths(out):
    """Checkpoint path plus sibling artifact paths; bare directories get ``inr.hsnd``."""
    out = Path(out)
    if out.suffix == "" or out.is_dir():
        out = out / "inr.hsnd"
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    return out, Path(f"{stem}.history.csv"), Path(f"{stem}.recon.wav"), Path(f"{stem}.metrics.csv")


def cmd_fit_inr(args):
    cfg = load_config(args.config)
    fit_cfg = cfg.fit if args.seed is None else replace(cfg.fit, seed=args.seed)
    clip = _read_input(args.input)
    ckpt_path, hist_path, wav_path, metrics_path = _out_paths(args.out)
    result = train.fit_individual_inr(clip, cfg.target, fit_cfg)
    model = INRModel(cfg.target, result.theta, result.shared, len(clip), clip.sample_rate)
    save_checkpoint(model, ckpt_path)
    rows = [{"epoch": i, "step": i + 1, "lr": fit_cfg.lr,
             "loss_total": v, "loss_t": v if fit_cfg.objective == "mse" else float("nan"),
             "loss_f": 0.0 if fit_cfg.objective == "mse" else float("nan")}
            for i, v in enumerate(result.loss_curve)]
    train.write_history(hist_path, rows)
    recon = inr.forward(cfg.target, result.theta, result.shared, make_grid(len(clip)))
    save_wav(AudioClip(np.clip(recon, -1, 1), clip.sample_rate), wav_path)
    _write_metrics(metrics_path, Path(args.input).stem, clip.samples, recon)
    log.info("wrote %s", ckpt_path)
    return EXIT_OK


def _load_dataset(data_dir, input_len):
    files = _wav_files(data_dir)
    if not files:
        raise ConfigError(f"no .wav files in {data_dir}")
    clips = [load_wav(p) for p in files]
    short = [p.name for p, c in zip(files, clips) if len(c) < input_len]
    if short:
        raise ConfigError(f"clips shorter than input_len={input_len}: {', '.join(short[:5])}")
    return files, clips


def cmd_train_hyper(args):
    cfg = load_config(args.config)
    tcfg = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = opt_state = None
    if args.resume:
        ck = read_checkpoint(args.resume)
        if not isinstance(ck.model, HypernetworkState):
            raise UsageError("--resume needs a hypernetwork checkpoint")
        state = ck.model
        opt_state = (ck.extra, ck.meta.get("adam_t", 0)) if ck.extra else None
    spec = state.spec if state is not None else cfg.hyper
    _, clips = _load_dataset(args.data, spec.input_len)
    result = train.train_hypernetwork(clips, spec, tcfg, state=state, init=cfg.init,
                                      out_dir=out, optimizer_state=opt_state)
    hist = out / "history.csv"
    train.write_history(hist, result.history, append=bool(args.resume) and hist.exists())
    save_checkpoint(result.state, out / "final.hsnd", extra=result.optimizer.state_dict(),
                    extra_meta={"adam_t": result.optimizer.t})
    return EXIT_OK


def cmd_render(args):
    ck = read_checkpoint(args.checkpoint)
    model = ck.model
    if isinstance(model, HypernetworkState):
        if args.input is None:
            raise UsageError("--input is required for a hypernetwork checkpoint")
        clip = _read_input(args.input)
        n_in = model.spec.input_len
        if len(clip) < n_in:
            raise ConfigError(f"input has {len(clip)} samples, hypernetwork needs {n_in}")
        theta = hypernet.generate(model, clip.samples[:n_in])
        target, shared, n_train, sr = model.spec.target, model.shared, n_in, clip.sample_rate
    else:
        if args.input is not None:
            raise UsageError("--input is not accepted for an individual INR checkpoint")
        theta, target, shared = model.theta, model.spec, model.shared
        n_train, sr = model.n_samples, model.sample_rate
    y = inr.render(target, theta, shared or None, args.samples)
    rate = max(1, round(sr * args.samples / n_train)) if n_train else sr
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_wav(AudioClip(np.clip(y, -1.0, 1.0), rate), out)
    return EXIT_OK


def _write_metrics(path, clip_id, ref, est):
    vals = {"mse": metrics.mse(ref, est), "lsd": None, "si_snr": None}
    if len(ref) >= metrics.LSD_FFT:
        vals["lsd"] = metrics.lsd(ref, est)
    try:
        vals["si_snr"] = metrics.si_snr(ref, est)
    except UndefinedMetricError as exc:
        log.warning("%s: %s", clip_id, exc)
    metrics.write_metrics_csv(path, [(clip_id, vals)])


def cmd_eval(args):
    ref = _read_input(args.ref)
    est = _read_input(args.est)
    if len(ref) != len(est):
        raise ConfigError(f"length mismatch: ref has {len(ref)} samples, est has {len(est)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_metrics(out, args.clip_id or Path(args.est).stem, ref.samples, est.samples)
    return EXIT_OK


def cmd_export_weights(args):
    ck = read_checkpoint(args.checkpoint)
    if not isinstance(ck.model, HypernetworkState):
        raise UsageError("export-weights needs a hypernetwork checkpoint")
    state = ck.model
    files, clips = _load_dataset(args.data, state.spec.input_len)
    x = np.stack([c.samples[: state.spec.input_len] for c in clips])
    theta = np.concatenate([hypernet.generate(state, x[i : i + 16]) for i in range(0, len(x), 16)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inr.export_weights_csv(out, theta, state.spec.target, [p.name for p in files])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="audioinr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit-inr", help="fit one INR directly to a WAV file")
    f.add_argument("--input", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit_inr)

    t = sub.add_parser("train-hyper", help="train a hypernetwork on a directory of WAV files")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="hypernetwork checkpoint to continue from")
    t.set_defaults(func=cmd_train_hyper)

    r = sub.add_parser("render", help="render an INR at any number of samples")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input")
    r.add_argument("--samples", type=int, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="MSE / LSD / SI-SNR of an estimate against a reference")
    e.add_argument("--ref", required=True)
    e.add_argument("--est", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--clip-id")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-weights", help="write generated INR weights as a CSV matrix")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_weights)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
