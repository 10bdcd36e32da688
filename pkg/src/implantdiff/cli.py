"""Command line entry point: synth, train, complete, implant, eval.

Exit status is 0 on success, 1 for user errors (bad flags, missing files,
shape mismatches, diverged training) and 2 for internal invariant violations.
Every command writes a ``manifest.json`` recording its flags, seeds and the
SHA-256 of each file it produced.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .denoiser import DenoiserConfig, TrainConfig, TrainingDiverged, fit, init_params, load_params, save_params
from .diffusion import PAPER_BETA_END, PAPER_BETA_START, PAPER_T, make_schedule
from .implant import ensemble_stats, generate_implant
from .metrics import DEFAULT_TOLERANCE_MM, MetricError, evaluate
from .pipeline import TOY_M, TOY_N, TOY_RADII, complete_volume, stack_pairs, training_pair
from .surface import write_cloud_ply
from .synthetic import PhantomSpec, make_dataset
from .voxel import VolumeError, load_volume, save_volume

log = logging.getLogger("implantdiff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, files: Sequence[Path], extra=None) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "tool": "implantdiff",
        "version": __version__,
        "command": command,
        "flags": flags,
        "artifacts": {str(Path(f).relative_to(out_dir)): _sha256(Path(f)) for f in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def _volume_files(header: Path) -> list[Path]:
    return [header, header.with_suffix(".raw")]


def _positive(kind):
    def parse(text: str):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _out_dir(args) -> Path:
    out = Path(args.output)
    inputs = args.input if isinstance(args.input, list) else [args.input]
    if any(Path(i).resolve() == out.resolve() for i in inputs if i):
        raise UsageError("input and output paths must differ")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    base = PhantomSpec(dims=(args.grid,) * 3, spacing=(args.spacing,) * 3)
    phantoms, manifest = make_dataset(args.count, base, args.seed)
    files: list[Path] = []
    for i, ph in enumerate(phantoms):
        case = out / f"case_{i:04d}"
        case.mkdir(exist_ok=True)
        for name, grid in (("complete", ph.complete), ("defective", ph.defective), ("implant", ph.implant)):
            files += _volume_files(save_volume(grid, case / name))
    _write_manifest(out, "synth", args, files, {"dataset": manifest})
    log.info("wrote %d phantoms to %s", len(phantoms), out)
    return 0


def _cases(root: Path) -> list[Path]:
    cases = sorted(p for p in root.iterdir() if p.is_dir() and (p / "defective.json").exists())
    if not cases:
        raise FileNotFoundError(f"no cases with defective/implant volumes under {root}")
    return cases


def cmd_train(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise FileNotFoundError(f"training directory not found: {root}")
    out = _out_dir(args)
    pairs = []
    for i, case in enumerate(_cases(root)):
        pairs.append(
            training_pair(
                load_volume(case / "defective"), load_volume(case / "implant"), args.points_n, args.points_m, args.seed + 2 * i
            )
        )
    sched = make_schedule(args.timesteps, args.beta_start, args.beta_end)
    cfg = DenoiserConfig(radii=tuple(args.radii), neighbors=tuple(args.neighbors), T=args.timesteps, seed=args.seed)
    tc = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        precision=args.precision,
        lr_schedule=args.lr_schedule,
    )
    params, history = fit(init_params(cfg), cfg, stack_pairs(pairs), tc, sched, args.seed)
    files = [out / "model.json", out / "model.bin"]
    save_params(params, cfg, out / "model", {"schedule": sched.to_dict(), "points": [args.points_n, args.points_m]})
    (out / "loss_history.json").write_text(json.dumps(history) + "\n")
    files.append(out / "loss_history.json")
    _write_manifest(out, "train", args, files, {"loss_first": history[0] if history else None, "loss_last": history[-1] if history else None})
    return 0


def _model_path(path: str) -> Path:
    p = Path(path)
    return p / "model" if p.is_dir() else p


def cmd_complete(args) -> int:
    s_d = load_volume(args.input)
    out = _out_dir(args)
    params, cfg, manifest = load_params(_model_path(args.model))
    sched_info = manifest.get("schedule", {})
    T = args.timesteps or sched_info.get("T", PAPER_T)
    sched = make_schedule(
        T,
        args.beta_start if args.beta_start is not None else sched_info.get("beta_start", PAPER_BETA_START),
        args.beta_end if args.beta_end is not None else sched_info.get("beta_end", PAPER_BETA_END),
    )
    if sched.T > cfg.T:
        raise UsageError(f"model was trained for T={cfg.T}, cannot sample with T={sched.T}")
    members, stats = complete_volume(
        s_d, params, cfg, sched, args.points_n, args.points_m, args.ensemble, args.seed, args.grid
    )
    files: list[Path] = []
    for i, member in enumerate(members):
        write_cloud_ply(member.cloud, out / f"member_{i:02d}_cloud.ply")
        files.append(out / f"member_{i:02d}_cloud.ply")
        files += _volume_files(save_volume(member.complete, out / f"member_{i:02d}_complete"))
        files += _volume_files(save_volume(member.implant, out / f"member_{i:02d}_implant"))
    files += _volume_files(save_volume(stats.mean, out / "mean"))
    files += _volume_files(save_volume(stats.variance, out / "variance"))
    files += _volume_files(save_volume(stats.mean_implant, out / "mean_implant"))
    _write_manifest(out, "complete", args, files, {"schedule": sched.to_dict(), "member_seeds": [args.seed + i for i in range(args.ensemble)]})
    return 0


def cmd_implant(args) -> int:
    s_d = load_volume(args.defective)
    out = _out_dir(args)
    implants = [generate_implant(load_volume(p), s_d) for p in args.input]
    files: list[Path] = []
    for i, imp in enumerate(implants):
        files += _volume_files(save_volume(imp, out / f"implant_{i:02d}"))
    stats = ensemble_stats(implants)
    files += _volume_files(save_volume(stats.mean, out / "mean"))
    files += _volume_files(save_volume(stats.variance, out / "variance"))
    files += _volume_files(save_volume(stats.mean_implant, out / "mean_implant"))
    _write_manifest(out, "implant", args, files)
    return 0


def cmd_eval(args) -> int:
    pred = load_volume(args.input)
    gt = load_volume(args.reference)
    report = evaluate(pred, gt, args.tolerance_mm).to_dict()
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        out = _out_dir(args)
        (out / "report.json").write_text(text)
        _write_manifest(out, "eval", args, [out / "report.json"], {"report": report})
    sys.stdout.write(text)
    return 0


def _schedule_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    p.add_argument("--timesteps", type=_positive(int), default=PAPER_T if defaults else None)
    p.add_argument("--beta-start", type=_positive(float), default=PAPER_BETA_START if defaults else None)
    p.add_argument("--beta-end", type=_positive(float), default=PAPER_BETA_END if defaults else None)


def _point_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--points-n", type=_positive(int), default=TOY_N, help="condition points")
    p.add_argument("--points-m", type=_positive(int), default=TOY_M, help="generated points")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="implantdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic defective shells")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=_positive(int), default=200)
    p.add_argument("--grid", type=_positive(int), default=64)
    p.add_argument("--spacing", type=_positive(float), default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the noise predictor on a synth directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _point_flags(p)
    _schedule_flags(p, True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=_positive(int), default=8)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--precision", choices=("float64", "float32"), default="float64")
    p.add_argument("--radii", type=_positive(float), nargs=2, default=list(TOY_RADII))
    p.add_argument("--neighbors", type=_positive(int), nargs=2, default=[32, 32])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", help="complete a defective volume")
    p.add_argument("--input", required=True, help="defective volume")
    p.add_argument("--output", required=True)
    p.add_argument("--model", required=True)
    _point_flags(p)
    _schedule_flags(p, False)
    p.add_argument("--ensemble", type=_positive(int), default=1)
    p.add_argument("--grid", type=_positive(int), default=None, help="Poisson grid resolution")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("implant", help="implants and ensemble maps from completed volumes")
    p.add_argument("--input", required=True, nargs="+", help="completed volumes")
    p.add_argument("--defective", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_implant)

    p = sub.add_parser("eval", help="Dice, boundary Dice and HD95 of a prediction")
    p.add_argument("--input", required=True, help="predicted volume")
    p.add_argument("--reference", required=True, help="ground-truth volume")
    p.add_argument("--tolerance-mm", type=_positive(float), default=DEFAULT_TOLERANCE_MM)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"implantdiff: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, VolumeError, MetricError, TrainingDiverged, ValueError) as exc:
        print(f"implantdiff: error: {exc}", file=sys.stderr)
        return 1
    except (AssertionError, FloatingPointError) as exc:
        print(f"implantdiff: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
