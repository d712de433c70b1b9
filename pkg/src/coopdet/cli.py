"""Command line entry point: ``python -m coopdet <command> --config run.yaml --run-dir DIR``.

Commands
    gen-data            render the train and eval scenes to disk
    train               fit a model, write checkpoint.json and loss.csv
    eval                score a checkpoint, write report.csv / report.txt / detections.jsonl / omega.csv
    sweep-compression   retrain and evaluate once per (CCR, SCR) pair
    sweep-noise         evaluate one checkpoint under growing translation noise

Every command writes ``manifest.json`` in the run directory with the config
digest, the seeds and the files it produced.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig
from .geometry import FEATURE_STRIDE
from .metrics import EvalReport, reports_to_csv, reports_to_table
from .ndtensor import load_checkpoint, save_checkpoint
from .pipeline import (CooperativeDetector, EvalResult, evaluate, evaluation_scenes, train,
                       training_scenes)
from .scenario import Scene

# published numbers for the full-size system, shown for orientation only
REFERENCE_ROWS = (
    ("reference: full-size intermediate fusion", 15.61, 21.44),
)
REFERENCE_NOTE = ("reference rows come from full-size training on real data and are not "
                  "reproducible by this toy setup; they are annotations, not targets")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- run directory

def write_manifest(run_dir: Path, command: str, cfg: RunConfig, files: Sequence[str], **extra) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_digest": cfg.digest(),
        "seeds": {"model": cfg.seed, "train_scenes": [cfg.seed * 1000, cfg.seed * 1000 + cfg.n_train_scenes],
                  "eval_scenes": [cfg.eval_seed_offset + cfg.seed * 1000,
                                  cfg.eval_seed_offset + cfg.seed * 1000 + cfg.n_eval_scenes],
                  "noise": cfg.noise_seed},
        "files": sorted(files),
        **extra,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_scenes(directory: Path) -> list[Scene]:
    dirs = sorted(p for p in directory.iterdir() if (p / "labels.json").exists())
    return [Scene.load(d) for d in dirs]


def scenes_for(cfg: RunConfig, data: Path | None, split: str) -> list[Scene]:
    if data is not None:
        scenes = load_scenes(data / split)
    else:
        scenes = training_scenes(cfg) if split == "train" else evaluation_scenes(cfg)
    if not scenes:
        raise CliError(f"no {split} scenes" + (f" under {data / split}" if data else " (scene count is 0)"))
    return scenes


def load_model(cfg: RunConfig, checkpoint: Path) -> CooperativeDetector:
    model = CooperativeDetector(cfg)
    try:
        load_checkpoint(model, checkpoint)
    except ValueError as e:
        raise CliError(f"checkpoint {checkpoint} does not fit this config: {e}") from e
    return model


def detections_jsonl(result: EvalResult, scenes: Sequence[Scene]) -> str:
    lines = []
    for scene, dets in zip(scenes, result.detections):
        for box, score in dets:
            rec = {"frame_id": scene.frame_id, **box.to_json(), "score": float(score), "class": "Car"}
            lines.append(json.dumps(rec))
    return "\n".join(lines) + ("\n" if lines else "")


def omega_csv(result: EvalResult, scenes: Sequence[Scene]) -> str:
    lines = ["frame_id,w0,w1,w2,w3"]
    for scene, w in zip(scenes, result.omegas):
        if w is not None:
            lines.append(scene.frame_id + "," + ",".join(repr(float(v)) for v in w))
    return "\n".join(lines) + "\n"


def report_text(reports: Sequence[EvalReport]) -> str:
    ref = "\n".join(f"  {name:<42} AP_3D {a3:5.2f}  AP_BEV {ab:5.2f}  (not reproducible)"
                    for name, a3, ab in REFERENCE_ROWS)
    return reports_to_table(reports) + "\n\n" + REFERENCE_NOTE + ":\n" + ref + "\n"


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig, run_dir: Path) -> list[str]:
    files = []
    for split, scenes in (("train", training_scenes(cfg)), ("eval", evaluation_scenes(cfg))):
        for i, s in enumerate(scenes):
            sub = f"{split}/{i:05d}"
            s.save(run_dir / sub)
            files.append(sub)
    return files


def cmd_train(cfg: RunConfig, run_dir: Path, data: Path | None = None) -> list[str]:
    scenes = scenes_for(cfg, data, "train")
    model = CooperativeDetector(cfg)
    logbook = train(model, scenes)
    save_checkpoint(model, run_dir / "checkpoint.json")
    (run_dir / "loss.csv").write_text(logbook.to_csv())
    return ["checkpoint.json", "loss.csv"]


def cmd_eval(cfg: RunConfig, run_dir: Path, checkpoint: Path, data: Path | None = None,
             modes: Sequence[str] | None = None) -> list[str]:
    scenes = scenes_for(cfg, data, "eval")
    model = load_model(cfg, checkpoint)
    modes = list(modes or [cfg.fusion_mode])
    reports, files = [], []
    for mode in modes:
        res = evaluate(model, scenes, mode, label=mode)
        reports.append(res.report)
        suffix = "" if len(modes) == 1 else f"_{mode}"
        (run_dir / f"detections{suffix}.jsonl").write_text(detections_jsonl(res, scenes))
        files.append(f"detections{suffix}.jsonl")
        if any(w is not None for w in res.omegas):
            (run_dir / f"omega{suffix}.csv").write_text(omega_csv(res, scenes))
            files.append(f"omega{suffix}.csv")
    (run_dir / "report.csv").write_text(reports_to_csv(reports))
    (run_dir / "report.txt").write_text(report_text(reports))
    print(report_text(reports))
    return files + ["report.csv", "report.txt"]


def _valid_pair(cfg: RunConfig, ccr: int, scr: int) -> str | None:
    h, w = cfg.image_hw
    try:
        cfg.with_(ccr=ccr, scr=scr).compression.check(cfg.channels, h // FEATURE_STRIDE, w // FEATURE_STRIDE)
    except ValueError as e:
        return str(e)
    return None


def _compression_point(args: tuple[dict, int, int]) -> tuple[tuple[int, int], dict]:
    base, ccr, scr = args
    cfg = RunConfig.from_dict({**base, "ccr": ccr, "scr": scr, "use_fc": True})
    model = CooperativeDetector(cfg)
    train(model, training_scenes(cfg))
    rep = evaluate(model, evaluation_scenes(cfg), "intermediate").report
    return (ccr, scr), {"rate": ccr * scr, "ccr": ccr, "scr": scr, "AP_3D": rep.ap_3d["overall"],
                        "AP_BEV": rep.ap_bev["overall"], "AB": rep.average_byte}


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_sweep_compression(cfg: RunConfig, run_dir: Path, pairs: Sequence[tuple[int, int]] | None = None
                          ) -> list[str]:
    pairs = [tuple(p) for p in (pairs or cfg.compression_sweep)]
    jobs = []
    for ccr, scr in pairs:
        why = _valid_pair(cfg, ccr, scr)
        if why:
            warnings.warn(f"skipping compression pair ({ccr}, {scr}): {why}")
            continue
        jobs.append((cfg.to_dict(), ccr, scr))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_compression_point, jobs))
    else:
        results = [_compression_point(j) for j in jobs]
    rows = [r for _, r in sorted(results, key=lambda kv: (kv[0][0] * kv[0][1], kv[0]))]
    lines = ["rate,ccr,scr,AP_3D,AP_BEV,AB"]
    lines += [f"{r['rate']},{r['ccr']},{r['scr']},{_fmt(r['AP_3D'])},{_fmt(r['AP_BEV'])},{_fmt(r['AB'])}"
              for r in rows]
    (run_dir / "sweep_compression.csv").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return ["sweep_compression.csv"]


def trend_summary(levels: Sequence[float], aps: Sequence[float | None]) -> str:
    vals = [(t, a) for t, a in zip(levels, aps) if a is not None]
    if len(vals) < 2:
        return "trend: not enough points"
    steps = [b[1] - a[1] for a, b in zip(vals, vals[1:])]
    mono = all(d <= 0 for d in steps)
    first, last = vals[0], vals[-1]
    return (f"trend: {'monotone non-increasing' if mono else 'not monotone'}; "
            f"AP_3D {100 * first[1]:.2f} at T={first[0]:g} -> {100 * last[1]:.2f} at T={last[0]:g}")


def cmd_sweep_noise(cfg: RunConfig, run_dir: Path, checkpoint: Path, data: Path | None = None,
                    levels: Sequence[float] | None = None) -> list[str]:
    scenes = scenes_for(cfg, data, "eval")
    model = load_model(cfg, checkpoint)
    levels = list(levels if levels is not None else cfg.noise_levels)
    lines = ["T,AP_3D,AP_BEV"]
    ap3 = []
    for T in levels:
        rep = evaluate(model, scenes, noise_T=T, noise_seed=cfg.noise_seed).report
        ap3.append(rep.ap_3d["overall"])
        lines.append(f"{T!r},{_fmt(rep.ap_3d['overall'])},{_fmt(rep.ap_bev['overall'])}")
    summary = trend_summary(levels, ap3)
    (run_dir / "sweep_noise.csv").write_text("\n".join(lines) + "\n")
    (run_dir / "sweep_noise_summary.txt").write_text(summary + "\n")
    print("\n".join(lines))
    print(summary)
    return ["sweep_noise.csv", "sweep_noise_summary.txt"]


# ---------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopdet", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML run config (defaults if omitted)")
        sp.add_argument("--run-dir", type=Path, required=True)
        sp.add_argument("--seed", type=int, help="override the config seed")

    common(sub.add_parser("gen-data", help="render train/eval scenes"))
    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", type=Path, help="directory written by gen-data")
    sp.add_argument("--steps", type=int)
    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--data", type=Path)
    sp.add_argument("--mode", action="append", choices=["intermediate", "only-veh", "only-inf"],
                    help="repeatable; defaults to the config's fusion_mode")
    sp = sub.add_parser("sweep-compression", help="retrain per (CCR, SCR) pair")
    common(sp)
    sp.add_argument("--pair", action="append", nargs=2, type=int, metavar=("CCR", "SCR"))
    sp = sub.add_parser("sweep-noise", help="evaluate a checkpoint under translation noise")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--data", type=Path)
    sp.add_argument("--levels", type=float, nargs="+")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if getattr(args, "steps", None) is not None:
            changes["train_steps"] = args.steps
        if changes:
            cfg = RunConfig.from_dict({**cfg.to_dict(), **changes})
        run_dir = args.run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.yaml")
        if args.command == "gen-data":
            files = cmd_gen_data(cfg, run_dir)
        elif args.command == "train":
            files = cmd_train(cfg, run_dir, args.data)
        elif args.command == "eval":
            files = cmd_eval(cfg, run_dir, args.checkpoint, args.data, args.mode)
        elif args.command == "sweep-compression":
            files = cmd_sweep_compression(cfg, run_dir, args.pair)
        else:
            files = cmd_sweep_noise(cfg, run_dir, args.checkpoint, args.data, args.levels)
        extra = {"checkpoint": str(args.checkpoint)} if getattr(args, "checkpoint", None) else {}
        write_manifest(run_dir, args.command, cfg, files + ["config.yaml"], argv=list(argv or sys.argv[1:]),
                       **extra)
    except (CliError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
