"""Command-line orchestration for the whole pipeline.

Subcommands:

    synth        generate deterministic case bundles plus a manifest
    train-seg    stage 1 -> pair mining -> stage 2 -> stage 3, with report
    train-agent  PPO training of the navigation policy
    detect       end-to-end detection with the confirm-all baseline
    report       merge metrics files into one CSV and markdown table

Every command takes ``--config PATH --seed N --out DIR``. Seed precedence
is ``--seed``, then the config's ``seed``, then the ``ARIADNE_SEED``
environment variable, then 0. Each command echoes the fully resolved
configuration to ``<out>/resolved_config.json``; reruns with the same
config and seed produce byte-identical outputs.

Metrics JSON schema: a flat ``{metric name: float}`` map plus a ``meta``
object carrying ``seed``, ``config_hash``, ``version``, and ``run_id``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_run_config, write_resolved
from .ppo_trainer import evaluate_agent, prepare_case, train_agent
from .pref_align import (
    PixelPolicy,
    mine_pairs,
    new_pixel_policy,
    predict_mask,
    soft_dice_loss,
    stage1_train,
    stage2_train,
    stage3_hsft,
)
from .raster import MaskFormatError
from .seeding import derive_int
from .seg_metrics import cl_dice, pixel_metrics
from .steno_env import run_episode, state_dim, episode_trace_jsonl
from .synth_angio import DegradeError, GenerationError, generate_case, load_case, save_case
from .tiny_nn import NumericsError, clone_params, load_checkpoint, save_checkpoint
from .topology import betti0


class DataError(RuntimeError):
    """Missing or malformed inputs named by path."""


EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve_seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("ARIADNE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"ARIADNE_SEED is not an integer: {env!r}") from exc
    return 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_bundles(cases_dir) -> list:
    root = Path(cases_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise DataError(f"no manifest.json under {root}")
    with open(manifest) as fh:
        entries = json.load(fh)["cases"]
    if not entries:
        raise DataError(f"manifest at {root} lists no cases")
    try:
        return [load_case(root / e["dir"]) for e in entries]
    except (FileNotFoundError, MaskFormatError, KeyError) as exc:
        raise DataError(f"broken case bundle under {root}: {exc}") from exc


def _metrics_payload(metrics: dict, seed: int, resolved: dict, run_id: str) -> dict:
    flat = {k: float(v) for k, v in metrics.items()}
    flat["meta"] = {
        "seed": seed,
        "config_hash": config_hash(resolved),
        "version": __version__,
        "run_id": run_id,
    }
    return flat


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    resolved = write_resolved(cfg, seed, out)
    n_cases = args.n_cases if args.n_cases is not None else cfg.synth.n_cases
    entries = []
    for i in range(n_cases):
        case_seed = derive_int(seed, f"case-{i}")
        case = generate_case(cfg.synth.config, case_seed)
        name = f"case_{i:04d}"
        save_case(case, out / name, cfg.synth.config)
        entries.append({"dir": name, "seed": case_seed})
    _write_json(out / "manifest.json", {
        "cases": entries,
        "n_cases": n_cases,
        "seed": seed,
        "config_hash": config_hash(resolved),
    })
    print(f"wrote {n_cases} case bundles to {out}")
    return 0


def _holdout_split(cases, every: int):
    train = [c for i, c in enumerate(cases) if i % every != every - 1]
    held = [c for i, c in enumerate(cases) if i % every == every - 1]
    return (train, held) if train else (cases, [])


def _seg_scores(policy: PixelPolicy, cases) -> dict:
    if not cases:
        return {"dice": float("nan"), "cl_dice": float("nan")}
    dices, cds = [], []
    for case in cases:
        pred = predict_mask(policy, case.image)
        dices.append(pixel_metrics(pred, case.gt_mask)["dice"])
        cds.append(cl_dice(pred, case.gt_mask))
    return {"dice": float(np.mean(dices)), "cl_dice": float(np.mean(cds))}


def cmd_train_seg(args) -> int:
    cfg = load_run_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    resolved = write_resolved(cfg, seed, out)
    cases = _load_bundles(args.cases)
    train, held = _holdout_split(cases, cfg.stages.holdout_every)

    policy = new_pixel_policy(
        cfg.policy.patch_radius, cfg.policy.hidden, seed=derive_int(seed, "seg-policy-init")
    )
    meta = {"patch_radius": cfg.policy.patch_radius, "hidden": list(cfg.policy.hidden)}
    report: dict = {"stages": ["stage1", "stage2", "stage3"]}

    loss_start = float(np.mean([soft_dice_loss(policy, c.image, c.gt_mask) for c in train]))
    s1 = stage1_train(policy, train, cfg.stages.stage1)
    loss_end = float(np.mean([soft_dice_loss(s1, c.image, c.gt_mask) for c in train]))
    save_checkpoint(s1.net, out / "stage1.json", meta)
    report["stage1"] = {
        "train_loss_start": loss_start,
        "train_loss_end": loss_end,
        "holdout": _seg_scores(s1, held),
    }

    pairs = mine_pairs(s1, train, seed=derive_int(seed, "mine"))
    ref = PixelPolicy(s1.patch_radius, clone_params(s1.net))
    s2 = stage2_train(s1, ref, pairs, cfg.stages.stage2)
    save_checkpoint(s2.net, out / "stage2.json", meta)
    report["stage2"] = {"pair_count": len(pairs), "holdout": _seg_scores(s2, held)}

    s3, hsft_report = stage3_hsft(s2, train, cfg.stages.stage3)
    save_checkpoint(s3.net, out / "stage3.json", meta)
    report["stage3"] = {**hsft_report, "holdout": _seg_scores(s3, held)}

    report["meta"] = {"seed": seed, "config_hash": config_hash(resolved), "version": __version__}
    _write_json(out / "stage_report.json", report)
    print(f"stage training done; report at {out / 'stage_report.json'}")
    return 0


def cmd_train_agent(args) -> int:
    cfg = load_run_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    resolved = write_resolved(cfg, seed, out)
    cases = _load_bundles(args.cases)
    ppo = dataclasses.replace(cfg.ppo, seed=seed)
    try:
        policy, value_net, curve = train_agent(cases, ppo, cfg.env)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(policy, out / "agent.json", {"window": cfg.env.window})
    save_checkpoint(value_net, out / "value.json", {"window": cfg.env.window})
    with open(out / "training_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_reward", "clip_fraction", "entropy"])
        for row in curve:
            writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
    meta = {"seed": seed, "config_hash": config_hash(resolved), "version": __version__}
    _write_json(out / "train_agent_meta.json", meta)
    print(f"agent trained for {ppo.steps} steps; checkpoint at {out / 'agent.json'}")
    return 0


def cmd_detect(args) -> int:
    cfg = load_run_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    resolved = write_resolved(cfg, seed, out)
    cases = _load_bundles(args.cases)
    try:
        policy, _meta = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    expected = state_dim(cfg.env.window)
    if policy.layer_sizes[0] != expected:
        raise DataError(
            f"checkpoint input dim {policy.layer_sizes[0]} != state dim {expected}"
        )
    report = evaluate_agent(policy, cases, cfg.env, tau_det=cfg.detect.tau_det)
    _write_json(out / "detections.json", {
        "per_case": report["per_case"],
        "n_images": report["n_images"],
    })
    metrics = {
        **{k: v for k, v in report["agent"].items()},
        **{f"baseline_{k}": v for k, v in report["baseline"].items()},
    }
    _write_json(out / "metrics.json", _metrics_payload(metrics, seed, resolved, args.run_id))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for k in sorted(metrics):
            writer.writerow([k, f"{metrics[k]:.6f}"])
    if args.trace:
        with open(out / "traces.jsonl", "w") as fh:
            for case in cases:
                for spec in prepare_case(case, cfg.env):
                    result = run_episode(spec, policy, greedy=True)
                    fh.write(episode_trace_jsonl(spec, result))
    print(f"detection metrics at {out / 'metrics.json'}")
    return 0


def cmd_report(args) -> int:
    rows = []
    seen = set()
    for path in args.metrics:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed metrics file {path}: {exc}") from exc
        meta = payload.get("meta")
        if not isinstance(meta, dict) or "run_id" not in meta:
            raise DataError(f"metrics file {path} has no meta.run_id")
        run_id = meta["run_id"]
        if run_id in seen:
            raise DataError(f"conflicting run id {run_id!r} (duplicated in {path})")
        seen.add(run_id)
        for key, value in sorted(payload.items()):
            if key == "meta":
                continue
            rows.append((run_id, key, float(value)))
    out = _out_dir(args)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "metric", "value"])
        for run_id, metric, value in rows:
            writer.writerow([run_id, metric, f"{value:.6f}"])
    run_ids = sorted(seen)
    metrics = sorted({m for _, m, _ in rows})
    values = {(r, m): v for r, m, v in rows}
    lines = ["| metric | " + " | ".join(run_ids) + " |",
             "| --- | " + " | ".join("---" for _ in run_ids) + " |"]
    for m in metrics:
        cells = [f"{values[(r, m)]:.4f}" if (r, m) in values else "" for r in run_ids]
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    print(f"merged {len(args.metrics)} metrics files into {out / 'report.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="angionav",
        description="Synthetic angiogram pipeline: generation, staged "
        "segmentation training, RL stenosis detection, reporting.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cases=False, checkpoint=False):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        if cases:
            p.add_argument("--cases", required=True, help="directory with case bundles")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="agent checkpoint JSON")

    p = sub.add_parser("synth", help="generate synthetic case bundles")
    common(p)
    p.add_argument("--n-cases", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-seg", help="run the three segmentation stages")
    common(p, cases=True)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("train-agent", help="train the navigation agent with PPO")
    common(p, cases=True)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("detect", help="run end-to-end stenosis detection")
    common(p, cases=True, checkpoint=True)
    p.add_argument("--trace", action="store_true", help="write episode traces")
    p.add_argument("--run-id", default="run", help="run id stamped into metrics")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="merge metrics files into a table")
    p.add_argument("--out", required=True)
    p.add_argument("metrics", nargs="+", help="metrics JSON files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GenerationError, DegradeError, MaskFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
