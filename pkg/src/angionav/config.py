"""Run configuration: strict JSON schema over the module dataclasses.

A run config is one JSON document with optional sections; every section
maps onto a frozen dataclass, unknown keys are rejected, and the fully
resolved configuration (defaults included) is echoed to
``resolved_config.json`` next to every command's outputs so a run can be
reproduced from its artifacts alone.

Sections and defaults:

    seed      int, lowest-precedence default 0
    synth     SynthConfig fields plus n_cases
    policy    patch_radius, hidden (segmentation policy architecture)
    stages    stage1 {lr, epochs} / stage2 {lr, beta, epochs}
              / stage3 {lam, tau_hard, lr, epochs} / holdout_every
    ppo       PpoConfig fields (seed comes from the run seed)
    env       PipelineConfig fields (candidate generation + episode params)
    detect    tau_det
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .ppo_trainer import PipelineConfig, PpoConfig
from .pref_align import Stage1Config, Stage2Config, Stage3Config
from .synth_angio import SynthConfig


class ConfigError(ValueError):
    """Invalid run configuration (unknown keys, bad types, bad values)."""


@dataclass(frozen=True)
class PolicySpec:
    patch_radius: int = 2
    hidden: tuple[int, ...] = (32,)


@dataclass(frozen=True)
class StagesConfig:
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    stage3: Stage3Config = Stage3Config()
    holdout_every: int = 5  # every k-th case held out for stage reports


@dataclass(frozen=True)
class SynthSection:
    config: SynthConfig = SynthConfig()
    n_cases: int = 20


@dataclass(frozen=True)
class DetectConfig:
    tau_det: float = 75.0


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    synth: SynthSection = SynthSection()
    policy: PolicySpec = PolicySpec()
    stages: StagesConfig = StagesConfig()
    ppo: PpoConfig = PpoConfig()
    env: PipelineConfig = PipelineConfig()
    detect: DetectConfig = DetectConfig()


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if f.type in ("tuple[int, ...]",) or name in ("hidden", "policy_hidden", "value_hidden"):
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise ConfigError(f"{where}.{name}: expected a list of ints")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    known = {"seed", "synth", "policy", "stages", "ppo", "env", "detect"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")

    synth_doc = dict(doc.get("synth", {}))
    n_cases = synth_doc.pop("n_cases", 20)
    if not isinstance(n_cases, int) or n_cases < 0:
        raise ConfigError("synth.n_cases: expected an integer >= 0")
    synth = SynthSection(config=_build(SynthConfig, synth_doc, "synth"), n_cases=n_cases)

    stages_doc = dict(doc.get("stages", {}))
    stage_kwargs = {}
    for name, cls in (("stage1", Stage1Config), ("stage2", Stage2Config), ("stage3", Stage3Config)):
        if name in stages_doc:
            stage_kwargs[name] = _build(cls, stages_doc.pop(name), f"stages.{name}")
    holdout_every = stages_doc.pop("holdout_every", 5)
    if stages_doc:
        raise ConfigError(f"stages: unknown keys {sorted(stages_doc)}")
    if not isinstance(holdout_every, int) or holdout_every < 2:
        raise ConfigError("stages.holdout_every: expected an integer >= 2")
    stages = StagesConfig(holdout_every=holdout_every, **stage_kwargs)

    return RunConfig(
        seed=seed,
        synth=synth,
        policy=_build(PolicySpec, doc.get("policy", {}), "policy"),
        stages=stages,
        ppo=_build(PpoConfig, doc.get("ppo", {}), "ppo"),
        env=_build(PipelineConfig, doc.get("env", {}), "env"),
        detect=_build(DetectConfig, doc.get("detect", {}), "detect"),
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_run_config(doc)


def resolved_dict(cfg: RunConfig, seed: int) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["seed"] = seed
    synth = doc.pop("synth")
    doc["synth"] = {**synth["config"], "n_cases": synth["n_cases"]}
    return doc


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_resolved(cfg: RunConfig, seed: int, out_dir) -> dict:
    resolved = resolved_dict(cfg, seed)
    path = Path(out_dir) / "resolved_config.json"
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return resolved
