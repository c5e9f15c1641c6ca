"""Config-file loading for the command-line entry point.

Configs are JSON objects whose keys mirror the experiment dataclass fields
verbatim.  Unknown keys are hard errors, not warnings: a silently ignored
typo in an attack parameter would invalidate a whole run.
"""

from __future__ import annotations

import json
from pathlib import Path

from .attacks import GeneratorSpec, SaSchedule, TacticSpec
from .harness import ConfigError, DefenseSpec, ExperimentConfig, VictimSpec

__all__ = ["ConfigError", "load_config", "build_experiment_config", "resolved_dict"]


def _take(obj: dict, allowed: dict, where: str) -> dict:
    """Check keys against the allowed set and apply per-field converters."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    out = {}
    for key, value in obj.items():
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
        out[key] = allowed[key](value)
    return out


def _victim(obj) -> VictimSpec:
    fields = _take(obj, {
        "kind": str, "input_dims": int, "num_classes": int, "seed": int,
        "hidden": int, "out_scale": float, "L0": float, "lipschitz": float,
        "norm": str,
    }, "victim")
    return VictimSpec(**fields)


def _defense(obj, idx: int) -> DefenseSpec:
    where = f"defenses[{idx}]"
    fields = _take(obj, {
        "name": str, "variant": str, "nu": float, "tau": float, "h": float,
        "alpha": float, "p": float, "step": float, "ratio": float,
        "intervals": lambda v: tuple((float(lo), float(hi)) for lo, hi in v),
    }, where)
    if "variant" not in fields:
        raise ConfigError(f"{where}: missing 'variant'")
    fields.setdefault("name", fields["variant"])
    return DefenseSpec(**fields)


def _tactic(obj, idx: int) -> TacticSpec:
    where = f"tactics[{idx}]"
    fields = _take(obj, {
        "kind": str, "t": int, "prob": float, "initial_temp": float,
        "decay": float, "stagnation_reset": int,
    }, where)
    if "kind" not in fields:
        raise ConfigError(f"{where}: missing 'kind'")
    sa_kw = {k: fields.pop(k) for k in ("initial_temp", "decay", "stagnation_reset")
             if k in fields}
    if sa_kw:
        fields["sa"] = SaSchedule(**sa_kw)
    return TacticSpec(**fields)


def _generator(obj) -> GeneratorSpec:
    fields = _take(obj, {
        "kind": str, "epsilon_n": float, "norm": str, "p_init": float, "r": float,
    }, "generator")
    return GeneratorSpec(**fields)


def build_experiment_config(raw: dict) -> ExperimentConfig:
    fields = _take(raw, {
        "victim": _victim,
        "defenses": lambda v: tuple(_defense(d, i) for i, d in enumerate(v)),
        "tactics": lambda v: tuple(_tactic(t, i) for i, t in enumerate(v)),
        "generator": _generator,
        "sample_count": int, "budget": int, "root_seed": int, "trials": int,
        "record_curves": bool, "threads": int,
        # sweep-only keys, validated by the caller
        "axis": str, "values": lambda v: [float(x) for x in v],
    }, "config")
    fields.pop("axis", None)
    fields.pop("values", None)
    try:
        return ExperimentConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


_CHECK_KEYS = {
    "theorem1": {"check": str, "tau": float, "h": float, "p": float,
                 "eps": float, "trials": int},
    "theorem2": {"check": str, "tau": float, "h": float, "p": float,
                 "eps": float, "t": int, "trials": int},
    "bypass-expectation": {"check": str, "p": float, "trials": int,
                           "expected": float, "tolerance": float},
    "branch-proportion": {"check": str, "tau": float, "h": float, "step": float,
                          "ratios": lambda v: [float(x) for x in v],
                          "samples": int, "K": int},
    "bypass-demo": {"check": str, "tau": float, "h": float, "p": float,
                    "eps": float, "trials": int, "max_probes": int,
                    "budget_factor": float},
}


def build_verify_config(raw: dict) -> dict:
    fields = _take(raw, {"root_seed": int, "checks": list}, "config")
    checks = []
    for i, chk in enumerate(fields.get("checks", [])):
        if not isinstance(chk, dict) or "check" not in chk:
            raise ConfigError(f"checks[{i}]: missing 'check'")
        kind = chk["check"]
        if kind not in _CHECK_KEYS:
            raise ConfigError(f"checks[{i}]: unknown check {kind!r}")
        checks.append(_take(chk, _CHECK_KEYS[kind], f"checks[{i}]"))
    if not checks:
        raise ConfigError("config: 'checks' must be a nonempty list")
    return {"root_seed": fields.get("root_seed", 19260817), "checks": checks}


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Round-trippable view of a fully resolved experiment config."""
    def spec_dict(spec):
        out = {}
        for key, value in vars(spec).items():
            if isinstance(value, SaSchedule):
                out.update(vars(value))
            elif isinstance(value, tuple) and key == "intervals":
                out[key] = [list(pair) for pair in value]
            elif value is not None and key != "intervals":
                out[key] = value
        return out

    return {
        "victim": spec_dict(cfg.victim),
        "defenses": [spec_dict(d) for d in cfg.defenses],
        "tactics": [spec_dict(t) for t in cfg.tactics],
        "generator": spec_dict(cfg.generator),
        "sample_count": cfg.sample_count,
        "budget": cfg.budget,
        "root_seed": cfg.root_seed,
        "trials": cfg.trials,
        "record_curves": cfg.record_curves,
        "threads": cfg.threads,
    }
