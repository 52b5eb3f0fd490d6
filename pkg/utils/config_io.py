"""
Run configuration files.

JSON holds one object per section ({"scheme": {"kind": ...}}). The
sectioned text form reads the same sections through configparser:

    [scheme]
    kind = SemiImplicit
    t_end = 0.05

Values are parsed as JSON literals when they are one, strings otherwise.
Top-level fields (name, mesh_path, output_dir, seed, threads) live in [run].
"""
from __future__ import annotations
import configparser
import json
import logging
import os
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from utils.errors import ConfigInvalid
from utils.protocol import (ConstraintSpec, DiagnosticsSpec, MonitorSpec, PrimitiveSpec, RunConfig,
                            SchemeSpec)

logger = logging.getLogger("csdflow.config")

THREADS_ENV = "CSDFLOW_THREADS"

SECTIONS = {
    "mesh": PrimitiveSpec,
    "constraint": ConstraintSpec,
    "scheme": SchemeSpec,
    "monitor": MonitorSpec,
    "diagnostics": DiagnosticsSpec,
}
# Config keys spelled the way the sectioned format documents them
ALIASES = {
    "dtInit": "dt_init", "dtMin": "dt_min", "dtMax": "dt_max", "tEnd": "t_end",
    "maxSteps": "max_steps", "minEdgeFrac": "min_edge_frac", "maxCurvature": "max_curvature",
    "denomEps": "denom_eps", "bulbRadius": "bulb_radius", "neckRadius": "neck_radius",
    "neckLength": "neck_length", "sampleInterval": "sample_interval", "snapshotTimes": "snapshot_times",
    "rhoList": "rho_list", "outputDir": "output_dir", "meshPath": "mesh_path",
}


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count: CSDFLOW_THREADS caps the request, default os.cpu_count()."""
    count = threads or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, int(cap)) if threads else int(cap)
        except ValueError:
            raise ConfigInvalid(f"{THREADS_ENV} must be an integer, got '{cap}'")
    return max(1, count)


def _build(cls, data: Dict[str, Any], section: str, problems: List[str]):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = ALIASES.get(key, key)
        if name not in known:
            problems.append(f"[{section}] unknown key '{key}'")
            continue
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        problems.append(f"[{section}] {e}")
        return cls()


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    problems: List[str] = []
    top: Dict[str, Any] = {}
    for key, value in data.items():
        name = ALIASES.get(key, key)
        if name in SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"section '{key}' must be an object")
                continue
            top[name] = _build(SECTIONS[name], value, name, problems)
        elif name == "run" and isinstance(value, dict):
            for k, v in value.items():
                top[ALIASES.get(k, k)] = v
        else:
            top[name] = value
    known = {f.name for f in fields(RunConfig)}
    for key in [k for k in top if k not in known]:
        problems.append(f"unknown key '{key}'")
        top.pop(key)
    if problems:
        raise ConfigInvalid(problems)
    return RunConfig(**top)


def _literal(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        lowered = text.strip().lower()
        if lowered in ("true", "yes", "on"):
            return True
        if lowered in ("false", "no", "off"):
            return False
        return text.strip()


def parse_sectioned(text: str) -> Dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigInvalid(f"config parse error: {e}")
    data: Dict[str, Any] = {}
    for section in parser.sections():
        values = {k: _literal(v) for k, v in parser.items(section)}
        if section == "run":
            data.update(values)
        else:
            data[section] = values
    return data


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file {path} not found")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except ValueError as e:
            raise ConfigInvalid(f"{path}: {e}")
    else:
        data = parse_sectioned(text)
    cfg = config_from_dict(data)
    # Relative paths resolve against the config file
    base = path.parent
    if cfg.mesh_path and not Path(cfg.mesh_path).is_absolute():
        cfg.mesh_path = str(base / cfg.mesh_path)
    if cfg.constraint.csv_path and not Path(cfg.constraint.csv_path).is_absolute():
        cfg.constraint.csv_path = str(base / cfg.constraint.csv_path)
    validate(cfg)
    logger.debug("loaded config %s from %s", cfg.name, path)
    return cfg


def validate(cfg: RunConfig, check_output: bool = True) -> RunConfig:
    """Raise ConfigInvalid listing every range or reference violation."""
    problems: List[str] = []
    if cfg.mesh_path:
        if not Path(cfg.mesh_path).exists():
            problems.append(f"mesh file {cfg.mesh_path} not found")
    else:
        problems += [f"[mesh] {p}" for p in cfg.mesh.validate()]
    problems += [f"[constraint] {p}" for p in cfg.constraint.validate()]
    if cfg.constraint.csv_path and not Path(cfg.constraint.csv_path).exists():
        problems.append(f"[constraint] table {cfg.constraint.csv_path} not found")
    problems += [f"[scheme] {p}" for p in cfg.scheme.validate()]
    problems += [f"[monitor] {p}" for p in cfg.monitor.validate()]
    problems += [f"[diagnostics] {p}" for p in cfg.diagnostics.validate()]
    if cfg.threads is not None and cfg.threads < 1:
        problems.append("threads must be >= 1")
    if check_output:
        out = Path(cfg.output_dir)
        probe = next((p for p in [out, *out.parents] if p.exists()), None)
        if probe is None or not probe.is_dir() or not os.access(probe, os.W_OK):
            problems.append(f"output directory {out} is not creatable")
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def _plain(value):
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    return value


def save_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(cfg), indent=2))
    return path
