from __future__ import annotations

import json

import pytest

from utils.config_io import THREADS_ENV, config_from_dict, load_config, parse_sectioned, resolve_threads, save_config
from utils.errors import ConfigInvalid
from utils.mesh import write_obj
from utils.primitives import icosphere
from utils.protocol import RunConfig, SchemeSpec


def _sectioned(out_dir) -> str:
    return f"""
[run]
name = demo
output_dir = {out_dir}
seed = 3

[mesh]
kind = dumbbell
neckRadius = 0.12
resolution = 48

[constraint]
kind = MeanH

[scheme]
tEnd = 0.01
dtMax = 1e-4
adaptive = yes

[monitor]
snapshotTimes = [0.001, 0.005]
"""


def test_sectioned_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(_sectioned(tmp_path / "out"))
    cfg = load_config(path)
    assert cfg.name == "demo"
    assert cfg.seed == 3
    assert cfg.mesh.kind == "dumbbell"
    assert cfg.mesh.neck_radius == 0.12
    assert cfg.mesh.resolution == 48
    assert cfg.constraint.kind == "MeanH"
    assert cfg.scheme.t_end == 0.01
    assert cfg.scheme.dt_max == 1e-4
    assert cfg.scheme.adaptive is True
    assert cfg.monitor.snapshot_times == [0.001, 0.005]


def test_literal_values():
    data = parse_sectioned("[scheme]\nkind = ExplicitEuler\nsafety = 0.25\nadaptive = off\n")
    assert data == {"scheme": {"kind": "ExplicitEuler", "safety": 0.25, "adaptive": False}}


def test_json_config_resolves_relative_paths(tmp_path):
    write_obj(icosphere(1), tmp_path / "start.obj")
    (tmp_path / "h.csv").write_text("t,h\n0,0\n1,1\n")
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "meshPath": "start.obj",
        "outputDir": str(tmp_path / "out"),
        "constraint": {"kind": "TimeFunction", "csv_path": "h.csv"},
        "scheme": {"tEnd": 0.02},
    }))
    cfg = load_config(path)
    assert cfg.mesh_path == str(tmp_path / "start.obj")
    assert cfg.constraint.csv_path == str(tmp_path / "h.csv")
    assert cfg.scheme.t_end == 0.02


def test_unknown_keys_are_reported():
    with pytest.raises(ConfigInvalid) as info:
        config_from_dict({"scheme": {"tEnd": 1.0, "stepper": "rk4"}, "colour": "blue"})
    assert any("stepper" in p for p in info.value.problems)
    assert any("colour" in p for p in info.value.problems)


def test_section_must_be_object():
    with pytest.raises(ConfigInvalid):
        config_from_dict({"scheme": 3})


def test_dt_ordering(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"outputDir": str(tmp_path), "scheme": {"dtInit": 1e-2, "dtMax": 1e-3}}))
    with pytest.raises(ConfigInvalid) as info:
        load_config(path)
    assert any("dt_init" in p for p in info.value.problems)


def test_missing_mesh_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"meshPath": "absent.obj", "outputDir": str(tmp_path)}))
    with pytest.raises(ConfigInvalid):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "nope.json")


def test_every_problem_is_listed(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "outputDir": str(tmp_path),
        "mesh": {"kind": "torus", "R": -1.0},
        "constraint": {"kind": "Bogus"},
        "scheme": {"safety": 0.0},
    }))
    with pytest.raises(ConfigInvalid) as info:
        load_config(path)
    assert len(info.value.problems) == 3
    assert info.value.exit_code == 3


def test_save_and_load(tmp_path):
    cfg = RunConfig(name="saved", output_dir=str(tmp_path / "out"), scheme=SchemeSpec(t_end=0.2, dt_max=1e-3))
    path = save_config(cfg, tmp_path / "cfg.json")
    assert load_config(path) == cfg


def test_threads_env_caps_request(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    assert resolve_threads(None) == 2
    assert resolve_threads(8) == 2
    assert resolve_threads(1) == 1


def test_threads_without_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(3) == 3
    assert resolve_threads(None) >= 1


def test_bad_threads_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigInvalid):
        resolve_threads(None)
