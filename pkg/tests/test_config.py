from __future__ import annotations

import json

import pytest

from config import Config
from tools.errors import ConfigError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch) -> None:
    monkeypatch.delenv("ROBIN_HOMOG_THREADS", raising=False)
    monkeypatch.delenv("ROBIN_HOMOG_OUTPUT_DIR", raising=False)


def test_defaults() -> None:
    cfg = Config()

    assert cfg["family"] == "identity"
    assert cfg["epsilons"] == (0.5, 0.25, 0.125)
    assert cfg["paths"] == 200000
    assert cfg.get("homogenized.dt") is None
    assert cfg.get("homogenized.dt", 0.01) == 0.01
    assert cfg.memory_cap_bytes == 4096 * 1024 ** 2


def test_file_values_are_coerced(tmp_path) -> None:
    path = tmp_path / "run.env"
    path.write_text(
        "# experiment\n"
        "family=layered(0.5)\n"
        "epsilons=(0.4, 0.2, 0.1)\n"
        "paths=1e4\n"
        "horizon=0.25\n"
        "sim.0.1.paths=500\n"
    )

    cfg = Config(path)

    assert cfg["family"] == "layered(0.5)"
    assert cfg["epsilons"] == (0.4, 0.2, 0.1)
    assert cfg["paths"] == 10000
    assert cfg["horizon"] == 0.25
    assert cfg.sim_overrides == {0.1: {"paths": 500}}


def test_overrides_win_over_file_and_environment(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("ROBIN_HOMOG_THREADS", "3")
    monkeypatch.setenv("ROBIN_HOMOG_OUTPUT_DIR", str(tmp_path / "env_out"))
    path = tmp_path / "run.env"
    path.write_text("seed=1\nthreads=5\n")

    cfg = Config(path, overrides={"seed": "2"})

    assert cfg["seed"] == 2
    assert cfg.threads == 5
    assert cfg.outputs_dir == tmp_path / "env_out"


def test_apply_set_pairs() -> None:
    cfg = Config()

    cfg.apply(["grid_n=64", "sim.0.25.dt=0.001", "x0=0.1,0.2"])

    assert cfg["grid_n"] == 64
    assert cfg["x0"] == (0.1, 0.2)
    assert cfg.sim_overrides[0.25]["dt"] == 0.001


@pytest.mark.parametrize(
    "pair",
    ["unknown=1", "grid_n", "grid_n=many", "sim.0.1.steps=3", "sim.fine.paths=3"],
)
def test_bad_overrides(pair: str) -> None:
    with pytest.raises(ConfigError):
        Config().apply([pair])


def test_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        Config(tmp_path / "nope.env")


def test_run_folder_records_configuration(tmp_path) -> None:
    cfg = Config(overrides={"output_dir": str(tmp_path), "sim.0.5.paths": 10})

    first = cfg.create_run_folder("converge")
    second = cfg.create_run_folder("converge")

    assert first != second
    assert first.name.startswith("converge_")
    data = json.loads((first / "config.json").read_text())
    assert data["command"] == "converge"
    assert data["epsilons"] == [0.5, 0.25, 0.125]
    assert data["sim.0.5.paths"] == 10
    assert cfg.get_trace_file(first) == first / "trace.jsonl"
