"""Tests for run directories, JSON/CSV artifacts and the result cache"""

import json

import numpy as np
import pytest

from quadricrl.artifacts import RunDirectory, artifact_header, read_csv, read_json, write_csv, write_json
from quadricrl.cache import ResultCache
from quadricrl.config import ExperimentConfig, RewardConfig
from quadricrl.errors import ConfigurationError
from quadricrl.quadric import random_system


@pytest.fixture
def experiment(tmp_path):
    return ExperimentConfig(experiment_id="demo", output_dir=str(tmp_path), seed=7)


def test_run_directory_layout(experiment, tmp_path):
    run = RunDirectory.create(experiment, "stamp")
    assert run.root == tmp_path / "demo" / "stamp"
    for sub in ("logs", "tables", "systems"):
        assert (run.root / sub).is_dir()
    assert read_json(run.root / "config.json")["experiment_id"] == "demo"
    assert run.header["seed"] == 7
    with pytest.raises(ValueError):
        run.path("plots", "x.svg")


def test_lock_is_exclusive(experiment):
    run = RunDirectory.create(experiment, "stamp")
    with run:
        assert (run.root / ".lock").exists()
        with pytest.raises(ConfigurationError):
            RunDirectory(run.root, experiment).acquire()
    assert not (run.root / ".lock").exists()


def test_json_envelope(tmp_path):
    header = artifact_header({"command": "demo"}, 3)
    path = write_json(tmp_path / "out.json", {"values": np.arange(3)}, header)
    document = json.loads(path.read_text())
    assert set(document) == {"header", "result"}
    assert document["header"]["seed"] == 3
    assert read_json(path) == {"values": [0, 1, 2]}

    plain = write_json(tmp_path / "plain.json", {"header": 1})
    assert read_json(plain) == {"header": 1}


def test_csv_header_line(tmp_path):
    rows = [{"n": 3, "value": 0.1}, {"n": 4, "value": 1 / 3}]
    path = write_csv(tmp_path / "t.csv", rows, ["n", "value"], artifact_header(None, 0))
    first = path.read_text().splitlines()[0]
    assert first.startswith("# ")
    assert json.loads(first[2:])["tool"] == "quadricrl"
    loaded = read_csv(path)
    assert [int(r["n"]) for r in loaded] == [3, 4]
    assert float(loaded[1]["value"]) == 1 / 3


def test_cache_round_trip(tmp_path, rng):
    cache = ResultCache(str(tmp_path / "cache"))
    system = random_system(3, "gaussian", rng)
    settings = RewardConfig().model_dump(mode="json")
    key = cache.key_for("reward", system, settings)
    assert cache.load(key) is None
    cache.save(key, {"value": 1.5})
    assert cache.has(key)
    assert ResultCache(str(tmp_path / "cache")).load(key) == {"value": 1.5}

    other = cache.key_for("reward", system, {**settings, "seed": 1})
    assert other != key
    assert cache.key_for("count", system, settings) != key

    stats = cache.get_stats()
    assert stats["entries"] == 1
    assert stats["cache_size_mb"] > 0


def test_cache_eviction(tmp_path, rng):
    cache = ResultCache(str(tmp_path / "cache"), max_cache_size_mb=0)
    system = random_system(2, "gaussian", rng)
    cache.save(cache.key_for("count", system, {}), {"count": 2})
    assert cache.get_stats()["entries"] == 0
