"""Small dry runs of every experiment: structure, caching and determinism, not accuracy."""

import json

import numpy as np
import pytest

from bondsep import experiments as ex
from bondsep.dynamics import ObservableBatch

SMALL = {
    "hydro": {},
    "density-clt": {},
    "current-clt": {},
    "tagged-clt": {},
    "correlations": {"sizes": [16, 32], "steps": [[0.5, 0.01]]},
    "nash": {"env_seeds": 2, "t_range": [0.01, 1.0, 6], "probe_radius": 4},
    "liggett": {"K": 6},
    "hitting": {"t_range": [0.5, 20.0, 6]},
}
REPLICAS = {"hitting": 500}


@pytest.mark.parametrize("name", ex.EXPERIMENTS)
def test_experiment_dry_run(name, tmp_path):
    cfg = ex.ExperimentConfig(name, N=32, replicas=REPLICAS.get(name, 20), output=str(tmp_path / "out"),
                              cache=str(tmp_path / "cache"), params=SMALL[name])
    report = ex.run(cfg)
    assert report["experiment"] == name and report["checks"]
    for c in report["checks"]:
        assert {"name", "mc", "theory", "tolerance", "pass"} <= set(c)
    data = json.loads((tmp_path / "out" / f"{name}.json").read_text())
    assert data["config"]["N"] == 32
    assert (tmp_path / "out" / f"{name}-checks.csv").exists()
    assert ex.render(report)


def test_config_validation():
    with pytest.raises(ValueError, match="minimum"):
        ex.ExperimentConfig("hydro", N=8)
    with pytest.raises(ValueError):
        ex.ExperimentConfig("hydro", horizon=0.0)
    with pytest.raises(ValueError):
        ex.ExperimentConfig("sideways")
    with pytest.raises(ValueError):
        ex.ExperimentConfig.from_dict({"experiment": "hydro", "bogus": 1})
    cfg = ex.ExperimentConfig("hydro", N=32)
    back = ex.ExperimentConfig.from_dict(cfg.to_dict())  # seeds come back resolved
    assert back.seeds == cfg.seeds and back.N == cfg.N


def test_seeds_depend_on_experiment_unless_pinned():
    a = ex.ExperimentConfig("hydro").seeds
    b = ex.ExperimentConfig("current-clt").seeds
    assert a != b
    pinned = ex.ExperimentConfig("current-clt", env_seed=5).seeds
    assert pinned[0] == 5


def test_plan_cache_is_reused_and_extended(tmp_path):
    cfg = ex.ExperimentConfig("current-clt", N=32, replicas=6, cache=str(tmp_path))
    plan = ex.clt_plan(cfg, (0.0, 0.5), star=False)
    first, _, _ = ex.run_plan(plan, tmp_path)
    again, _, _ = ex.run_plan(plan, tmp_path)
    assert np.array_equal(first.currents, again.currents)
    assert len(list(tmp_path.glob("*/chunk-*.npz"))) >= 1
    assert isinstance(first, ObservableBatch) and first.M == 6
