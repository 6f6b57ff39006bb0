"""Session fixtures: one full-scale four-seed pipeline shared by the
acceptance criteria and the trained-model behavior tests."""

import json

import pytest

from primo.experiment import ExperimentConfig, run_experiment
from primo.model import PrimoModel


def paper_config() -> ExperimentConfig:
    """Benchmark configuration: defaults everywhere, four seeds."""
    cfg = ExperimentConfig()
    cfg.seeds = [0, 1, 2, 3]
    return cfg


@pytest.fixture(scope="session")
def paper_run(tmp_path_factory):
    """Full four-seed run (training, analysis, bias protocol); takes minutes."""
    out = tmp_path_factory.mktemp("paper_run")
    cfg = paper_config()
    run_experiment(cfg, out)
    return {"dir": out, "cfg": cfg}


@pytest.fixture(scope="session")
def seed0_model(paper_run):
    return PrimoModel.load(paper_run["dir"] / "seed_0" / "primo.json")


@pytest.fixture(scope="session")
def seed0_metrics(paper_run):
    return json.loads((paper_run["dir"] / "seed_0" / "metrics.json").read_text())
