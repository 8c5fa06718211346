import dataclasses

import numpy as np
import pytest

from caevsim import load_scenario
from caevsim.config import bundled_scenario_path, scenario_from_tree


@pytest.fixture(scope="session")
def default_cfg():
    return load_scenario(bundled_scenario_path("default"))


@pytest.fixture(scope="session")
def cs1_cfg():
    return load_scenario(bundled_scenario_path("case_study_1"))


def short(cfg, duration):
    return cfg.replace(sim=dataclasses.replace(cfg.sim, duration=duration))


def constant_cycle_cfg(tmp_path, speed=15.0, duration=20.0, **sections):
    """Scenario on a flat drive cycle (leader never accelerates)."""
    path = tmp_path / "flat.csv"
    path.write_text(f"t_s,v_mps\n0,{speed}\n1000,{speed}\n", encoding="utf-8")
    tree = {"sim": {"duration": duration, "drive_cycle": str(path)}}
    for name, block in sections.items():
        tree.setdefault(name, {}).update(block)
    return scenario_from_tree(tree, base_dir=tmp_path)


def with_defender(cfg, **kw):
    return cfg.replace(defender=dataclasses.replace(cfg.defender, enabled=True, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
