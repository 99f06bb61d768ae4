"""Shared pytest fixtures: a tiny scenario that runs in well under a second per episode."""

import os

import pytest

from app.channel import generate_traces
from app.environment import LinkEnvironment
from app.scenario import load_scenario

TINY = {
    "mmwave": {"n_bs": 4, "n_ue": 4, "n_s": 2, "n_bs_rf": 2, "n_ue_rf": 2, "n_subcarriers": 4,
               "cluster_count": 3, "kappa_rvq": 2, "rvq_training": 64},
    "sub6": {"n_bs": 4, "n_ue": 2, "n_s": 2, "n_subcarriers": 2, "cluster_count": 3, "nu_pmi": 4},
    "env": {"m_dt": 3, "episode_len_decisions": 20},
    "drl": {"hidden": [8], "batch_size": 4, "buffer_capacity": 256},
    "hrl": {"m_upper": 2,
            "upper": {"hidden": [8], "batch_size": 2, "buffer_capacity": 64},
            "lower": {"hidden": [8], "batch_size": 4, "buffer_capacity": 256}},
    "experiment": {"n_episodes": 2, "n_seeds": 1, "summary_window": 5},
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running property test, enabled with RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_cfg():
    return load_scenario(overrides=[TINY])


@pytest.fixture
def tiny_traces(tiny_cfg):
    return generate_traces(tiny_cfg, seed=11)


@pytest.fixture
def tiny_env(tiny_cfg, tiny_traces):
    return LinkEnvironment(tiny_traces, tiny_cfg)
