"""Shared fixtures: a small standard environment and a tiny trained model set
reused by the unit suites (the full-size training run lives in the acceptance
suite only)."""

from __future__ import annotations

import pytest

from mtdlite.classifier import TreeParams, train_forest, train_knn, train_tree
from mtdlite.environment import (
    EnvironmentSpec,
    FileRootSpec,
    NetworkSpec,
    ProcessSpec,
    create_environment,
)
from mtdlite.profiles import default_profiles
from mtdlite.telemetry import generate_dataset, minmax_fit, scale_dataset, split


def small_spec(seed: int = 7, **overrides) -> EnvironmentSpec:
    base = dict(
        seed=seed,
        network=NetworkSpec(cidr="192.168.1.0/24",
                            peers=["192.168.1.20", "192.168.1.21"]),
        files=[FileRootSpec(path="/data", count=24, size_bytes=240_000,
                            extensions=[".pdf", ".txt"], subdirs=3)],
        processes=[ProcessSpec(name="sensor", cpu=12.0, whitelisted=True),
                   ProcessSpec(name="sshd", cpu=1.5)],
    )
    base.update(overrides)
    return EnvironmentSpec(**base)


@pytest.fixture
def env():
    return create_environment(small_spec())


@pytest.fixture(scope="session")
def tiny_dataset():
    profiles = default_profiles(confusable=True)
    return generate_dataset(profiles, n_per_class=40, seed=123)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    train, test = split(tiny_dataset, train_fraction=0.8, seed=123)
    scaler = minmax_fit(train)
    return scale_dataset(train, scaler), scale_dataset(test, scaler), scaler


@pytest.fixture(scope="session")
def tiny_tree(tiny_split):
    train, _, _ = tiny_split
    return train_tree(train, TreeParams(max_depth=10))


@pytest.fixture(scope="session")
def tiny_forest(tiny_split):
    train, _, _ = tiny_split
    return train_forest(train, n_trees=7, seed=5)


@pytest.fixture(scope="session")
def tiny_knn(tiny_split):
    train, _, _ = tiny_split
    return train_knn(train, k=3)
