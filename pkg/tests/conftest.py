"""
Shared fixtures for the lesiontag test suite.
"""

import logging

import numpy as np
import pytest

from src.data.data_manager import Dataset
from src.data.synthetic import synth_dataset
from src.numerics.layers import LayerSpec
from src.numerics.network import Network


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_specs(num_outputs: int = 3):
    """conv -> relu -> pool -> flatten -> linear -> relu -> linear on 2×6×6 inputs."""
    return [
        LayerSpec.conv2d(3, kernel=3),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.flatten(),
        LayerSpec.linear(5),
        LayerSpec.relu(),
        LayerSpec.linear(num_outputs),
    ]


SMALL_INPUT = (2, 6, 6)


@pytest.fixture
def small_net():
    return Network(small_specs(), SMALL_INPUT, seed=7)


@pytest.fixture
def four_class_data() -> Dataset:
    return synth_dataset(4, 8, seed=0)


@pytest.fixture
def six_tag_data() -> Dataset:
    return synth_dataset(6, 10, multi_label=True, seed=0)
