"""Shared fixtures: a small random network and dataset for fast tests.

The heavier trained-model fixtures live under fixtures/ at the repo root
and are only touched by the tests that need realistic accuracy numbers.
"""

from pathlib import Path

import numpy as np
import pytest

from nbsmt.data import LabeledDataset
from nbsmt.graph import (BatchNorm, Conv2d, FullyConnected, LayerGraph,
                         MaxPool, ReLU)
from nbsmt.quant import calibrate

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


def small_graph(seed=0, eligible=True):
    """Two convs + FC on 8x8 single-channel inputs.

    conv1 and fc carry the mandatory exemptions; conv2 is the one layer
    squeezing applies to (unless `eligible` turns that off too).
    """
    rng = np.random.default_rng(seed)

    def w(*shape, scale=0.5):
        return (scale * rng.standard_normal(shape)).astype(np.float32)

    def bn(ch, name):
        return BatchNorm(name=name, gamma=np.abs(w(ch)) + 0.5, beta=w(ch),
                         running_mean=w(ch),
                         running_var=np.abs(w(ch)) + 0.5,
                         eps=1e-5, momentum=0.1)

    layers = [
        Conv2d(name="conv1", weight=w(4, 1, 3, 3), bias=w(4),
               stride=1, padding=1, nbsmt_exempt=True),
        bn(4, "bn1"),
        ReLU(name="relu1"),
        Conv2d(name="conv2", weight=w(6, 4, 3, 3), bias=w(6),
               stride=1, padding=1, nbsmt_exempt=not eligible),
        bn(6, "bn2"),
        ReLU(name="relu2"),
        MaxPool(name="pool1", kernel=2, stride=2),
        FullyConnected(name="fc", weight=w(10, 6 * 4 * 4), bias=w(10),
                       nbsmt_exempt=True),
    ]
    return LayerGraph(layers=layers,
                      input_norm={"mean": [0.5], "std": [0.25]},
                      metadata={})


def small_dataset(n=96, seed=1):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 1, 8, 8)).astype(np.float32)
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    return LabeledDataset(images=images, labels=labels)


@pytest.fixture(scope="session")
def graph():
    return small_graph()


@pytest.fixture(scope="session")
def dataset():
    return small_dataset()


@pytest.fixture(scope="session")
def qparams(graph, dataset):
    return calibrate(graph, dataset.subset(range(48)))
