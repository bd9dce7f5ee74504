import numpy as np
import pytest

from cmexit.class_means import fit_class_means
from cmexit.data import generate_clusters, split
from cmexit.internal import build_bundle, train_ics
from cmexit.nn import Dense, Network, ReLU, TrainConfig, init_mlp, sgd_train


def random_mlp(dims, seed, bias=True):
    """Dense/ReLU stack with N(0, 0.5) weights from numpy (independent of the package RNG)."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(0, 0.5, (dims[i + 1], dims[i]))
        b = rng.normal(0, 0.5, dims[i + 1]) if bias else None
        layers.append(Dense(w, b))
        if i < len(dims) - 2:
            layers.append(ReLU(dims[i + 1]))
    return Network(layers, dims[-1])


@pytest.fixture(scope="session")
def desk():
    """Small trained stack: 4 classes, 8-dense backbone, 6 ICs, class means."""
    ds = generate_clusters(4, 16, 40, 4.0, 1.5, seed=11)
    train, test = split(ds, 0.5, seed=11)
    net = init_mlp(16, (32,) * 7, 4, seed=11)
    sgd_train(net, train, TrainConfig(epochs=5, seed=11))
    means = fit_class_means(net, train)
    bundle = build_bundle(net, seed=11)
    train_ics(net, bundle, train, TrainConfig(epochs=5, seed=12))
    return net, train, test, means, bundle


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
