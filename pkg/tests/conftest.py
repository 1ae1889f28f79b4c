import numpy as np
import pytest

from multiflow.flow import FlowModel
from multiflow.multiview import build_view_topology


def randomize(model, rng, scale=0.3):
    """Give every parameter (including the zero-initialized cross convs) random values."""
    for p in model.parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.shape).astype(p.dtype)
    return model


def make_model(shape=(3, 4, 2, 2), blocks=2, hidden=8, seed=0, scale=0.3,
               dtype=np.float64, top=True, ring=True, noise_channels=None):
    topo = build_view_topology(shape[0] - 1, top, ring)
    model = FlowModel.init(shape, topo, n_blocks=blocks, hidden_dim=hidden,
                           noise_channels=noise_channels, seed=seed, dtype=dtype)
    if scale:
        randomize(model, np.random.default_rng(seed + 1000), scale)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_SYNTH = dict(n_train=6, n_test_normal=4, n_test_anomalous=4, channels=4, height=4,
                   width=4, image_scale=4, seed=3)
SMALL_TRAIN = dict(epochs=1, blocks=2, hidden_dim=8, learning_rate=1e-3)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """(root, train manifest, test manifest) of a tiny synthetic dataset on disk."""
    from multiflow.synth import SynthConfig, generate_synthetic

    root = tmp_path_factory.mktemp("synth")
    train, test = generate_synthetic(SynthConfig(**SMALL_SYNTH), str(root))
    return root, train, test


@pytest.fixture(scope="session")
def small_checkpoint(small_dataset):
    from multiflow.training import TrainConfig, train

    return train(small_dataset[1], TrainConfig(**SMALL_TRAIN))


# one (criterion, status, detail) line per acceptance criterion, printed at the end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
