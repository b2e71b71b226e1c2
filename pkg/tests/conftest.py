import pytest

from waicflow.simulator import make_camera, simulate_dataset
from waicflow.waic import TrainConfig, train_ensemble

# small-but-real configs shared across test modules; full-scale runs live in
# test_acceptance.py


@pytest.fixture(scope="session")
def tiny_train_config():
    return TrainConfig(n_blocks=4, hidden_width=16, epochs=6, batch_size=128,
                       jitter_sigma=1e-4)


@pytest.fixture(scope="session")
def band_dataset():
    return simulate_dataset(1500, make_camera("spectrocam8", "xenon"),
                            rng=321, noise_sigma=0.002)


@pytest.fixture(scope="session")
def band_ensemble(tiny_train_config, band_dataset):
    return train_ensemble(tiny_train_config, band_dataset.measurements[:1200],
                          base_seed=99, n_members=3)
