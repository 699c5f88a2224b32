import numpy as np
import pytest

from sacloc.dataset import ApInventory, FingerprintSample, SyntheticConfig, generate_synthetic
from sacloc.graphbuild import GraphConfig


@pytest.fixture
def small_world():
    """6 APs, 40 noisy scans over a 50 x 30 m area."""
    cfg = SyntheticConfig(
        ap_count=6, area=(50.0, 30.0), path_loss_exponent=2.0,
        ref_power_dbm=-40.0, noise_sigma_db=3.0, detection_floor_dbm=-95.0,
        sample_count=40, seed=3,
    )
    inventory, samples = generate_synthetic(cfg)
    return cfg, inventory, samples


@pytest.fixture
def graph_cfg():
    return GraphConfig(d_p=25.0, tau=-75.0)


@pytest.fixture
def line_inventory():
    """Three APs on a line at x = 0, 10, 30."""
    return ApInventory(
        ap_ids=("a", "b", "c"),
        coordinates=np.array([[0.0, 0.0], [10.0, 0.0], [30.0, 0.0]]),
    )


def make_sample(rssi, truth=(0.0, 0.0)):
    return FingerprintSample(rssi=np.asarray(rssi, dtype=float), truth=np.asarray(truth))
