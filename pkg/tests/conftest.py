import pytest

from pcseg.config import RunConfig
from pcseg.episodes import make_split
from pcseg.synth import make_pool


@pytest.fixture(scope="session")
def pool8():
    """Shared 8-class blob pool."""
    return make_pool(77, 20, range(1, 9), blobs_per_scene=3, points_per_blob=300)


@pytest.fixture(scope="session")
def split8():
    return make_split(range(1, 9), 0)


@pytest.fixture()
def fast_config():
    """Small, quick config for unit tests (not the acceptance run)."""
    return RunConfig(
        seed=5,
        dim=16,
        n_prototypes=6,
        hca_layers=2,
        heads=1,
        max_points=256,
        min_fg_points=40,
        episodes=0,
        lr=1e-3,
    )
