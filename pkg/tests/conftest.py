import numpy as np
import pytest

from brrp.prior_db import build_database
from brrp.primitives import DEFAULT_DESCRIPTIONS, default_pool
from brrp.scenegen import SceneGenConfig, generate_scene


@pytest.fixture(scope="session")
def pool():
    return sorted(default_pool().items())


@pytest.fixture(scope="session")
def pool_dict(pool):
    return dict(pool)


@pytest.fixture(scope="session")
def small_db(pool):
    """Reduced-Q database; plenty for registration and prior-term tests."""
    triples = [(name, mesh, DEFAULT_DESCRIPTIONS[name]) for name, mesh in pool]
    return build_database(triples, q=600, seed=0)


@pytest.fixture(scope="session")
def two_object_scene(pool):
    scene, info = generate_scene(pool, SceneGenConfig(max_objects=2, seed=3))
    assert info["placed"] == len(scene.object_labels())
    return scene


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
