import numpy as np
import pytest

from accelssl.data import DatasetSchema, SensorSequence, WindowSet


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_window_set(n=16, length=32, num_classes=3, seed=0, users=("a", "b")):
    g = np.random.default_rng(seed)
    values = g.normal(size=(n, length, 3))
    labels = g.integers(0, num_classes, size=n)
    user_ids = np.array([users[i % len(users)] for i in range(n)], dtype=object)
    origins = np.arange(n) * length
    return WindowSet(values, labels, user_ids, origins, length, 0.0,
                     class_names=[f"c{i}" for i in range(num_classes)])


@pytest.fixture
def window_set():
    return make_window_set()


@pytest.fixture
def dataset_dir(tmp_path):
    """Canonical dataset directory with 2 users and 6 classes."""
    from accelssl.data import save_dataset

    schema = DatasetSchema(dataset_id="toy", sample_rate_hz=50.0,
                           sensor_position="wrist",
                           class_names=[f"act{i}" for i in range(6)])
    g = np.random.default_rng(1)
    sequences = []
    for uid in ("01", "02"):
        t = 500
        sequences.append(SensorSequence(
            user_id=uid, sample_rate_hz=50.0,
            samples=g.normal(size=(t, 3)),
            labels=g.integers(0, 6, size=t),
            dataset_id="toy", sensor_position="wrist"))
    save_dataset(tmp_path / "toy", schema, sequences)
    return tmp_path / "toy"
