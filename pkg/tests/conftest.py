import numpy as np
import pytest

from igdistill import blocks, data, harness
from igdistill.losses import HyperParams

# Desk-scale knobs shared by the slow fixtures; chosen once so the trained
# teacher fixtures are reused across test modules.
TRAIN_SEED = 1234
TEST_SEED = 1235
N_PER_CLASS = 40
TEST_N_PER_CLASS = 20
TEACHER_HYPER = HyperParams(epochs=50, batch_size=32, lr=0.002)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def train_set():
    return data.generate_synthetic(N_PER_CLASS, seed=TRAIN_SEED,
                                   split="train")


@pytest.fixture(scope="session")
def test_set():
    return data.generate_synthetic(TEST_N_PER_CLASS, seed=TEST_SEED,
                                   split="test")


@pytest.fixture(scope="session")
def trained_teacher(train_set, test_set):
    """A MicroNet trained well past the 90% learnability bar."""
    teacher = blocks.build_teacher(10, "micronet", seed=0)
    harness.train_student(teacher, train_set, test_set,
                          hyper=TEACHER_HYPER, seed=0,
                          config_id="teacher")
    return teacher


@pytest.fixture(scope="session")
def teacher_outputs(trained_teacher, train_set):
    return harness.precompute_teacher_outputs(trained_teacher, train_set)
