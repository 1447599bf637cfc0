import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def randomize_biases(model, rng, scale=0.5):
    """Nonzero head biases for finite-difference probes.

    The pipeline starts at z = 0, so zero biases would put every first-step
    ReLU pre-activation exactly at the kink and break central differences.
    """
    for _, b in model.head.layers:
        b[:] = rng.uniform(-scale, scale, size=b.shape)
    return model
