"""Named desk-scale fixtures shared by the trainer, the CLI and the tests."""

import numpy as np

from . import dist

FIXTURES = ("block4", "lowrank8", "identity4", "independent4", "table2x2", "mixture8")


def get_fixture(name):
    """Joint table for a fixture name.

    ``lowrank8`` is ``synth_random_lowrank(8, 8, 3, seed=0)`` and ``mixture8``
    is ``synth_latent_mixture(8, 2, seed=0)``.
    """
    if name == "block4":
        return dist.block4()
    if name == "lowrank8":
        return dist.synth_random_lowrank(8, 8, 3, 0)
    if name == "identity4":
        return dist.from_table(np.eye(4))
    if name == "independent4":
        return dist.from_table(np.ones((4, 4)))
    if name == "table2x2":
        return dist.from_table(np.array([[0.4, 0.1], [0.1, 0.4]]))
    if name == "mixture8":
        return dist.synth_latent_mixture(8, 2, 0)[0]
    raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")


def true_posterior(name):
    """Ground-truth latent posterior of a fixture, or ``None`` when there is none."""
    if name == "mixture8":
        return dist.synth_latent_mixture(8, 2, 0)[1]
    return None
