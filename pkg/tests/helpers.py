"""Shared builders for the test suite."""
import numpy as np

from nemomap.data import SampleSet


def make_samples(x, y, t, speed, theta, date="2012-10-24"):
    n = len(np.atleast_1d(x))
    return SampleSet(
        np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(t), np.atleast_1d(speed),
        np.mod(np.atleast_1d(theta), 2 * np.pi), np.arange(n), np.full(n, date),
    )


def random_samples(rng, n, bounds=(0.0, 10.0, 0.0, 6.0)):
    x0, x1, y0, y1 = bounds
    return make_samples(
        rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), rng.uniform(0, 86400, n),
        rng.uniform(0.1, 2.0, n), rng.uniform(0, 2 * np.pi, n),
    )
