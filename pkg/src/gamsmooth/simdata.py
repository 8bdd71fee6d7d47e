"""Benchmark data generator using the classic Gu-Wahba test functions.

Four independent uniform covariates drive four signal components: a sine, an
exponential, a sharp double bump and an identically zero function. The zero
component makes the suite useful for term-selection and uncertainty studies,
since any effective degrees of freedom assigned to it are spurious.
"""

from __future__ import annotations

import numpy as np

from .assembly import Dataset

COLUMN_ORDER = ("x0", "x1", "x2", "x3", "f0", "f1", "f2", "f3", "f_total", "y")


def f0(x):
    """Sine bump: ``2 sin(pi x)``."""
    x = np.asarray(x, dtype=float)
    return 2.0 * np.sin(np.pi * x)


def f1(x):
    """Exponential ramp: ``exp(2 x)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(2.0 * x)


def f2(x):
    """Sharp double bump, the hardest component to track."""
    x = np.asarray(x, dtype=float)
    return (0.2 * x**11 * (10.0 * (1.0 - x)) ** 6
            + 10.0 * (10.0 * x) ** 3 * (1.0 - x) ** 10)


def f3(x):
    """No signal: identically zero."""
    return np.zeros_like(np.asarray(x, dtype=float))


TEST_FUNCTIONS = (f0, f1, f2, f3)


class SimDataset(Dataset):
    """Dataset plus the generator settings that produced it."""

    def __init__(self, columns, seed: int, sigma: float):
        super().__init__(columns)
        self.seed = int(seed)
        self.sigma = float(sigma)


def gu_wahba_data(n: int, sigma: float = 1.0, seed: int = 0) -> SimDataset:
    """Simulate the four-term benchmark: ``y = sum_j f_j(x_j) + noise``.

    Parameters
    ----------
    n : int
        Number of rows; must be positive.
    sigma : float
        Standard deviation of the additive gaussian noise, non-negative.
    seed : int
        Seed for the covariate and noise streams.

    Returns
    -------
    SimDataset
        Columns ``x0..x3, f0..f3, f_total, y`` in that order.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    # Draw order is part of the contract: covariates first, then noise, so
    # derived datasets can reuse the identical noise realization.
    x = rng.uniform(size=(n, 4))
    noise = sigma * rng.standard_normal(n)
    cols = {}
    signals = []
    for j in range(4):
        cols[f"x{j}"] = x[:, j]
    for j, fj in enumerate(TEST_FUNCTIONS):
        signals.append(fj(x[:, j]))
    for j in range(4):
        cols[f"f{j}"] = signals[j]
    total = np.sum(signals, axis=0)
    cols["f_total"] = total
    cols["y"] = total + noise
    return SimDataset(cols, seed=seed, sigma=sigma)


def two_smooth_subset(sim: SimDataset) -> Dataset:
    """Reduced dataset with only the bump and the zero component as signal.

    The response is regenerated as ``f2(x2) + f3(x3)`` plus the parent
    dataset's own noise realization (recovered exactly as ``y - f_total``),
    so the reduced and full problems share covariates and errors. Only the
    columns the reduced model needs are kept.
    """
    for name in ("x2", "x3", "f2", "f3", "f_total", "y"):
        if name not in sim:
            raise ValueError(
                f"input lacks column {name!r}; pass a gu_wahba_data result"
            )
    noise = sim["y"] - sim["f_total"]
    y = sim["f2"] + sim["f3"] + noise
    return Dataset({
        "x2": sim["x2"],
        "x3": sim["x3"],
        "f2": sim["f2"],
        "f3": sim["f3"],
        "y": y,
    })
