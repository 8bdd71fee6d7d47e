"""Response distributions and canonical links for the additive model.

Three families are supported: gaussian with identity link, poisson with log
link and bernoulli with logit link. All links are canonical, so the Fisher
weights used by the penalized IRLS loop equal the variance function at the
current mean.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, xlogy

# Linear predictors are clamped before exponentiation so a wild iterate
# cannot overflow; 1e-10 keeps binomial variances bounded away from zero.
_ETA_CLIP = 30.0
_MU_EPS = 1e-10


class Family:
    """Base class; subclasses fill in link and likelihood details."""

    name: str = ""
    link_name: str = ""
    scale_known: bool = True

    def link(self, mu):
        raise NotImplementedError

    def inv_link(self, eta):
        raise NotImplementedError

    def variance(self, mu):
        """Variance function V(mu), without the scale parameter."""
        raise NotImplementedError

    def mu_eta(self, mu):
        """Derivative d mu / d eta expressed through mu (canonical links)."""
        raise NotImplementedError

    def init_mu(self, y):
        raise NotImplementedError

    def deviance(self, y, mu):
        raise NotImplementedError

    def loglik(self, y, mu, phi=1.0):
        raise NotImplementedError

    def validate_response(self, y):
        """Raise ValueError when ``y`` is outside the family's support."""

    def __repr__(self):
        return f"<Family {self.name}({self.link_name})>"


class Gaussian(Family):
    name = "gaussian"
    link_name = "identity"
    scale_known = False

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inv_link(self, eta):
        return np.asarray(eta, dtype=float)

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def mu_eta(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def init_mu(self, y):
        return np.asarray(y, dtype=float)

    def deviance(self, y, mu):
        r = np.asarray(y, dtype=float) - mu
        return float(r @ r)

    def loglik(self, y, mu, phi=1.0):
        y = np.asarray(y, dtype=float)
        n = y.size
        return float(-0.5 * n * np.log(2.0 * np.pi * phi)
                     - 0.5 * self.deviance(y, mu) / phi)


class Poisson(Family):
    name = "poisson"
    link_name = "log"

    def link(self, mu):
        return np.log(np.maximum(mu, _MU_EPS))

    def inv_link(self, eta):
        return np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))

    def variance(self, mu):
        return np.maximum(mu, _MU_EPS)

    def mu_eta(self, mu):
        return np.maximum(mu, _MU_EPS)

    def init_mu(self, y):
        return np.asarray(y, dtype=float) + 0.1

    def deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        mu = np.maximum(mu, _MU_EPS)
        return float(2.0 * np.sum(xlogy(y, y / mu) - (y - mu)))

    def loglik(self, y, mu, phi=1.0):
        y = np.asarray(y, dtype=float)
        mu = np.maximum(mu, _MU_EPS)
        return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("poisson responses must be non-negative integers")


class Binomial(Family):
    name = "binomial"
    link_name = "logit"

    def link(self, mu):
        mu = np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)
        return np.log(mu / (1.0 - mu))

    def inv_link(self, eta):
        return expit(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))

    def variance(self, mu):
        mu = np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)
        return mu * (1.0 - mu)

    def mu_eta(self, mu):
        return self.variance(mu)

    def init_mu(self, y):
        return (np.asarray(y, dtype=float) + 0.5) / 2.0

    def deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        mu = np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)
        return float(2.0 * np.sum(xlogy(y, y / mu)
                                  + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu))))

    def loglik(self, y, mu, phi=1.0):
        y = np.asarray(y, dtype=float)
        mu = np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)
        return float(np.sum(xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu)))

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("binomial responses must be 0 or 1")


GAUSSIAN = Gaussian()
POISSON = Poisson()
BINOMIAL = Binomial()

FAMILIES = {
    "gaussian": GAUSSIAN,
    "gaussian-identity": GAUSSIAN,
    "normal": GAUSSIAN,
    "poisson": POISSON,
    "poisson-log": POISSON,
    "binomial": BINOMIAL,
    "binomial-logit": BINOMIAL,
    "bernoulli": BINOMIAL,
}


def get_family(family) -> Family:
    """Resolve a family name or instance to a ``Family`` object."""
    if isinstance(family, Family):
        return family
    try:
        return FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(
            f"unknown family {family!r}; choose from "
            f"{sorted(set(f.name for f in FAMILIES.values()))}"
        ) from None
