"""Model fitting: penalized IRLS inner loop and REML outer optimization.

The coefficient estimate maximizes the penalized log-likelihood

    l(beta) - 0.5 * sum_m lambda_m beta' S_m beta / phi,

equivalently the posterior mode under the improper Gaussian prior with
precision ``S_lambda / phi``. Smoothing parameters are chosen by minimizing
the negative log of the Laplace-approximate marginal likelihood; for the
gaussian family the approximation is exact and the scale parameter is
profiled out analytically, with ``n - M_p`` in the denominator where ``M_p``
counts unpenalized coefficient directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .assembly import (
    Dataset,
    DesignMatrices,
    ModelSpec,
    assemble_penalty,
    build_design,
    prediction_matrix,
)
from .errors import NumericalError, OptimizationError, PirlsDivergenceError
from .families import Family, get_family

PIRLS_MAX_ITER = 100
PIRLS_TOL = 1e-8
MAX_STEP_HALVINGS = 30
RHO_BOUND = 12.0
FD_STEP = 1e-3


def _solve_spd(A: np.ndarray, rhs: np.ndarray):
    """Solve ``A x = rhs`` for symmetric PSD ``A``.

    Tries Cholesky first; a singular (but consistent) system falls back to
    the minimum-norm least-squares solution, which leaves fitted values
    unchanged whenever the null directions of ``A`` are null directions of
    the design.  Returns ``(x, logdet_or_None, fallback_used)``.
    """
    try:
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        x = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        return x, logdet, False
    except scipy.linalg.LinAlgError:
        x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        return x, None, True


@dataclass
class PirlsResult:
    """Converged state of the penalized IRLS loop."""

    beta_hat: np.ndarray
    weights: np.ndarray          # final Fisher weight diagonal
    deviance: float
    penalty_quad: float          # beta' S_lambda beta at the estimate
    penalized_ll: float          # unit-scale log-likelihood minus penalty/2
    iterations: int
    converged: bool
    singular_fallback: bool
    trace: list = field(default_factory=list)


def pirls(design: DesignMatrices, y, family, lambdas, beta_init=None,
          max_iter: int = PIRLS_MAX_ITER, tol: float = PIRLS_TOL
          ) -> PirlsResult:
    """Penalized iteratively reweighted least squares.

    Parameters
    ----------
    design : DesignMatrices
        Compiled design and penalties.
    y : array_like
        Response vector of length ``design.n``.
    family : Family or str
        Response distribution; gaussian-identity converges in one step.
    lambdas : array_like
        Non-negative smoothing parameters, one per penalty.
    beta_init : array_like, optional
        Warm start for the coefficient vector.

    Returns
    -------
    PirlsResult

    Raises
    ------
    PirlsDivergenceError
        If the penalized deviance cannot be decreased or the loop fails to
        converge within ``max_iter`` iterations. The error carries the
        iterate trace.
    """
    family = get_family(family)
    y = np.asarray(y, dtype=float).ravel()
    X = design.X
    if y.size != design.n:
        raise ValueError(f"y has length {y.size}, expected {design.n}")
    if design.n_penalties:
        S_lam = assemble_penalty(lambdas, design.penalties)
    else:
        lambdas = np.asarray(lambdas, dtype=float).ravel()
        if lambdas.size:
            raise ValueError("smoothing parameters given but model has "
                             "no penalties")
        S_lam = np.zeros((design.p, design.p))

    def penalized_deviance(beta, mu):
        return family.deviance(y, mu) + float(beta @ S_lam @ beta)

    fallback = False

    # Gaussian identity: the working model is the model, one solve is exact.
    if family.name == "gaussian":
        A = design.xtx() + S_lam
        beta, _, fallback = _solve_spd(A, X.T @ y)
        if not np.all(np.isfinite(beta)):
            raise NumericalError("penalized least squares produced "
                                 "non-finite coefficients")
        mu = X @ beta
        dev = family.deviance(y, mu)
        pen = float(beta @ S_lam @ beta)
        return PirlsResult(
            beta_hat=beta, weights=np.ones_like(y), deviance=dev,
            penalty_quad=pen,
            penalized_ll=family.loglik(y, mu, 1.0) - 0.5 * pen,
            iterations=1, converged=True, singular_fallback=fallback,
            trace=[dev + pen],
        )

    if beta_init is not None:
        beta = np.asarray(beta_init, dtype=float).ravel()
        eta = X @ beta
        mu = family.inv_link(eta)
        pdev = penalized_deviance(beta, mu)
    else:
        beta = None
        mu = family.init_mu(y)
        eta = family.link(mu)
        pdev = math.inf
    trace = [] if beta is None else [pdev]

    for iteration in range(1, max_iter + 1):
        w = family.variance(mu)
        z = eta + (y - mu) / family.mu_eta(mu)
        A = X.T @ (w[:, None] * X) + S_lam
        rhs = X.T @ (w * z)
        beta_new, _, fb = _solve_spd(A, rhs)
        fallback = fallback or fb
        if not np.all(np.isfinite(beta_new)):
            raise PirlsDivergenceError(
                "working model produced non-finite coefficients", trace=trace
            )

        mu_new = family.inv_link(X @ beta_new)
        pdev_new = penalized_deviance(beta_new, mu_new)
        if beta is not None:
            halvings = 0
            while (pdev_new > pdev + 1e-12 * (1.0 + abs(pdev))
                   and halvings < MAX_STEP_HALVINGS):
                beta_new = 0.5 * (beta_new + beta)
                mu_new = family.inv_link(X @ beta_new)
                pdev_new = penalized_deviance(beta_new, mu_new)
                halvings += 1
            if pdev_new > pdev + 1e-12 * (1.0 + abs(pdev)):
                raise PirlsDivergenceError(
                    f"penalized deviance would not decrease after "
                    f"{MAX_STEP_HALVINGS} step halvings at iteration "
                    f"{iteration}", trace=trace + [pdev_new]
                )

        beta = beta_new
        mu = mu_new
        eta = X @ beta
        trace.append(pdev_new)
        rel_change = abs(pdev - pdev_new) / max(abs(pdev_new), 1e-8)
        pdev = pdev_new
        if rel_change < tol:
            pen = float(beta @ S_lam @ beta)
            return PirlsResult(
                beta_hat=beta, weights=family.variance(mu),
                deviance=family.deviance(y, mu), penalty_quad=pen,
                penalized_ll=family.loglik(y, mu, 1.0) - 0.5 * pen,
                iterations=iteration, converged=True,
                singular_fallback=fallback, trace=trace,
            )

    raise PirlsDivergenceError(
        f"no convergence after {max_iter} iterations "
        f"(last relative change {rel_change:.3e})", trace=trace
    )


def _pseudo_logdet_penalty(design: DesignMatrices, lambdas) -> float:
    """log pseudo-determinant of ``S_lambda``, computed block by block.

    Penalties of a term live on disjoint column ranges, so the nonzero
    spectrum of the padded sum is the union of the per-block spectra. The
    rank of each block at positive smoothing parameters is fixed by the
    penalty structure, which avoids threshold ambiguity at extreme lambdas.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    total = 0.0
    for info in design.smooth_terms():
        r = info.penalized_rank
        if r == 0 or not info.penalty_ids:
            continue
        blk = slice(info.start, info.stop)
        Sb = np.zeros((info.width, info.width))
        for i in info.penalty_ids:
            Sb += lambdas[i] * design.penalties[i][blk, blk]
        vals = np.linalg.eigvalsh(0.5 * (Sb + Sb.T))
        top_r = vals[-r:]
        if np.any(top_r <= 0.0):
            raise NumericalError(
                f"penalty block of {info.name} lost rank at "
                f"lambda={lambdas[list(info.penalty_ids)]}"
            )
        total += float(np.sum(np.log(top_r)))
    return total


@dataclass
class _CriterionState:
    value: float
    pirls: PirlsResult
    phi: float
    lambdas: np.ndarray


def _criterion_state(rho, design, y, family, phi=None, beta_init=None
                     ) -> _CriterionState:
    family = get_family(family)
    y = np.asarray(y, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if rho.size != design.n_penalties:
        raise ValueError(
            f"rho has length {rho.size}, expected {design.n_penalties}"
        )
    lambdas = np.exp(rho)
    pr = pirls(design, y, family, lambdas, beta_init=beta_init)
    n = y.size
    p = design.p
    m_p = design.nullspace_dim_total
    r_total = p - m_p
    dev = pr.deviance
    pen = pr.penalty_quad

    if phi is None:
        if family.scale_known:
            phi = 1.0
        else:
            if n <= m_p:
                raise NumericalError(
                    f"cannot profile the scale with n={n} observations and "
                    f"{m_p} unpenalized coefficients"
                )
            phi = (dev + pen) / (n - m_p)
    phi = float(phi)

    mu = family.inv_link(design.X @ pr.beta_hat)
    ll = family.loglik(y, mu, phi)
    if family.name == "gaussian":
        A = design.xtx()
    else:
        A = design.X.T @ (pr.weights[:, None] * design.X)
    if design.n_penalties:
        A = A + assemble_penalty(lambdas, design.penalties)
    try:
        c = scipy.linalg.cholesky(A, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise NumericalError(
            "penalized information matrix is singular; the model is "
            f"unidentifiable (condition estimate {np.linalg.cond(A):.2e})"
        ) from None
    logdet_A = 2.0 * float(np.sum(np.log(np.diag(c))))
    logdet_S = _pseudo_logdet_penalty(design, lambdas)

    value = (-ll + 0.5 * pen / phi
             + 0.5 * (logdet_A - p * math.log(phi))
             - 0.5 * (logdet_S - r_total * math.log(phi))
             - 0.5 * m_p * math.log(2.0 * math.pi))
    return _CriterionState(value=float(value), pirls=pr, phi=phi,
                           lambdas=lambdas)


def reml_criterion(rho, design, y, family, phi=None) -> float:
    """Negative log marginal likelihood at log smoothing parameters ``rho``.

    For the gaussian family the scale is profiled out analytically unless
    ``phi`` is given; known-scale families use ``phi = 1``. Exact for
    gaussian models, Laplace-approximate otherwise.
    """
    return _criterion_state(rho, design, y, family, phi=phi).value


def edf(design: DesignMatrices, weights, lambdas):
    """Effective degrees of freedom, per term and total.

    Based on ``F = (X'WX + S_lambda)^{-1} X'WX``; a term's EDF is the sum of
    the diagonal of ``F`` over its columns and the total is ``trace(F)``.

    Returns
    -------
    (dict, float)
        Per-term EDF keyed by term name, and the total.
    """
    weights = np.asarray(weights, dtype=float).ravel()
    XtWX = design.X.T @ (weights[:, None] * design.X)
    if design.n_penalties:
        A = XtWX + assemble_penalty(lambdas, design.penalties)
    else:
        A = XtWX
    F, _, _ = _solve_spd(A, XtWX)
    diag = np.diag(F)
    per_term = {
        name: float(diag[info.start:info.stop].sum())
        for name, info in design.term_map.items()
    }
    return per_term, float(diag.sum())


def _fd_hessian(fun, x0, step=FD_STEP) -> np.ndarray:
    """Central finite-difference Hessian of ``fun`` at ``x0``."""
    m = x0.size
    H = np.zeros((m, m))
    f0 = fun(x0)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = step
        H[i, i] = (fun(x0 + ei) - 2.0 * f0 + fun(x0 - ei)) / step**2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = step
            H[i, j] = H[j, i] = (
                fun(x0 + ei + ej) - fun(x0 + ei - ej)
                - fun(x0 - ei + ej) + fun(x0 - ei - ej)
            ) / (4.0 * step**2)
    return 0.5 * (H + H.T)


@dataclass
class FittedModel:
    """A fitted penalized additive model and everything needed downstream."""

    design: DesignMatrices
    y: np.ndarray
    family: Family
    beta_hat: np.ndarray
    rho_hat: np.ndarray
    lambda_hat: np.ndarray
    phi_hat: float
    reml_value: float
    rho_hessian: np.ndarray | None
    edf_per_term: dict
    edf_total: float
    weights: np.ndarray
    pirls: PirlsResult
    seed: int
    spec: ModelSpec | None = None
    optimizer_converged: bool = True

    @property
    def term_map(self) -> dict:
        return self.design.term_map

    def smoothing_penalty(self) -> np.ndarray:
        if not self.design.n_penalties:
            return np.zeros((self.design.p, self.design.p))
        return assemble_penalty(self.lambda_hat, self.design.penalties)

    def linear_predictor(self) -> np.ndarray:
        return self.design.X @ self.beta_hat

    def fitted_values(self) -> np.ndarray:
        return self.family.inv_link(self.linear_predictor())

    def predict(self, data, scale: str = "response") -> np.ndarray:
        """Predict at new data (Dataset or dict of covariate arrays)."""
        L = prediction_matrix(self.term_map, self.design.p, data)
        eta = L @ self.beta_hat
        if scale == "linear":
            return eta
        if scale == "response":
            return self.family.inv_link(eta)
        raise ValueError(f"scale must be 'linear' or 'response', got {scale!r}")


def optimize_reml(design: DesignMatrices, y, family="gaussian",
                  n_starts: int = 5, seed: int = 0, bound: float = RHO_BOUND,
                  xatol: float = 1e-6, fatol: float = 1e-9,
                  hessian_step: float = FD_STEP,
                  compute_hessian: bool = True,
                  spec: ModelSpec | None = None) -> FittedModel:
    """Estimate smoothing parameters by Nelder-Mead on the REML criterion.

    The search runs over ``rho = log(lambda)`` in the box ``[-bound, bound]``
    from ``n_starts`` seeded random start points, keeping the best converged
    optimum. The curvature of the criterion at the optimum is recorded via
    central finite differences for later smoothing-uncertainty corrections.

    Returns
    -------
    FittedModel
    """
    family = get_family(family)
    y = np.asarray(y, dtype=float).ravel()
    family.validate_response(y)
    M = design.n_penalties

    def criterion(rho):
        return _criterion_state(rho, design, y, family).value

    if M == 0:
        state = _criterion_state(np.zeros(0), design, y, family)
        rho_hat = np.zeros(0)
        hess = np.zeros((0, 0))
        converged = True
    else:
        rng = np.random.default_rng(seed)
        # Starts stay away from the box walls, where the criterion is
        # nearly flat and the simplex would stall.
        starts = rng.uniform(-bound * 2 / 3, bound * 2 / 3, size=(n_starts, M))
        best = None
        failures = []
        for x0 in starts:
            try:
                res = minimize(
                    criterion, x0, method="Nelder-Mead",
                    bounds=[(-bound, bound)] * M,
                    options={
                        "xatol": xatol, "fatol": fatol,
                        "maxiter": 400 * M * 5, "maxfev": 400 * M * 5,
                    },
                )
            except NumericalError as exc:
                failures.append(f"start {np.round(x0, 3)}: {exc}")
                continue
            if best is None or res.fun < best.fun:
                best = res
        if best is None:
            raise OptimizationError(
                "all smoothing-parameter starts failed", trace=failures
            )
        rho_hat = np.clip(best.x, -bound, bound)
        converged = bool(best.success)
        hess = _fd_hessian(criterion, rho_hat, hessian_step) \
            if compute_hessian else None
        state = _criterion_state(rho_hat, design, y, family)

    per_term, total = edf(design, state.pirls.weights, state.lambdas)
    return FittedModel(
        design=design, y=y, family=family,
        beta_hat=state.pirls.beta_hat, rho_hat=rho_hat,
        lambda_hat=state.lambdas, phi_hat=state.phi,
        reml_value=state.value, rho_hessian=hess,
        edf_per_term=per_term, edf_total=total,
        weights=state.pirls.weights, pirls=state.pirls, seed=seed,
        spec=spec, optimizer_converged=converged,
    )


def fit_additive_model(data: Dataset, spec: ModelSpec, **options
                       ) -> FittedModel:
    """Compile ``spec`` against ``data`` and run the full REML fit."""
    if not isinstance(spec, ModelSpec):
        spec = ModelSpec.from_dict(spec)
    design = build_design(data, spec)
    y = data[spec.response]
    return optimize_reml(design, y, family=spec.family, spec=spec, **options)
