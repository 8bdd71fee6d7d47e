"""Shared fixtures and hand-built design helpers."""

import numpy as np
import pytest

from gamsmooth.assembly import DesignMatrices, TermInfo
from gamsmooth.families import get_family
from gamsmooth.fit import FittedModel, _criterion_state, edf


def hand_design(X, blocks, parametric_cols=()):
    """Build a DesignMatrices directly from explicit penalty blocks.

    Parameters
    ----------
    X : ndarray
        Dense design matrix.
    blocks : list of (start, stop, [(S_block, rank), ...])
        Column ranges treated as smooth terms with the given penalty
        blocks. Block ranks must be the structural ranks at positive
        smoothing parameters.
    parametric_cols : iterable of int
        Columns recorded as unpenalized one-column terms.

    Returns
    -------
    DesignMatrices
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    penalties, penalty_ranks, term_map = [], [], {}
    rank_total = 0
    for col in parametric_cols:
        term_map[f"c{col}"] = TermInfo(
            name=f"c{col}", kind="parametric", start=col, stop=col + 1,
        )
    for t, (start, stop, pens) in enumerate(blocks):
        ids, block_rank = [], 0
        for S_blk, rank in pens:
            S_pad = np.zeros((p, p))
            S_pad[start:stop, start:stop] = S_blk
            ids.append(len(penalties))
            penalties.append(S_pad)
            penalty_ranks.append(rank)
            block_rank += rank
        name = f"t{t}"
        term_map[name] = TermInfo(
            name=name, kind="smooth", start=start, stop=stop,
            penalty_ids=tuple(ids), penalized_rank=block_rank,
        )
        rank_total += block_rank
    return DesignMatrices(
        X=X, penalties=penalties, penalty_ranks=penalty_ranks,
        term_map=term_map, nullspace_dim_total=p - rank_total,
    )


def fixed_rho_fit(design, y, family, rho, phi=None):
    """FittedModel at a fixed log smoothing parameter, skipping the
    criterion optimization. No curvature information is attached."""
    y = np.asarray(y, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    st = _criterion_state(rho, design, y, family, phi=phi)
    per_term, total = edf(design, st.pirls.weights, st.lambdas)
    return FittedModel(
        design=design, y=y, family=get_family(family),
        beta_hat=st.pirls.beta_hat, rho_hat=rho, lambda_hat=st.lambdas,
        phi_hat=st.phi, reml_value=st.value, rho_hessian=None,
        edf_per_term=per_term, edf_total=total,
        weights=st.pirls.weights, pirls=st.pirls, seed=0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)
