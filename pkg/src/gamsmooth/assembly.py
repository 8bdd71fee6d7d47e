"""Model specification, data ingestion and design/penalty assembly.

A model is described declaratively (response, family, parametric terms,
smooth terms) and compiled against a named-column dataset into a dense design
matrix plus a list of zero-padded penalty matrices. Each smooth contributes a
sum-to-zero constrained block of cardinal spline columns and, depending on
its mode, one or two penalties:

plain      one wiggliness penalty, leaving the linear part unpenalized
shrinkage  one full-rank penalty (zero eigenvalues raised), so a single
           smoothing parameter can shrink the whole term away
double     the wiggliness penalty plus a separate null-space penalty with
           its own smoothing parameter
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import (
    EIG_TOL,
    KnotVector,
    PenaltyBlock,
    constraint,
    cr_basis,
    cr_penalty,
    nullspace_penalty,
    place_knots,
    shrinkage_penalty,
)
from .errors import DataError, DegenerateCovariateError
from .families import get_family

SMOOTH_MODES = ("plain", "shrinkage", "double")
INTERCEPT = "(intercept)"


class Dataset:
    """Columnar numeric table keyed by variable name.

    Columns are one-dimensional float arrays of equal length. Non-finite
    values are allowed at construction; they are rejected with row indices
    when a model actually references the column.
    """

    def __init__(self, columns: dict):
        cols = {}
        n = None
        for name, values in columns.items():
            arr = np.asarray(values, dtype=float).ravel()
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DataError(
                    f"column {name!r} has length {arr.size}, expected {n}"
                )
            cols[str(name)] = arr
        if not cols:
            raise DataError("dataset has no columns")
        self.columns = cols
        self.n = n

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self):
        return list(self.columns)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise DataError(f"cannot read CSV {path}: {exc}") from exc
        non_numeric = [c for c in frame.columns
                       if not np.issubdtype(frame[c].dtype, np.number)]
        if non_numeric:
            raise DataError(f"non-numeric columns in {path}: {non_numeric}")
        return cls({c: frame[c].to_numpy(dtype=float) for c in frame.columns})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def check_finite(self, names):
        """Raise DataError listing row indices with non-finite values."""
        bad = np.zeros(self.n, dtype=bool)
        for name in names:
            bad |= ~np.isfinite(self[name])
        if np.any(bad):
            rows = np.flatnonzero(bad)
            shown = ", ".join(map(str, rows[:20]))
            more = "" if rows.size <= 20 else f" (and {rows.size - 20} more)"
            raise DataError(
                f"non-finite values in referenced columns at rows "
                f"[{shown}]{more}; clean the data before fitting"
            )


@dataclass(frozen=True)
class SmoothSpec:
    """One smooth term: covariate name, basis size and penalty mode."""

    covariate: str
    k: int = 10
    mode: str = "plain"

    def __post_init__(self):
        if self.k < 3:
            raise ValueError(f"smooth of {self.covariate!r}: k must be >= 3")
        mode = {"double-penalty": "double"}.get(self.mode, self.mode)
        if mode not in SMOOTH_MODES:
            raise ValueError(
                f"smooth of {self.covariate!r}: mode must be one of "
                f"{SMOOTH_MODES}, got {self.mode!r}"
            )
        object.__setattr__(self, "mode", mode)

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "k": self.k, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothSpec":
        return cls(covariate=d["covariate"], k=int(d.get("k", 10)),
                   mode=d.get("mode", "plain"))


@dataclass(frozen=True)
class ModelSpec:
    """Declarative additive model description, JSON round-trippable."""

    response: str
    family: str = "gaussian"
    parametric_terms: tuple = ()
    smooths: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family).name)
        object.__setattr__(self, "parametric_terms",
                           tuple(self.parametric_terms))
        smooths = tuple(
            s if isinstance(s, SmoothSpec) else SmoothSpec.from_dict(s)
            for s in self.smooths
        )
        object.__setattr__(self, "smooths", smooths)
        names = [s.covariate for s in smooths]
        if len(set(names)) != len(names):
            raise ValueError("each covariate may carry at most one smooth")

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "family": self.family,
            "parametric_terms": list(self.parametric_terms),
            "smooths": [s.to_dict() for s in self.smooths],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            return cls(
                response=d["response"],
                family=d.get("family", "gaussian"),
                parametric_terms=tuple(d.get("parametric_terms", ())),
                smooths=tuple(d.get("smooths", ())),
            )
        except KeyError as exc:
            raise DataError(f"model spec is missing field {exc}") from None

    @classmethod
    def from_json(cls, source) -> "ModelSpec":
        if isinstance(source, (str, bytes)) and "{" in str(source):
            d = json.loads(source)
        else:
            try:
                with open(source, encoding="utf-8") as fh:
                    d = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read model spec {source}: {exc}") \
                    from exc
        if not isinstance(d, dict):
            raise DataError("model spec JSON must be an object")
        return cls.from_dict(d)


@dataclass
class TermInfo:
    """Column range and reconstruction data for one model term."""

    name: str
    kind: str                      # "intercept" | "parametric" | "smooth"
    start: int
    stop: int
    covariate: str | None = None
    knots: KnotVector | None = None
    Z: np.ndarray | None = None
    mode: str | None = None
    penalty_ids: tuple = ()
    penalized_rank: int = 0        # rank of the summed penalties on the block

    @property
    def width(self) -> int:
        return self.stop - self.start

    @property
    def unpenalized_dim(self) -> int:
        return self.width - self.penalized_rank

    def columns(self, x) -> np.ndarray:
        """Design columns of this term at new covariate values ``x``."""
        if self.kind == "intercept":
            return np.ones((np.atleast_1d(x).size, 1))
        if self.kind == "parametric":
            return np.atleast_1d(np.asarray(x, dtype=float))[:, None]
        return cr_basis(self.knots).evaluate(x) @ self.Z


@dataclass
class DesignMatrices:
    """Compiled design: dense X, padded penalties and term bookkeeping."""

    X: np.ndarray
    penalties: list
    penalty_ranks: list
    term_map: dict
    nullspace_dim_total: int
    _xtx: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_penalties(self) -> int:
        return len(self.penalties)

    def xtx(self) -> np.ndarray:
        if self._xtx is None:
            self._xtx = self.X.T @ self.X
        return self._xtx

    def smooth_terms(self):
        return [t for t in self.term_map.values() if t.kind == "smooth"]


def _normalize_penalty(S: np.ndarray, tol: float = EIG_TOL) -> np.ndarray:
    """Exact-zero the near-null spectrum and rescale to unit spectral norm.

    The constrained penalty inherits eigenvalues of order machine epsilon in
    its structural null space, and its overall scale depends on the covariate
    units (gaps enter the curvature integral cubed). Left alone, both effects
    get multiplied by the smoothing parameter and would wrongly penalize null
    directions once lambda is numerically infinite. Zeroing the null spectrum
    and normalizing the largest eigenvalue to one keeps ``lambda * S`` well
    conditioned over the whole optimization box; the smoothing parameter is
    then expressed relative to the normalized penalty.
    """
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    top = vals.max()
    if top <= 0.0:
        return np.zeros_like(S)
    vals = np.where(vals < tol * top, 0.0, vals / top)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def _matrix_rank_psd(S: np.ndarray) -> int:
    vals = np.linalg.eigvalsh(0.5 * (S + S.T))
    top = max(vals.max(), 0.0)
    if top == 0.0:
        return 0
    return int(np.sum(vals > EIG_TOL * top))


def _pad(block: np.ndarray, p: int, start: int) -> np.ndarray:
    out = np.zeros((p, p))
    stop = start + block.shape[0]
    out[start:stop, start:stop] = block
    return out


def build_design(data: Dataset, spec: ModelSpec) -> DesignMatrices:
    """Compile ``spec`` against ``data`` into design and penalty matrices.

    Parameters
    ----------
    data : Dataset
        Named numeric columns; every referenced column must be finite.
    spec : ModelSpec
        Model description. Smooth modes decide the penalty layout.

    Returns
    -------
    DesignMatrices
        Dense ``n x p`` design (intercept first), ``p x p`` padded penalty
        list, and a term map carrying knots and constraint transforms for
        later prediction. Penalty blocks are rescaled to unit spectral norm
        with their null spectra zeroed exactly, so smoothing parameters are
        expressed relative to the normalized penalties.
    """
    referenced = ([spec.response] + list(spec.parametric_terms)
                  + [s.covariate for s in spec.smooths])
    for name in referenced:
        data[name]  # raises DataError for unknown columns
    data.check_finite(referenced)

    n = data.n
    blocks = [np.ones((n, 1))]
    term_map: dict = {
        INTERCEPT: TermInfo(name=INTERCEPT, kind="intercept", start=0, stop=1)
    }
    col = 1
    for name in spec.parametric_terms:
        blocks.append(data[name][:, None])
        term_map[name] = TermInfo(name=name, kind="parametric",
                                  covariate=name, start=col, stop=col + 1)
        col += 1

    # Smooth blocks: basis, constraint, then per-mode penalties (still
    # unpadded; the final width is unknown until all terms are placed).
    pending = []
    for sm in spec.smooths:
        x = data[sm.covariate]
        knots = place_knots_checked(x, sm.k, sm.covariate)
        basis = cr_basis(knots)
        Xb = basis.evaluate(x)
        ct = constraint(Xb)
        Xc = Xb @ ct.Z
        S = cr_penalty(knots).S
        Sc = _normalize_penalty(ct.Z.T @ S @ ct.Z)
        width = ct.Z.shape[1]
        rank_c = _matrix_rank_psd(Sc)
        block_pens = []
        if sm.mode == "plain":
            block_pens.append((Sc, rank_c))
        elif sm.mode == "shrinkage":
            pb = PenaltyBlock(S=Sc, rank=rank_c,
                              nullspace_dim=width - rank_c)
            block_pens.append((shrinkage_penalty(pb).S, width))
        else:  # double
            pb = PenaltyBlock(S=Sc, rank=rank_c,
                              nullspace_dim=width - rank_c)
            block_pens.append((Sc, rank_c))
            block_pens.append((nullspace_penalty(pb), width - rank_c))
        name = f"s({sm.covariate})"
        info = TermInfo(name=name, kind="smooth", covariate=sm.covariate,
                        start=col, stop=col + width, knots=knots, Z=ct.Z,
                        mode=sm.mode)
        term_map[name] = info
        blocks.append(Xc)
        pending.append((info, block_pens))
        col += width

    p = col
    X = np.hstack(blocks)
    penalties = []
    penalty_ranks = []
    for info, block_pens in pending:
        ids = []
        for Sblk, rank in block_pens:
            ids.append(len(penalties))
            penalties.append(_pad(Sblk, p, info.start))
            penalty_ranks.append(rank)
        info.penalty_ids = tuple(ids)
        total = sum(
            penalties[i][info.start:info.stop, info.start:info.stop]
            for i in info.penalty_ids
        )
        info.penalized_rank = _matrix_rank_psd(total) if ids else 0

    nullspace_dim_total = p - sum(
        t.penalized_rank for t in term_map.values()
    )
    return DesignMatrices(X=X, penalties=penalties,
                          penalty_ranks=penalty_ranks, term_map=term_map,
                          nullspace_dim_total=nullspace_dim_total)


def place_knots_checked(x, k, covariate):
    """place_knots with the covariate name folded into the error message."""
    try:
        return place_knots(x, k)
    except DegenerateCovariateError as exc:
        raise DegenerateCovariateError(f"covariate {covariate!r}: {exc}") \
            from None


def assemble_penalty(lambdas, penalties) -> np.ndarray:
    """Weighted penalty sum ``sum_m lambda_m S_m`` as a dense PSD matrix."""
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size != len(penalties):
        raise ValueError(
            f"{lambdas.size} smoothing parameters for "
            f"{len(penalties)} penalties"
        )
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ValueError("smoothing parameters must be finite and >= 0")
    if not penalties:
        raise ValueError("no penalties to assemble")
    p = penalties[0].shape[0]
    total = np.zeros((p, p))
    for lam, S in zip(lambdas, penalties):
        total += lam * S
    return 0.5 * (total + total.T)


def prediction_matrix(term_map: dict, p: int, data) -> np.ndarray:
    """Full-model linear map from coefficients to the linear predictor.

    ``data`` is a Dataset or a dict of arrays covering every covariate the
    model uses. Row ``i`` of the result dotted with the coefficient vector
    gives the linear predictor at observation ``i``.
    """
    if isinstance(data, dict):
        data = Dataset(data)
    n = data.n
    L = np.zeros((n, p))
    for info in term_map.values():
        if info.kind == "intercept":
            L[:, info.start:info.stop] = 1.0
        else:
            L[:, info.start:info.stop] = info.columns(data[info.covariate])
    return L


def term_matrix(term_map: dict, p: int, term: str, x) -> np.ndarray:
    """Linear map picking out a single term's contribution at points ``x``.

    Columns outside the term are zero, so the implied curve is the centered
    term effect without the intercept.
    """
    if term not in term_map:
        raise DataError(
            f"unknown term {term!r}; model terms are {list(term_map)}"
        )
    info = term_map[term]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = np.zeros((x.size, p))
    L[:, info.start:info.stop] = info.columns(x)
    return L
