"""Versioned JSON model files: save a fit, load it back for prediction.

A model file carries everything needed to reproduce fitted values and bands
without the training data: the model spec, per-term knots and constraint
transforms, coefficients, smoothing parameters and the stored posterior
covariances. Arrays are plain nested lists; the format is versioned so later
revisions can stay readable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .assembly import TermInfo
from .basis import KnotVector
from .errors import DataError
from .families import Family, get_family
from .fit import FittedModel

FORMAT_VERSION = 1


def _term_to_dict(info: TermInfo) -> dict:
    return {
        "name": info.name,
        "kind": info.kind,
        "start": info.start,
        "stop": info.stop,
        "covariate": info.covariate,
        "mode": info.mode,
        "knots": None if info.knots is None else info.knots.values.tolist(),
        "Z": None if info.Z is None else np.asarray(info.Z).tolist(),
        "penalty_ids": list(info.penalty_ids),
        "penalized_rank": info.penalized_rank,
    }


def _term_from_dict(d: dict) -> TermInfo:
    return TermInfo(
        name=d["name"], kind=d["kind"], start=int(d["start"]),
        stop=int(d["stop"]), covariate=d.get("covariate"),
        knots=None if d.get("knots") is None
        else KnotVector(np.asarray(d["knots"], dtype=float)),
        Z=None if d.get("Z") is None else np.asarray(d["Z"], dtype=float),
        mode=d.get("mode"),
        penalty_ids=tuple(d.get("penalty_ids", ())),
        penalized_rank=int(d.get("penalized_rank", 0)),
    )


@dataclass
class ModelArtifact:
    """A reloaded model file: enough state to predict and build bands."""

    term_map: dict
    p: int
    beta_hat: np.ndarray
    family: Family
    rho_hat: np.ndarray
    lambda_hat: np.ndarray
    phi_hat: float
    edf_per_term: dict
    edf_total: float
    reml_value: float
    seed: int
    n_obs: int
    spec_dict: dict
    cov_eb: np.ndarray
    cov_corrected: np.ndarray | None = None

    def smooth_terms(self):
        return [t for t in self.term_map.values() if t.kind == "smooth"]

    def covariance(self, kind: str) -> np.ndarray:
        if kind == "eb":
            return self.cov_eb
        if kind == "corrected":
            if self.cov_corrected is None:
                raise DataError(
                    "model file stores no corrected covariance; re-run the "
                    "fit with --correct-cov"
                )
            return self.cov_corrected
        raise ValueError(f"kind must be 'eb' or 'corrected', got {kind!r}")

    def predict(self, data, scale: str = "response") -> np.ndarray:
        from .assembly import prediction_matrix

        eta = prediction_matrix(self.term_map, self.p, data) @ self.beta_hat
        return eta if scale == "linear" else self.family.inv_link(eta)


def save_model(fit: FittedModel, path, cov_eb: np.ndarray,
               cov_corrected: np.ndarray | None = None,
               seed: int | None = None) -> None:
    """Write ``fit`` as a versioned JSON model file."""
    payload = {
        "format_version": FORMAT_VERSION,
        "tool": "gamsmooth",
        "spec": fit.spec.to_dict() if fit.spec is not None else None,
        "family": fit.family.name,
        "seed": int(fit.seed if seed is None else seed),
        "n_obs": int(fit.y.size),
        "p": int(fit.design.p),
        "beta": fit.beta_hat.tolist(),
        "rho": fit.rho_hat.tolist(),
        "lambda": fit.lambda_hat.tolist(),
        "phi": float(fit.phi_hat),
        "reml": float(fit.reml_value),
        "edf": {k: float(v) for k, v in fit.edf_per_term.items()},
        "edf_total": float(fit.edf_total),
        "rho_hessian": None if fit.rho_hessian is None
        else np.asarray(fit.rho_hessian).tolist(),
        "terms": [_term_to_dict(t) for t in fit.design.term_map.values()],
        "cov_eb": np.asarray(cov_eb).tolist(),
        "cov_corrected": None if cov_corrected is None
        else np.asarray(cov_corrected).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelArtifact:
    """Read a model file written by ``save_model``."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"unsupported model file version {version!r} in {path}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    try:
        terms = [_term_from_dict(t) for t in d["terms"]]
        return ModelArtifact(
            term_map={t.name: t for t in terms},
            p=int(d["p"]),
            beta_hat=np.asarray(d["beta"], dtype=float),
            family=get_family(d["family"]),
            rho_hat=np.asarray(d["rho"], dtype=float),
            lambda_hat=np.asarray(d["lambda"], dtype=float),
            phi_hat=float(d["phi"]),
            edf_per_term={k: float(v) for k, v in d["edf"].items()},
            edf_total=float(d["edf_total"]),
            reml_value=float(d["reml"]),
            seed=int(d["seed"]),
            n_obs=int(d["n_obs"]),
            spec_dict=d.get("spec") or {},
            cov_eb=np.asarray(d["cov_eb"], dtype=float),
            cov_corrected=None if d.get("cov_corrected") is None
            else np.asarray(d["cov_corrected"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc
