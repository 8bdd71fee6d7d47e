"""Model file round trips and failure modes."""

import json

import numpy as np
import pytest

from gamsmooth import load_model, save_model
from gamsmooth.assembly import Dataset, ModelSpec, SmoothSpec
from gamsmooth.errors import DataError
from gamsmooth.fit import fit_additive_model
from gamsmooth.modelio import FORMAT_VERSION
from gamsmooth.posterior import corrected_cov, posterior_cov


@pytest.fixture(scope="module")
def small_fit():
    rng = np.random.default_rng(8)
    x = rng.uniform(size=120)
    z = rng.uniform(size=120)
    y = np.sin(2.0 * np.pi * x) + 0.4 * z + 0.3 * rng.standard_normal(120)
    data = Dataset({"x": x, "z": z, "y": y})
    spec = ModelSpec(response="y", parametric_terms=("z",),
                     smooths=(SmoothSpec("x", k=8),))
    return fit_additive_model(data, spec, n_starts=2, seed=0), data


def test_round_trip_reproduces_predictions(small_fit, tmp_path):
    fit, data = small_fit
    path = tmp_path / "model.json"
    save_model(fit, path, cov_eb=posterior_cov(fit).V,
               cov_corrected=corrected_cov(fit).V, seed=7)
    art = load_model(path)

    np.testing.assert_array_equal(art.predict(data), fit.fitted_values())
    np.testing.assert_array_equal(art.beta_hat, fit.beta_hat)
    np.testing.assert_array_equal(art.lambda_hat, fit.lambda_hat)
    assert art.phi_hat == fit.phi_hat
    assert art.seed == 7
    assert art.n_obs == 120
    assert art.edf_per_term == pytest.approx(fit.edf_per_term)
    assert [t.name for t in art.smooth_terms()] == ["s(x)"]
    assert art.covariance("corrected").shape == art.covariance("eb").shape


def test_missing_corrected_covariance_is_explicit(small_fit, tmp_path):
    fit, _ = small_fit
    path = tmp_path / "model.json"
    save_model(fit, path, cov_eb=posterior_cov(fit).V)
    art = load_model(path)
    with pytest.raises(DataError, match="--correct-cov"):
        art.covariance("corrected")
    with pytest.raises(ValueError, match="kind"):
        art.covariance("fb")


def test_version_gate(small_fit, tmp_path):
    fit, _ = small_fit
    path = tmp_path / "model.json"
    save_model(fit, path, cov_eb=posterior_cov(fit).V)
    payload = json.loads(path.read_text())
    payload["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="version"):
        load_model(path)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_model(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError, match="cannot read"):
        load_model(bad)
    truncated = tmp_path / "truncated.json"
    truncated.write_text(json.dumps({"format_version": FORMAT_VERSION}))
    with pytest.raises(DataError, match="malformed"):
        load_model(truncated)
