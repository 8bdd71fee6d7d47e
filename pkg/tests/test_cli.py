"""Command line behavior: outputs, exit codes, determinism, manifests.

Commands are driven through ``main(argv)`` so the tests exercise argument
parsing and error mapping without spawning subprocesses.
"""

import json
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from gamsmooth import cli, load_model
from gamsmooth.assembly import Dataset, ModelSpec, SmoothSpec
from gamsmooth.cli import read_matrix_panels
from gamsmooth.fit import fit_additive_model


def spec_json(path, covariates, k=10, mode="plain", parametric=()):
    spec = ModelSpec(
        response="y",
        parametric_terms=tuple(parametric),
        smooths=tuple(SmoothSpec(c, k=k, mode=mode) for c in covariates),
    )
    path.write_text(json.dumps(spec.to_dict()))
    return path


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    """One simulated dataset plus a shrinkage and a plain fit of it."""
    root = tmp_path_factory.mktemp("cli")
    sim = root / "sim.csv"
    assert cli.main(["simulate", "--n", "400", "--sigma", "1",
                     "--seed", "2", "--out", str(sim)]) == 0
    spec4 = spec_json(root / "spec4.json", ["x0", "x1", "x2", "x3"])

    fit_shr = root / "fit_shr"
    assert cli.main(["fit", str(spec4), str(sim),
                     "--out-dir", str(fit_shr), "--seed", "3",
                     "--select", "shrinkage", "--correct-cov"]) == 0
    fit_plain = root / "fit_plain"
    assert cli.main(["fit", str(spec4), str(sim),
                     "--out-dir", str(fit_plain), "--seed", "3",
                     "--select", "none"]) == 0
    return SimpleNamespace(root=root, sim=sim, spec4=spec4,
                           fit_shr=fit_shr, fit_plain=fit_plain)


# ---------------------------------------------------------------- simulate

def test_simulate_shape_and_manifest(env):
    lines = env.sim.read_text().splitlines()
    assert len(lines) == 401
    assert len(lines[0].split(",")) == 10
    manifest = json.loads(
        (env.sim.parent / "sim.csv.manifest.json").read_text()
    )
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 2
    assert manifest["tool"] == "gamsmooth"
    assert manifest["outputs"] == [str(env.sim)]
    assert manifest["wall_time_s"] >= 0


def test_simulate_determinism(env, tmp_path):
    other = tmp_path / "sim2.csv"
    assert cli.main(["simulate", "--n", "400", "--sigma", "1",
                     "--seed", "2", "--out", str(other)]) == 0
    assert other.read_bytes() == env.sim.read_bytes()


def test_simulate_two_smooth_variant(tmp_path):
    out = tmp_path / "two.csv"
    assert cli.main(["simulate", "--n", "50", "--seed", "2",
                     "--variant", "two-smooth", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert set(header) == {"x2", "x3", "f2", "f3", "y"}


def test_simulate_usage_errors(env, tmp_path, capsys):
    assert cli.main(["simulate", "--n", "0", "--seed", "1",
                     "--out", str(tmp_path / "x.csv")]) == 2
    assert "usage error" in capsys.readouterr().err
    # Overwrite refusal, then --force.
    assert cli.main(["simulate", "--n", "10", "--seed", "1",
                     "--out", str(env.sim)]) == 2
    assert "--force" in capsys.readouterr().err
    keep = env.sim.read_bytes()
    scratch = tmp_path / "scratch.csv"
    scratch.write_text("old")
    assert cli.main(["simulate", "--n", "400", "--sigma", "1", "--seed", "2",
                     "--out", str(scratch), "--force"]) == 0
    assert scratch.read_bytes() == keep


def test_missing_subcommand_is_usage_error():
    assert cli.main([]) == 2
    assert cli.main(["no-such-command"]) == 2


# --------------------------------------------------------------------- fit

def test_fit_outputs_and_report(env, capsys):
    names = {p.name for p in env.fit_shr.iterdir()}
    assert {"model.json", "manifest.json", "term_x0.csv", "term_x1.csv",
            "term_x2.csv", "term_x3.csv"} <= names
    frame = pd.read_csv(env.fit_shr / "term_x2.csv")
    assert list(frame.columns) == ["x", "fit", "lo", "hi"]
    assert len(frame) == 200
    assert np.all(frame["lo"] <= frame["fit"])
    assert np.all(frame["fit"] <= frame["hi"])
    manifest = json.loads((env.fit_shr / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["spec"] == str(env.spec4)
    assert len(manifest["outputs"]) == 5


def test_select_modes_control_null_term_edf(env):
    """The zero-signal x3 term collapses under shrinkage and keeps extra
    degrees of freedom in plain mode."""
    edf_shr = json.loads((env.fit_shr / "model.json").read_text())["edf"]
    edf_plain = json.loads((env.fit_plain / "model.json").read_text())["edf"]
    assert edf_shr["s(x3)"] < 0.5
    assert edf_plain["s(x3)"] > edf_shr["s(x3)"]


def test_saved_model_reproduces_fitted_values(env):
    """In-process refit with the command's own settings must agree with the
    stored artifact's predictions to 1e-10."""
    data = Dataset.from_csv(env.sim)
    spec = ModelSpec(
        response="y",
        smooths=tuple(SmoothSpec(f"x{j}", k=10, mode="shrinkage")
                      for j in range(4)),
    )
    fit = fit_additive_model(data, spec, seed=3)
    art = load_model(env.fit_shr / "model.json")
    np.testing.assert_allclose(art.predict(data), fit.fitted_values(),
                               rtol=0.0, atol=1e-10)
    np.testing.assert_allclose(art.beta_hat, fit.beta_hat,
                               rtol=0.0, atol=1e-10)


def test_fit_usage_and_data_errors(env, tmp_path):
    # No data and no replicate request.
    assert cli.main(["fit", str(env.spec4), "--out-dir",
                     str(tmp_path / "a"), "--seed", "1"]) == 2
    # Data and replicates together.
    assert cli.main(["fit", str(env.spec4), str(env.sim),
                     "--out-dir", str(tmp_path / "b"), "--seed", "1",
                     "--replicates", "3", "--sim-n", "50"]) == 2
    # Replicates without --sim-n.
    assert cli.main(["fit", str(env.spec4), "--out-dir",
                     str(tmp_path / "c"), "--seed", "1",
                     "--replicates", "3"]) == 2
    # Missing spec file.
    assert cli.main(["fit", str(tmp_path / "absent.json"), str(env.sim),
                     "--out-dir", str(tmp_path / "d"), "--seed", "1"]) == 3
    # Missing data file.
    assert cli.main(["fit", str(env.spec4), str(tmp_path / "absent.csv"),
                     "--out-dir", str(tmp_path / "e"), "--seed", "1"]) == 3


def test_numerical_failure_exit_code(tmp_path):
    """Perfectly collinear parametric columns make the normal equations
    singular, which must surface as exit code 4."""
    rng = np.random.default_rng(0)
    x0 = rng.uniform(size=50)
    data = tmp_path / "collinear.csv"
    Dataset({"x0": x0, "x1": 2.0 * x0,
             "y": rng.standard_normal(50)}).to_csv(data)
    spec = spec_json(tmp_path / "spec.json", [],
                     parametric=("x0", "x1"))
    assert cli.main(["fit", str(spec), str(data),
                     "--out-dir", str(tmp_path / "out"),
                     "--seed", "1"]) == 4


def test_fit_replicates_table_and_thread_cap(env, tmp_path, monkeypatch):
    """Replicate fan-out writes one row per term per replicate, and the
    result is identical under any GAMSMOOTH_THREADS setting."""
    out1 = tmp_path / "rep1"
    assert cli.main(["fit", str(env.spec4), "--out-dir", str(out1),
                     "--seed", "9", "--select", "shrinkage",
                     "--replicates", "4", "--sim-n", "120"]) == 0
    frame = pd.read_csv(out1 / "replicates.csv")
    assert set(frame.columns) == {"replicate", "seed", "term", "edf",
                                  "phi", "reml"}
    assert len(frame) == 4 * 5
    assert sorted(frame["replicate"].unique()) == [0, 1, 2, 3]
    assert frame["seed"].nunique() == 4

    monkeypatch.setenv(cli.THREADS_ENV, "2")
    out2 = tmp_path / "rep2"
    assert cli.main(["fit", str(env.spec4), "--out-dir", str(out2),
                     "--seed", "9", "--select", "shrinkage",
                     "--replicates", "4", "--sim-n", "120"]) == 0
    assert (out2 / "replicates.csv").read_bytes() \
        == (out1 / "replicates.csv").read_bytes()

    monkeypatch.setenv(cli.THREADS_ENV, "not-a-number")
    out3 = tmp_path / "rep3"
    assert cli.main(["fit", str(env.spec4), "--out-dir", str(out3),
                     "--seed", "9", "--select", "shrinkage",
                     "--replicates", "4", "--sim-n", "120"]) == 0
    assert (out3 / "replicates.csv").read_bytes() \
        == (out1 / "replicates.csv").read_bytes()


# -------------------------------------------------------------------- band

def test_band_grid_and_covariance_ordering(env, tmp_path):
    eb_dir = tmp_path / "eb"
    corr_dir = tmp_path / "corr"
    model = str(env.fit_shr / "model.json")
    assert cli.main(["band", model, "--out-dir", str(eb_dir),
                     "--grid", "64"]) == 0
    assert cli.main(["band", model, "--out-dir", str(corr_dir),
                     "--grid", "64", "--cov", "corrected"]) == 0
    for cov in ("x0", "x1", "x2", "x3"):
        eb = pd.read_csv(eb_dir / f"band_{cov}.csv")
        corr = pd.read_csv(corr_dir / f"band_{cov}.csv")
        assert len(eb) == 64
        width_eb = eb["hi"] - eb["lo"]
        width_corr = corr["hi"] - corr["lo"]
        assert np.all(width_corr >= width_eb - 1e-12)


def test_band_alpha_monotonicity(env, tmp_path):
    model = str(env.fit_shr / "model.json")
    wide = tmp_path / "wide"
    narrow = tmp_path / "narrow"
    assert cli.main(["band", model, "--out-dir", str(wide),
                     "--alpha", "0.05", "--grid", "40"]) == 0
    assert cli.main(["band", model, "--out-dir", str(narrow),
                     "--alpha", "0.5", "--grid", "40"]) == 0
    a = pd.read_csv(wide / "band_x2.csv")
    b = pd.read_csv(narrow / "band_x2.csv")
    assert np.all(b["hi"] - b["lo"] < a["hi"] - a["lo"])


def test_band_errors(env, tmp_path):
    model = str(env.fit_plain / "model.json")
    # The plain fit stored no corrected covariance.
    assert cli.main(["band", model, "--out-dir", str(tmp_path / "x"),
                     "--cov", "corrected"]) == 3
    assert cli.main(["band", model, "--out-dir", str(tmp_path / "y"),
                     "--alpha", "1.5"]) == 2
    assert cli.main(["band", str(tmp_path / "absent.json"),
                     "--out-dir", str(tmp_path / "z")]) == 3


# ------------------------------------------------------------------ sample

def test_sample_quantiles_ordering_and_determinism(env, tmp_path):
    model = str(env.fit_shr / "model.json")
    out1 = tmp_path / "q1.csv"
    out2 = tmp_path / "q2.csv"
    argv = ["sample", model, "--draws", "200", "--seed", "5",
            "--summary", "quantiles", "--grid", "50"]
    assert cli.main(argv + ["--out", str(out1)]) == 0
    assert cli.main(argv + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    frame = pd.read_csv(out1)
    assert set(frame["term"]) == {"s(x0)", "s(x1)", "s(x2)", "s(x3)"}
    assert len(frame) == 4 * 50
    assert np.all(frame["q025"] <= frame["q500"])
    assert np.all(frame["q500"] <= frame["q975"])


def test_sample_long_format_and_sum(env, tmp_path):
    model = str(env.fit_shr / "model.json")
    out = tmp_path / "draws.csv"
    assert cli.main(["sample", model, "--draws", "7", "--seed", "2",
                     "--term", "x2", "--grid", "30",
                     "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert set(frame["term"]) == {"s(x2)"}
    assert len(frame) == 7 * 30
    assert list(frame.columns) == ["term", "draw", "point", "x", "value"]

    out_sum = tmp_path / "sums.csv"
    assert cli.main(["sample", model, "--draws", "25", "--seed", "2",
                     "--summary", "sum", "--term", "s(x2)",
                     "--out", str(out_sum)]) == 0
    sums = pd.read_csv(out_sum)
    assert len(sums) == 25
    assert list(sums.columns) == ["term", "draw", "value"]


def test_sample_errors(env, tmp_path):
    model = str(env.fit_shr / "model.json")
    assert cli.main(["sample", model, "--draws", "0", "--seed", "1",
                     "--out", str(tmp_path / "a.csv")]) == 2
    assert cli.main(["sample", model, "--draws", "5", "--seed", "1",
                     "--term", "zz", "--out", str(tmp_path / "b.csv")]) == 3


# ------------------------------------------------------------------- gibbs

@pytest.fixture(scope="module")
def gibbs_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("gibbs")
    data = root / "two.csv"
    assert cli.main(["simulate", "--n", "150", "--seed", "4",
                     "--variant", "two-smooth", "--out", str(data)]) == 0
    spec = spec_json(root / "spec2.json", ["x2", "x3"], k=8, mode="double")
    out = root / "run1"
    assert cli.main(["gibbs", str(spec), str(data), "--out-dir", str(out),
                     "--seed", "7", "--iters", "600", "--burn", "100"]) == 0
    return SimpleNamespace(root=root, data=data, spec=spec, out=out)


def test_gibbs_outputs(gibbs_env):
    chains = pd.read_csv(gibbs_env.out / "chains.csv")
    assert len(chains) == 500
    p = sum(c.startswith("beta[") for c in chains.columns)
    m = sum(c.startswith("lambda[") for c in chains.columns)
    assert m == 4
    assert list(chains.columns) \
        == ["draw"] + [f"beta[{j}]" for j in range(p)] \
        + [f"lambda[{k}]" for k in range(4)] + ["sigma2"]
    summary = json.loads((gibbs_env.out / "summary.json").read_text())
    assert summary["iterations"] == 600
    assert summary["retained_draws"] == 500
    for entry in summary["parameters"].values():
        assert {"mean", "sd", "q025", "q500", "q975", "ess",
                "split_ratio"} <= set(entry)
    ess_values = [v["ess"] for v in summary["parameters"].values()
                  if v["ess"] is not None]
    assert ess_values and all(e > 0 for e in ess_values)


def test_gibbs_determinism(gibbs_env, tmp_path):
    out2 = tmp_path / "run2"
    assert cli.main(["gibbs", str(gibbs_env.spec), str(gibbs_env.data),
                     "--out-dir", str(out2), "--seed", "7",
                     "--iters", "600", "--burn", "100"]) == 0
    assert (out2 / "chains.csv").read_bytes() \
        == (gibbs_env.out / "chains.csv").read_bytes()


def test_gibbs_usage_and_data_errors(gibbs_env, tmp_path):
    # burn >= iters
    assert cli.main(["gibbs", str(gibbs_env.spec), str(gibbs_env.data),
                     "--out-dir", str(tmp_path / "a"), "--seed", "1",
                     "--iters", "50", "--burn", "100"]) == 2
    # plain smooths carry improper priors
    plain_spec = spec_json(tmp_path / "plain.json", ["x2", "x3"], k=8)
    assert cli.main(["gibbs", str(plain_spec), str(gibbs_env.data),
                     "--out-dir", str(tmp_path / "b"), "--seed", "1",
                     "--iters", "50", "--burn", "10"]) == 3
    # ... unless --select double overrides the mode
    assert cli.main(["gibbs", str(plain_spec), str(gibbs_env.data),
                     "--out-dir", str(tmp_path / "c"), "--seed", "1",
                     "--iters", "50", "--burn", "10",
                     "--select", "double"]) == 0


# ------------------------------------------------------------- compare-cov

def test_compare_cov_three_panels(env, gibbs_env, tmp_path, capsys):
    """EB and corrected panels from the model file, FB from chains, all of
    identical dimension, with the mean-size ordering reported."""
    data = gibbs_env.root / "fitdata"
    model_dir = data
    assert cli.main(["fit", str(gibbs_env.spec), str(gibbs_env.data),
                     "--out-dir", str(model_dir), "--seed", "2",
                     "--correct-cov"]) == 0
    capsys.readouterr()
    out = tmp_path / "panels.csv"
    assert cli.main(["compare-cov", str(model_dir / "model.json"),
                     "--chains", str(gibbs_env.out / "chains.csv"),
                     "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "mean |entry|: eb <= corrected" in stdout
    panels = read_matrix_panels(out)
    assert list(panels) == ["eb", "corrected", "fb"]
    shapes = {mat.shape for mat in panels.values()}
    assert len(shapes) == 1
    p = json.loads((model_dir / "model.json").read_text())["p"]
    assert shapes == {(p, p)}


def test_compare_cov_without_chains(env, tmp_path):
    out = tmp_path / "panels.csv"
    assert cli.main(["compare-cov", str(env.fit_shr / "model.json"),
                     "--out", str(out)]) == 0
    panels = read_matrix_panels(out)
    assert list(panels) == ["eb", "corrected"]


def test_compare_cov_errors(env, gibbs_env, tmp_path):
    # Chain coefficients from a different model do not match p.
    assert cli.main(["compare-cov", str(env.fit_shr / "model.json"),
                     "--chains", str(gibbs_env.out / "chains.csv"),
                     "--out", str(tmp_path / "a.csv")]) == 3
    # A CSV without beta columns is rejected.
    bogus = tmp_path / "bogus.csv"
    pd.DataFrame({"draw": [0, 1], "sigma2": [1.0, 1.1]}).to_csv(
        bogus, index=False)
    assert cli.main(["compare-cov", str(env.fit_shr / "model.json"),
                     "--chains", str(bogus),
                     "--out", str(tmp_path / "b.csv")]) == 3


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    assert "gamsmooth" in capsys.readouterr().out
