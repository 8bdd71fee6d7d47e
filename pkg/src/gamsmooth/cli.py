"""Batch command line interface.

Subcommands: ``simulate``, ``fit``, ``band``, ``sample``, ``gibbs`` and
``compare-cov``. Every command is deterministic given its arguments, and the
stochastic ones require an explicit ``--seed``. Each invocation writes a run
manifest (command, inputs, seed, tool version, wall time, outputs) next to
its outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Existing output files are never overwritten unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .assembly import Dataset, ModelSpec, SmoothSpec, build_design, term_matrix
from .errors import DataError, NumericalError
from .fit import fit_additive_model
from .gibbs import GibbsConfig, empirical_cov, gibbs_fit
from .modelio import load_model, save_model
from .posterior import (
    PosteriorCov,
    corrected_cov,
    credible_band,
    posterior_cov,
    simulate_posterior,
)
from .simdata import gu_wahba_data, two_smooth_subset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

THREADS_ENV = "GAMSMOOTH_THREADS"


class UsageError(Exception):
    """Command line values that argparse alone cannot reject."""


def _max_workers(n_tasks: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw is not None:
        try:
            cap = max(1, int(raw))
        except ValueError:
            print(f"warning: ignoring non-integer {THREADS_ENV}={raw!r}",
                  file=sys.stderr)
    return max(1, min(cap, n_tasks))


def _refuse_overwrite(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise UsageError(
            f"refusing to overwrite existing outputs {existing}; "
            "pass --force to allow"
        )


def _write_manifest(anchor, command: str, args: argparse.Namespace,
                    outputs, t0: float):
    anchor = Path(anchor)
    if anchor.is_dir():
        path = anchor / "manifest.json"
    else:
        path = anchor.with_name(anchor.name + ".manifest.json")
    manifest = {
        "command": command,
        "tool": "gamsmooth",
        "version": __version__,
        "spec": getattr(args, "spec", None),
        "data": getattr(args, "data", None),
        "seed": getattr(args, "seed", None),
        "wall_time_s": round(time.monotonic() - t0, 3),
        "outputs": [str(p) for p in outputs],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def _write_plot_csv(path, x, fit_vals, lo, hi):
    frame = pd.DataFrame({"x": x, "fit": fit_vals, "lo": lo, "hi": hi})
    frame.to_csv(path, index=False, lineterminator="\n")


def _apply_select(spec: ModelSpec, select: str | None) -> ModelSpec:
    if select is None:
        return spec
    mode = {"none": "plain"}.get(select, select)
    return ModelSpec(
        response=spec.response, family=spec.family,
        parametric_terms=spec.parametric_terms,
        smooths=tuple(SmoothSpec(covariate=s.covariate, k=s.k, mode=mode)
                      for s in spec.smooths),
    )


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    if args.n <= 0:
        raise UsageError(f"--n must be positive, got {args.n}")
    if args.sigma < 0:
        raise UsageError(f"--sigma must be >= 0, got {args.sigma}")
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    sim = gu_wahba_data(args.n, args.sigma, args.seed)
    data = two_smooth_subset(sim) if args.variant == "two-smooth" else sim
    out.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(out)
    _write_manifest(out, "simulate", args, [out], t0)
    print(f"wrote {out} ({data.n} rows, {len(data.names)} columns)")
    return EXIT_OK


# --------------------------------------------------------------------- fit

def _fit_one(data: Dataset, spec: ModelSpec, seed: int):
    fit = fit_additive_model(data, spec, seed=seed)
    return fit


def cmd_fit(args) -> int:
    t0 = time.monotonic()
    spec = _apply_select(ModelSpec.from_json(args.spec), args.select)
    out_dir = Path(args.out_dir)

    if args.replicates is not None:
        return _cmd_fit_replicates(args, spec, out_dir, t0)

    if args.data is None:
        raise UsageError("fit needs a data CSV (or --replicates with "
                         "--sim-n/--sim-sigma)")
    data = Dataset.from_csv(args.data)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.json"
    fit = _fit_one(data, spec, args.seed)
    v_eb = posterior_cov(fit)
    v_corr = corrected_cov(fit) if args.correct_cov else None

    plot_paths = []
    smooth_infos = fit.design.smooth_terms()
    for info in smooth_infos:
        plot_paths.append(out_dir / f"term_{info.covariate}.csv")
    _refuse_overwrite([model_path] + plot_paths, args.force)

    save_model(fit, model_path, cov_eb=v_eb.V,
               cov_corrected=None if v_corr is None else v_corr.V,
               seed=args.seed)
    for info, path in zip(smooth_infos, plot_paths):
        grid = np.linspace(info.knots.values[0], info.knots.values[-1],
                           args.grid)
        Lp = term_matrix(fit.term_map, fit.design.p, info.name, grid)
        band = credible_band(fit, Lp, alpha=args.alpha, cov=v_eb, at=grid)
        _write_plot_csv(path, band.at, band.fit, band.lo, band.hi)

    print(f"family {fit.family.name}, n={fit.y.size}, "
          f"REML criterion {fit.reml_value:.6f}, scale {fit.phi_hat:.6f}")
    for name, value in fit.edf_per_term.items():
        print(f"  EDF {name}: {value:.3f}")
    print(f"  EDF total: {fit.edf_total:.3f}")
    outputs = [model_path] + plot_paths
    _write_manifest(out_dir, "fit", args, outputs, t0)
    print(f"wrote {model_path}")
    return EXIT_OK


def _cmd_fit_replicates(args, spec: ModelSpec, out_dir: Path,
                        t0: float) -> int:
    if args.data is not None:
        raise UsageError("--replicates simulates its own data; drop the "
                         "data argument or the flag")
    if args.replicates <= 0:
        raise UsageError("--replicates must be positive")
    if args.sim_n is None:
        raise UsageError("--replicates needs --sim-n (rows per replicate)")
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "replicates.csv"
    _refuse_overwrite([table_path], args.force)

    children = np.random.SeedSequence(args.seed).spawn(args.replicates)
    seeds = [int(c.generate_state(1)[0]) for c in children]

    def run(idx_seed):
        idx, seed_r = idx_seed
        sim = gu_wahba_data(args.sim_n, args.sim_sigma, seed_r)
        fit = _fit_one(sim, spec, seed_r)
        rows = []
        for name, value in fit.edf_per_term.items():
            rows.append({
                "replicate": idx, "seed": seed_r, "term": name,
                "edf": value,
                "phi": fit.phi_hat, "reml": fit.reml_value,
            })
        return rows

    workers = _max_workers(args.replicates)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, enumerate(seeds)))
    rows = [r for chunk in results for r in chunk]
    frame = pd.DataFrame(rows)
    frame.to_csv(table_path, index=False, lineterminator="\n")
    _write_manifest(out_dir, "fit", args, [table_path], t0)
    means = frame.groupby("term")["edf"].mean()
    print(f"{args.replicates} replicates (n={args.sim_n}, "
          f"sigma={args.sim_sigma}, {workers} workers)")
    for name, value in means.items():
        print(f"  mean EDF {name}: {value:.3f}")
    print(f"wrote {table_path}")
    return EXIT_OK


# -------------------------------------------------------------------- band

def cmd_band(args) -> int:
    t0 = time.monotonic()
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must be in (0, 1), got {args.alpha}")
    model = load_model(args.model)
    cov = PosteriorCov(V=model.covariance(args.cov), kind=args.cov)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    smooths = model.smooth_terms()
    if not smooths:
        raise DataError("model has no smooth terms to band")
    paths = [out_dir / f"band_{info.covariate}.csv" for info in smooths]
    _refuse_overwrite(paths, args.force)
    for info, path in zip(smooths, paths):
        grid = np.linspace(info.knots.values[0], info.knots.values[-1],
                           args.grid)
        Lp = term_matrix(model.term_map, model.p, info.name, grid)
        band = credible_band(model, Lp, alpha=args.alpha, cov=cov, at=grid)
        _write_plot_csv(path, band.at, band.fit, band.lo, band.hi)
    _write_manifest(out_dir, "band", args, paths, t0)
    print(f"wrote {len(paths)} band files to {out_dir} "
          f"(alpha={args.alpha}, cov={args.cov})")
    return EXIT_OK


# ------------------------------------------------------------------ sample

def cmd_sample(args) -> int:
    t0 = time.monotonic()
    if args.draws <= 0:
        raise UsageError(f"--draws must be positive, got {args.draws}")
    model = load_model(args.model)
    cov = PosteriorCov(V=model.covariance(args.cov), kind=args.cov)
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    smooths = model.smooth_terms()
    if args.term is not None:
        smooths = [info for info in smooths
                   if info.name == args.term or info.covariate == args.term]
        if not smooths:
            raise DataError(f"no smooth term matches {args.term!r}")
    if not smooths:
        raise DataError("model has no smooth terms to sample")

    frames = []
    for info in smooths:
        grid = np.linspace(info.knots.values[0], info.knots.values[-1],
                           args.grid)
        Lp = term_matrix(model.term_map, model.p, info.name, grid)
        if args.summary == "sum":
            draws = simulate_posterior(model, Lp, n_draws=args.draws,
                                       cov=cov, summary="sum",
                                       seed=args.seed, scale=args.scale)
            frames.append(pd.DataFrame({
                "term": info.name,
                "draw": np.arange(args.draws),
                "value": draws.draws[:, 0],
            }))
        else:
            draws = simulate_posterior(model, Lp, n_draws=args.draws,
                                       cov=cov, seed=args.seed,
                                       scale=args.scale)
            if args.summary == "quantiles":
                q = draws.quantiles([0.025, 0.5, 0.975])
                frames.append(pd.DataFrame({
                    "term": info.name, "point": np.arange(grid.size),
                    "x": grid, "q025": q[0], "q500": q[1], "q975": q[2],
                }))
            else:
                B, Q = draws.draws.shape
                frames.append(pd.DataFrame({
                    "term": info.name,
                    "draw": np.repeat(np.arange(B), Q),
                    "point": np.tile(np.arange(Q), B),
                    "x": np.tile(grid, B),
                    "value": draws.draws.ravel(),
                }))
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(out, index=False,
                                                lineterminator="\n")
    _write_manifest(out, "sample", args, [out], t0)
    print(f"wrote {out} ({args.draws} draws, summary={args.summary})")
    return EXIT_OK


# ------------------------------------------------------------------- gibbs

def cmd_gibbs(args) -> int:
    t0 = time.monotonic()
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    if not 0 <= args.burn < args.iters:
        raise UsageError("--burn must be in [0, --iters)")
    if args.thin < 1:
        raise UsageError("--thin must be >= 1")
    spec = _apply_select(ModelSpec.from_json(args.spec), args.select)
    data = Dataset.from_csv(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chains_path = out_dir / "chains.csv"
    summary_path = out_dir / "summary.json"
    _refuse_overwrite([chains_path, summary_path], args.force)

    design = build_design(data, spec)
    config = GibbsConfig(
        iterations=args.iters, burn_in=args.burn, thin=args.thin,
        seed=args.seed,
        lambda_prior=(args.lambda_shape, args.lambda_rate),
        tau_prior=(args.tau_shape, args.tau_rate),
    )
    chains = gibbs_fit(design, data[spec.response], config,
                       family=spec.family)

    frame = pd.DataFrame(
        np.column_stack([chains.beta, chains.lam, chains.sigma2[:, None]]),
        columns=chains.param_names,
    )
    frame.insert(0, "draw", np.arange(chains.n_draws))
    frame.to_csv(chains_path, index=False, lineterminator="\n")

    summary = {}
    for name in chains.param_names:
        x = chains.parameter(name)
        diag = chains.diagnostics[name]
        summary[name] = {
            "mean": float(np.mean(x)),
            "sd": float(np.std(x, ddof=1)),
            "q025": float(np.quantile(x, 0.025)),
            "q500": float(np.quantile(x, 0.5)),
            "q975": float(np.quantile(x, 0.975)),
            "ess": None if np.isnan(diag["ess"]) else float(diag["ess"]),
            "split_ratio": None if np.isnan(diag["split_ratio"])
            else float(diag["split_ratio"]),
        }
    payload = {
        "iterations": args.iters, "burn_in": args.burn, "thin": args.thin,
        "seed": args.seed, "retained_draws": chains.n_draws,
        "parameters": summary,
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    _write_manifest(out_dir, "gibbs", args, [chains_path, summary_path], t0)
    ess_values = [v["ess"] for v in summary.values() if v["ess"] is not None]
    if ess_values:
        print(f"retained {chains.n_draws} draws; min ESS "
              f"{min(ess_values):.0f}")
    else:
        print(f"retained {chains.n_draws} draws")
    print(f"wrote {chains_path} and {summary_path}")
    return EXIT_OK


# -------------------------------------------------------------- compare-cov

def _write_matrix_panels(path, panels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for name, V in panels:
            fh.write(f"# panel={name} rows={V.shape[0]} cols={V.shape[1]}\n")
            for row in V:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_panels(path) -> dict:
    """Read a stacked matrix CSV written by ``compare-cov``."""
    panels = {}
    name, rows = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if name is not None:
                    panels[name] = np.asarray(rows, dtype=float)
                fields = dict(part.split("=") for part in
                              line.lstrip("# ").split())
                name, rows = fields["panel"], []
            else:
                rows.append([float(v) for v in line.split(",")])
    if name is not None:
        panels[name] = np.asarray(rows, dtype=float)
    return panels


def cmd_compare_cov(args) -> int:
    t0 = time.monotonic()
    model = load_model(args.model)
    out = Path(args.out)
    _refuse_overwrite([out], args.force)
    panels = [("eb", model.cov_eb)]
    if model.cov_corrected is not None:
        panels.append(("corrected", model.cov_corrected))
    if args.chains is not None:
        frame = pd.read_csv(args.chains)
        beta_cols = [c for c in frame.columns if c.startswith("beta[")]
        if not beta_cols:
            raise DataError(
                f"{args.chains} has no beta[...] columns; pass a chains CSV "
                "written by the gibbs command"
            )
        beta_cols.sort(key=lambda c: int(c[5:-1]))
        draws = frame[beta_cols].to_numpy(dtype=float)
        if draws.shape[1] != model.p:
            raise DataError(
                f"chains have {draws.shape[1]} coefficients, model has "
                f"{model.p}"
            )
        V = np.cov(draws, rowvar=False)
        panels.append(("fb", 0.5 * (V + V.T)))
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_matrix_panels(out, panels)
    _write_manifest(out, "compare-cov", args, [out], t0)
    for name, V in panels:
        print(f"mean |entry| {name}: {np.abs(V).mean():.6e}")
    if model.cov_corrected is not None:
        eb_mean = np.abs(model.cov_eb).mean()
        corr_mean = np.abs(model.cov_corrected).mean()
        relation = "<=" if eb_mean <= corr_mean else ">"
        print(f"mean |entry|: eb {relation} corrected")
    print(f"wrote {out} ({len(panels)} panels)")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamsmooth",
        description="Penalized additive models: simulate, fit, band, "
                    "sample, gibbs, compare-cov.",
    )
    parser.add_argument("--version", action="version",
                        version=f"gamsmooth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a benchmark dataset CSV")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--sigma", type=float, default=1.0,
                   help="noise standard deviation")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--variant", choices=["full", "two-smooth"],
                   default="full",
                   help="full four-term benchmark or the two-smooth subset")
    p.add_argument("--force", action="store_true",
                   help="overwrite existing outputs")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="REML-fit a model spec to a data CSV")
    p.add_argument("spec", help="model spec JSON path")
    p.add_argument("data", nargs="?", default=None, help="data CSV path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="seed for the smoothing-parameter restarts")
    p.add_argument("--select", choices=["none", "shrinkage", "double"],
                   default=None,
                   help="override the penalty mode of every smooth")
    p.add_argument("--correct-cov", action="store_true",
                   help="also store the smoothing-uncertainty corrected "
                        "covariance")
    p.add_argument("--alpha", type=float, default=0.05,
                   help="band level for the plot CSVs")
    p.add_argument("--grid", type=int, default=200,
                   help="points per term plot grid")
    p.add_argument("--replicates", type=int, default=None,
                   help="fit this many simulated replicates instead of a "
                        "data file")
    p.add_argument("--sim-n", type=int, default=None,
                   help="rows per replicate (with --replicates)")
    p.add_argument("--sim-sigma", type=float, default=1.0,
                   help="noise sd per replicate (with --replicates)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("band", help="credible bands from a model file")
    p.add_argument("model", help="model JSON path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--cov", choices=["eb", "corrected"], default="eb")
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_band)

    p = sub.add_parser("sample", help="posterior curve draws from a model "
                                      "file")
    p.add_argument("model", help="model JSON path")
    p.add_argument("--draws", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--term", default=None,
                   help="restrict to one smooth term")
    p.add_argument("--summary", choices=["none", "quantiles", "sum"],
                   default="none")
    p.add_argument("--cov", choices=["eb", "corrected"], default="eb")
    p.add_argument("--scale", choices=["linear", "response"],
                   default="response",
                   help="report draws before or after the inverse link")
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("gibbs", help="fully Bayesian gaussian fit")
    p.add_argument("spec", help="model spec JSON path")
    p.add_argument("data", help="data CSV path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--burn", type=int, default=2000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--select", choices=["none", "shrinkage", "double"],
                   default=None,
                   help="override the penalty mode of every smooth")
    p.add_argument("--lambda-shape", type=float, default=0.05)
    p.add_argument("--lambda-rate", type=float, default=0.005)
    p.add_argument("--tau-shape", type=float, default=1e-3)
    p.add_argument("--tau-rate", type=float, default=1e-3)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_gibbs)

    p = sub.add_parser("compare-cov",
                       help="stack EB / corrected / FB covariance panels")
    p.add_argument("model", help="model JSON path")
    p.add_argument("--chains", default=None,
                   help="chains CSV from the gibbs command (adds the FB "
                        "panel)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_compare_cov)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
