"""Command-line entry point: ``evsi-mm {psa,evppi,evsi-curve,oracle,compare}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import platform
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import io, nlreg, pipeline
from ._backend import BACKEND
from .conditional import SmootherConfig, conditional_from_fitted, evppi, fit_conditional_inb
from .config import ConfigError, RunConfig, load_config

__all__ = ["main", "build_parser", "run_pipeline", "run_psa_command", "run_evppi_command",
           "run_oracle_command", "run_compare_command", "EXIT_OK", "EXIT_CONFIG",
           "EXIT_NUMERIC"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

PIPELINE_FILES = ("psa_summary.csv", "variance_points.csv", "posterior_draws.csv",
                  "evsi_curve.csv", "residuals.csv", "manifest.json")


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"evsi_mm": pkg, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _manifest(command: str, cfg: RunConfig, **extra) -> dict:
    record = {
        "command": command,
        "config": cfg.as_dict(),
        "seeds": pipeline.seed_record(cfg.seed),
        "versions": _versions(),
        "backend": BACKEND,
    }
    record.update(extra)
    return record


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _settings(cfg: RunConfig):
    smoother = SmootherConfig(fit_size=cfg.fit_size)
    prior = nlreg.PriorConfig(h_variance=cfg.h_prior, sigma_df=cfg.sigma_df)
    mcmc = nlreg.McmcConfig(chains=cfg.chains, burn_in=cfg.burn_in, iterations=cfg.iterations)
    return smoother, prior, mcmc


def _ingest_fitted(cfg: RunConfig, spec) -> np.ndarray:
    fitted = io.read_fitted_values(cfg.resolve(cfg.fitted_values))
    want = (cfg.s, spec.arm_count - 1)
    if fitted.shape != want:
        raise ConfigError(f"fitted values have shape {fitted.shape}, expected {want} "
                          "(one row per PSA draw, one column per non-reference arm)")
    return fitted


def oracle_reference_budget(cfg: RunConfig) -> int:
    """Model evaluations of the nested oracle over ``cfg.oracle_n``."""
    return len(cfg.oracle_n) * cfg.oracle_s_out * (cfg.oracle_m_in + 1)


def run_pipeline(cfg: RunConfig) -> dict:
    """Full EVSI-curve run; writes :data:`PIPELINE_FILES` into ``cfg.out``."""
    spec = cfg.model_spec()
    out = _outdir(cfg)
    smoother, prior, mcmc = _settings(cfg)
    conditional = None
    if cfg.fitted_values:
        conditional = conditional_from_fitted(_ingest_fitted(cfg, spec), {"source": "ingested"})
    points = io.read_variance_points(cfg.resolve(cfg.variance_points)) \
        if cfg.variance_points else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = pipeline.run_evsi(spec, cfg.exercise, s=cfg.s, q=cfg.q, n_min=cfg.n_min,
                                n_max=cfg.n_max, m=cfg.m, seed=cfg.seed,
                                levels=tuple(cfg.quantiles), smoother=smoother, prior=prior,
                                mcmc=mcmc, conditional=conditional, points=points,
                                workers=cfg.workers)
    notes = [str(w.message) for w in caught]
    for key, post in sorted(res.fits.items()):
        if post is not None:
            notes += [f"element {key[0] + 1},{key[1] + 1}: {n}" for n in post.warnings
                      if f"{n}" not in notes]
    notes = list(dict.fromkeys(notes))

    io.write_psa_summary(out / "psa_summary.csv", res.moments, cfg.s, res.curve.evppi)
    io.write_variance_points(out / "variance_points.csv", res.points)
    io.write_posterior_draws(out / "posterior_draws.csv", res.fits)
    io.write_curve(out / "evsi_curve.csv", res.curve)
    diags = {}
    for (i, j), post in res.fits.items():
        if post is not None:
            obs = nlreg.VarianceObservations.from_points(res.moments, res.points,
                                                         res.conditional.cov, i, j)
            diags[(i, j)] = nlreg.residual_diagnostics(post, obs)
    io.write_residuals(out / "residuals.csv", diags)

    budget = dict(res.budget)
    budget["bound_q_m_plus_s"] = cfg.q * cfg.m + cfg.s
    ref = oracle_reference_budget(cfg)
    budget["oracle_reference"] = {"n_values": list(cfg.oracle_n), "s_out": cfg.oracle_s_out,
                                  "m_in": cfg.oracle_m_in, "evaluations": ref}
    budget["reduction_factor"] = ref / budget["model_evaluations"] \
        if budget["model_evaluations"] else None
    fits = {f"{i + 1},{j + 1}": (None if p is None else {
        "rhat": p.rhat, "acceptance": p.acceptance, "prior": p.prior,
        "h_median": float(np.median(p.h_draws)), "degenerate": p.degenerate})
        for (i, j), p in sorted(res.fits.items())}
    manifest = _manifest(
        "evsi-curve", cfg,
        files=list(PIPELINE_FILES),
        budget=budget,
        warnings=notes,
        evppi=res.curve.evppi,
        conditional=res.conditional.config,
        design={"max_abs_correlation": float(res.design.correlations.max(initial=0.0)),
                "permutation_attempts": res.design.attempts,
                "n_values": res.design.n_values},
        regression=fits,
        note=res.curve.note,
    )
    io.write_json(out / "manifest.json", manifest)
    return manifest


def run_psa_command(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    _, _, moments = pipeline.run_psa(cfg.model_spec(), cfg.s, cfg.seed)
    io.write_psa_summary(out / "psa_summary.csv", moments, cfg.s)
    manifest = _manifest("psa", cfg, files=["psa_summary.csv", "manifest.json"],
                         budget={"psa_evaluations": cfg.s, "model_evaluations": cfg.s},
                         warnings=[])
    io.write_json(out / "manifest.json", manifest)
    return manifest


def run_evppi_command(cfg: RunConfig) -> dict:
    spec = cfg.model_spec()
    out = _outdir(cfg)
    draws, inb, moments = pipeline.run_psa(spec, cfg.s, cfg.seed)
    if cfg.fitted_values:
        cond = conditional_from_fitted(_ingest_fitted(cfg, spec), {"source": "ingested"})
    else:
        focal = spec.exercises[cfg.exercise][0]
        cond = fit_conditional_inb(inb, draws.columns(focal), SmootherConfig(fit_size=cfg.fit_size))
    value = evppi(cond)
    io.write_psa_summary(out / "psa_summary.csv", moments, cfg.s, value)
    manifest = _manifest("evppi", cfg, files=["psa_summary.csv", "manifest.json"],
                         budget={"psa_evaluations": cfg.s, "model_evaluations": cfg.s},
                         evppi=value, conditional=cond.config, warnings=[])
    io.write_json(out / "manifest.json", manifest)
    return manifest


def run_oracle_command(cfg: RunConfig) -> dict:
    if not cfg.oracle_n:
        raise ConfigError("oracle needs at least one sample size")
    out = _outdir(cfg)
    results = pipeline.run_oracle(cfg.model_spec(), cfg.exercise, cfg.oracle_n,
                                  s_out=cfg.oracle_s_out, m_in=cfg.oracle_m_in, seed=cfg.seed)
    io.write_oracle(out / "oracle.csv", results)
    total = sum(e.evaluations for _, e in results)
    manifest = _manifest("oracle", cfg, files=["oracle.csv", "manifest.json"],
                         budget={"model_evaluations": total,
                                 "per_n": {str(n): e.evaluations for n, e in results}},
                         warnings=[])
    io.write_json(out / "manifest.json", manifest)
    return manifest


def _design_curve(cfg: RunConfig, k: int, out: Path):
    label = cfg.label or f"design{k + 1}"
    if cfg.curve:
        grid, levels, _, evsi = io.read_curve(cfg.resolve(cfg.curve))
    else:
        sub = cfg.replace(out=str(out / label))
        run_pipeline(sub)
        grid, levels, _, evsi = io.read_curve(out / label / "evsi_curve.csv")
    if 0.5 not in levels:
        raise ConfigError(f"design {label!r}: curve has no median (0.5) level")
    return (label, grid, evsi[list(levels).index(0.5)], cfg.fixed_cost,
            cfg.per_participant_cost, cfg.population)


def run_compare_command(cfgs: list[RunConfig], out: str | None = None) -> dict:
    if not cfgs:
        raise ConfigError("compare needs at least one --config")
    outdir = Path(out or cfgs[0].out)
    outdir.mkdir(parents=True, exist_ok=True)
    labels = [c.label or f"design{k + 1}" for k, c in enumerate(cfgs)]
    if len(set(labels)) != len(labels):
        raise ConfigError("design labels must be unique")
    entries = [_design_curve(c, k, outdir) for k, c in enumerate(cfgs)]
    try:
        designs = pipeline.compare_designs(entries)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    io.write_comparison(outdir / "compare_curves.csv", outdir / "compare_summary.csv", designs)
    manifest = {
        "command": "compare",
        "designs": [c.as_dict() for c in cfgs],
        "versions": _versions(),
        "backend": BACKEND,
        "files": ["compare_curves.csv", "compare_summary.csv", "manifest.json"],
        "optimal": {d.label: {"n": d.optimal_n, "net_value": d.optimal_net_value,
                              "never_worthwhile": d.never_worthwhile} for d in designs},
        "warnings": [f"design {d.label!r} is never worthwhile" for d in designs
                     if d.never_worthwhile],
    }
    io.write_json(outdir / "manifest.json", manifest)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evsi-mm", description=(
        "EVSI across sample sizes by moment matching and Bayesian non-linear regression."))
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "psa": "simulate the model and summarize incremental net benefit",
        "evppi": "EVPPI of the exercise's focal parameters",
        "evsi-curve": "full pipeline: EVSI curve with bands over N_min..N_max",
        "oracle": "nested Monte Carlo EVSI at the configured sample sizes",
        "compare": "net value of several study designs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", action="append", default=None,
                       help="key = value config file" + (" (repeat per design)"
                                                        if name == "compare" else ""))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--model")
        p.add_argument("--exercise", type=int)
        p.add_argument("--q", type=int)
        p.add_argument("--n-min", type=int, dest="n_min")
        p.add_argument("--n-max", type=int, dest="n_max")
    return parser


def _configs(args) -> list[RunConfig]:
    paths = args.config or [None]
    if args.command != "compare" and len(paths) > 1:
        raise ConfigError(f"{args.command} takes a single --config")
    overrides = {"seed": args.seed, "model": args.model, "exercise": args.exercise,
                 "q": args.q, "n_min": args.n_min, "n_max": args.n_max}
    if args.command != "compare":
        overrides["out"] = args.out
    cfgs = []
    for path in paths:
        base = load_config(path) if path else RunConfig()
        try:
            cfgs.append(base.replace(**overrides))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return cfgs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfgs = _configs(args)
        if args.command == "compare":
            manifest = run_compare_command(cfgs, args.out)
        else:
            runner = {"psa": run_psa_command, "evppi": run_evppi_command,
                      "evsi-curve": run_pipeline, "oracle": run_oracle_command}[args.command]
            manifest = runner(cfgs[0])
    except (ConfigError, io.TableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for note in manifest.get("warnings", []):
        print(f"warning: {note}", file=sys.stderr)
    print(f"{args.command}: done in {time.perf_counter() - start:.1f} s; "
          f"files: {', '.join(manifest['files'])}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
