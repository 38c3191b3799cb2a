"""Command-line front end.

Subcommands: ``gen``, ``estimate``, ``cv``, ``simulate``, ``verify``. Every
run reads one JSON config (optional for ``verify``), flags override it, and
all randomness comes from ``--seed``. Outputs go to ``--out`` with a
``# key: value`` header block carrying the config hash and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import default_candidates, select_bandwidth
from .csvio import config_hash, read_curves, write_curves, write_json, write_table
from .design import SRSWOR, PoissonDesign, Sample, StratifiedSRSWOR
from .errors import ConfigError, InputError, SmoothSurveyError
from .estimators import TAGS, estimate
from .grid_kernel import KERNEL_FAMILIES, KernelSpec, TimeGrid
from .oracle_sim import Scenario, exact_moments, interior_points, monte_carlo, tiny_instances
from .population import GeneratorConfig, generate_population
from .response import (
    FullResponse,
    HomogeneousGroups,
    MarkovGap,
    ObservationMask,
    ThetaSource,
    estimate_theta_group,
    estimate_theta_stationary,
    simulate_mask,
)
from .variance import variance_estimate_plugin

log = logging.getLogger("smoothsurvey")

LOG_ENV = "SMOOTHSURVEY_LOG_LEVEL"
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
VERIFY_TOLERANCE = 1e-12


# ---------------------------------------------------------------- config


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sec


def _per_label(value, labels, name, width=None):
    """Expand a scalar, list, or ``{label: value}`` mapping to one entry per label."""
    if isinstance(value, dict):
        try:
            out = [value[str(lab)] for lab in labels]
        except KeyError as exc:
            raise ConfigError(f"{name}: missing entry for stratum {exc.args[0]}") from None
    else:
        out = [value] * len(labels)
    arr = np.array(out, dtype=float)
    if width is not None and arr.ndim == 1:
        arr = np.repeat(arr[:, None], width, axis=1)
    if width is not None and arr.shape != (len(labels), width):
        raise ConfigError(f"{name}: expected a scalar or {width} values per stratum")
    return arr


def _kernel(args, cfg):
    sec = _section(cfg, "kernel")
    family = args.kernel or sec.get("family", "epanechnikov")
    bw = args.bandwidth if args.bandwidth is not None else sec.get("bandwidth")
    return family, bw


def _estimators(args, cfg):
    choice = args.estimator or cfg.get("estimators", "all")
    if choice == "all":
        return list(TAGS)
    tags = [choice] if isinstance(choice, str) else list(choice)
    for tag in tags:
        if tag not in TAGS:
            raise ConfigError(f"unknown estimator {tag!r}; choose from {TAGS} or 'all'")
    return tags


def _eval_points(args, cfg, grid):
    m = args.eval_points if args.eval_points is not None else cfg.get("eval_points")
    if m is None:
        return grid.instants.copy()
    if int(m) < 2:
        raise ConfigError("--eval-points needs at least 2 points")
    return grid.refine(int(m))


def _cv_grid(args, cfg, grid):
    raw = args.cv_grid if args.cv_grid is not None else _section(cfg, "cv").get("candidates")
    if raw is None:
        return default_candidates(grid)
    if isinstance(raw, str):
        try:
            if ":" in raw:
                lo, hi, count = raw.split(":")
                return np.geomspace(float(lo), float(hi), int(count))
            return np.array([float(x) for x in raw.split(",") if x.strip()])
        except ValueError as exc:
            raise ConfigError(f"bad --cv-grid {raw!r}; use 'lo:hi:count' or 'h1,h2,...'") from exc
    return np.asarray(raw, dtype=float)


def _population_design(sec, labels, counts):
    """Design over a pseudo-population whose first ``n_λ`` units per stratum are the sample."""
    kind = sec.get("kind", "srswor")
    if kind == "srswor":
        if len(labels) != 1:
            raise ConfigError("srswor design with several strata in the data; use 'stratified'")
        N = int(sec.get("N", 0))
        if N < counts[0]:
            raise ConfigError(f"design N={N} is smaller than the sample size {counts[0]}")
        return SRSWOR(N, int(counts[0])), np.zeros(N, dtype=int), np.arange(counts[0])
    if kind == "stratified":
        sizes = _per_label(sec.get("stratum_sizes"), labels, "design.stratum_sizes").astype(int)
        strata = np.repeat(np.arange(len(labels)), sizes)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        idx = np.concatenate([s + np.arange(c) for s, c in zip(starts, counts)])
        return StratifiedSRSWOR(strata, counts), strata, idx
    if kind == "poisson":
        N = int(sec.get("N", 0))
        n = int(sum(counts))
        if N < n:
            raise ConfigError(f"design N={N} is smaller than the sample size {n}")
        pi = sec.get("pi")
        if pi is None:
            raise ConfigError("poisson design needs 'pi' (scalar or one value per sampled row)")
        pi = np.broadcast_to(np.asarray(pi, dtype=float), (n,))
        first = np.full(N, float(np.mean(pi)))
        first[:n] = pi
        return PoissonDesign(first), np.zeros(N, dtype=int), np.arange(n)
    raise ConfigError(f"unknown design kind {kind!r}")


def _response_model(sec, labels, codes, d):
    kind = sec.get("kind", "full")
    if kind == "full":
        return FullResponse(codes.size, d)
    if kind == "bernoulli":
        return HomogeneousGroups(_per_label(sec.get("theta", 1.0), labels, "response.theta", d), codes)
    if kind == "markov":
        theta = _per_label(sec.get("theta", 1.0), labels, "response.theta")
        rho = _per_label(sec.get("rho", 0.0), labels, "response.rho")
        return MarkovGap(theta, rho, codes, d)
    raise ConfigError(f"unknown response kind {kind!r}")


# ---------------------------------------------------------------- helpers


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _meta(command, args, effective):
    return {
        "smoothsurvey": f"{command} {__version__}",
        "config_sha256": config_hash(effective),
        "seed": args.seed,
    }


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _read_sample(args, cfg):
    if not args.input:
        raise ConfigError("--input is required")
    table = read_curves(args.input)
    labels, codes = np.unique(table.strata, return_inverse=True)
    order = np.argsort(codes, kind="stable")
    counts = np.bincount(codes, minlength=labels.size)
    design, pop_codes, idx = _population_design(_section(cfg, "design"), labels, counts)
    sample = Sample(idx, design)
    y = table.values[order]
    mask = table.observed[order].astype(np.int8)
    ids = [table.ids[i] for i in order]
    return table, labels, pop_codes, sample, y, mask, ids


def _theta_source(cfg, labels, pop_codes, sample, mask, grid):
    sec = _section(cfg, "response")
    kind = sec.get("kind", "full")
    if kind == "estimate":
        method = sec.get("method", "group")
        obs = ObservationMask(sample.indices, mask)
        sample_codes = pop_codes[sample.indices]
        if method == "group":
            est = estimate_theta_group(obs, sample_codes)
        elif method == "stationary":
            est = estimate_theta_stationary(obs, sample_codes, grid)
        else:
            raise ConfigError(f"unknown theta estimation method {method!r}")
        return est.as_source(pop_codes)
    if kind == "full" and not np.all(mask == 1):
        raise ConfigError("response kind 'full' but the input has empty cells")
    return _response_model(sec, labels, pop_codes, grid.d)


# ---------------------------------------------------------------- commands


def cmd_gen(args, cfg):
    grid_sec = _section(cfg, "grid")
    pop_sec = _section(cfg, "population")
    grid = TimeGrid(float(grid_sec.get("T", 1.0)), int(grid_sec.get("d", 48)))
    gen_cfg = GeneratorConfig(**_section(pop_sec, "generator"))
    N = int(pop_sec.get("N", 1000))
    strata = int(pop_sec.get("strata", 1))
    beta = float(pop_sec.get("beta", 1.0))
    pop = generate_population(args.seed, N, grid, strata, beta, gen_cfg)
    effective = {"command": "gen", "config": cfg, "seed": args.seed}
    meta = _meta("gen", args, effective)
    out = _out_dir(args)
    write_curves(out / "population.csv", grid, pop.ids.tolist(), pop.strata, pop.values, meta=meta)
    written = ["population.csv"]

    if "design" in cfg and _section(cfg, "response").get("kind", "full") != "estimate":
        design = _generated_design(_section(cfg, "design"), pop)
        resp = _response_model(_section(cfg, "response"), pop.stratum_labels, pop.stratum_codes, grid.d)
        rng = np.random.default_rng(np.random.SeedSequence([int(args.seed), 1]))
        sample = design.draw(rng)
        mask = simulate_mask(resp, sample, grid, rng)
        write_curves(
            out / "sample.csv",
            grid,
            pop.ids[sample.indices].tolist(),
            pop.strata[sample.indices],
            pop.values[sample.indices],
            observed=mask.entries == 1,
            meta=meta,
        )
        written.append("sample.csv")
    if args.plot:
        from .plotting import plot_population

        plot_population(out / "population.png", grid, pop.values, pop.strata)
        written.append("population.png")
    return written


def _generated_design(sec, pop):
    kind = sec.get("kind", "srswor")
    if kind == "srswor":
        return SRSWOR(pop.N, int(sec.get("n", max(1, pop.N // 10))))
    if kind == "stratified":
        sizes = _per_label(sec.get("sample_sizes"), pop.stratum_labels, "design.sample_sizes").astype(int)
        return StratifiedSRSWOR(pop.stratum_codes, sizes)
    if kind == "poisson":
        return PoissonDesign(np.broadcast_to(np.asarray(sec.get("pi", 0.1), float), (pop.N,)))
    raise ConfigError(f"unknown design kind {kind!r}")


def cmd_estimate(args, cfg):
    table, labels, pop_codes, sample, y, mask, ids = _read_sample(args, cfg)
    grid = table.grid
    family, bw = _kernel(args, cfg)
    tags = _estimators(args, cfg)
    theta = _theta_source(cfg, labels, pop_codes, sample, mask, grid)
    t = _eval_points(args, cfg, grid)
    renorm = bool(args.renormalize or cfg.get("renormalize_empty_instants", False))

    cv = None
    if bw is None or bw == "cv":
        cv = select_bandwidth(y, mask, theta, sample, grid, family, _cv_grid(args, cfg, grid),
                              renormalize=renorm)
        bw = cv.selected
    spec = KernelSpec(family, float(bw))

    effective = {
        "command": "estimate",
        "config": cfg,
        "input_sha256": _file_digest(args.input),
        "kernel": family,
        "bandwidth": spec.bandwidth,
        "estimators": tags,
        "eval_points": t.size,
        "renormalize": renorm,
        "seed": args.seed,
    }
    meta = _meta("estimate", args, effective)
    meta["bandwidth"] = repr(spec.bandwidth)
    meta["theta_source"] = "known" if theta.known else "estimated"
    rows, curves, warnings_ = [], {}, []
    for tag in tags:
        curve = estimate(tag, y, mask, theta, sample, grid, spec, t, renormalize=renorm)
        var = variance_estimate_plugin(tag, y, mask, theta, sample, grid, spec, t)
        if var.negative:
            warnings_.append(tag)
        sd = var.sd
        curves[tag] = (t, curve.values, sd)
        rows.extend((float(ti), tag, float(v), float(vv), float(s)) for ti, v, vv, s in zip(t, curve.values, var.values, sd))
    if warnings_:
        meta["negative_variance"] = ",".join(warnings_)
    out = _out_dir(args)
    write_table(out / "estimates.csv", ["t", "estimator", "value", "variance", "sd"], rows, meta)
    written = ["estimates.csv"]
    if cv is not None:
        _write_cv(out, cv, meta)
        written.append("cv.csv")
    if args.plot:
        from .plotting import plot_estimates

        plot_estimates(out / "estimates.png", curves)
        written.append("estimates.png")
    return written


def _write_cv(out, cv, meta):
    meta = dict(meta)
    meta["selected_bandwidth"] = repr(cv.selected)
    rows = [
        (float(h), float(s) if np.isfinite(s) else "inf", int(v), f or "")
        for h, s, v, f in zip(cv.candidates, cv.scores, cv.a3_valid, cv.failures)
    ]
    write_table(out / "cv.csv", ["h", "cv", "a3_valid", "failure"], rows, meta)


def cmd_cv(args, cfg):
    table, labels, pop_codes, sample, y, mask, ids = _read_sample(args, cfg)
    grid = table.grid
    family, _ = _kernel(args, cfg)
    theta = _theta_source(cfg, labels, pop_codes, sample, mask, grid)
    candidates = _cv_grid(args, cfg, grid)
    estimator = args.estimator if args.estimator and args.estimator != "all" else _section(cfg, "cv").get("estimator", "hajek2")
    renorm = bool(args.renormalize or cfg.get("renormalize_empty_instants", False))
    cv = select_bandwidth(y, mask, theta, sample, grid, family, candidates, estimator, renorm)
    effective = {
        "command": "cv",
        "config": cfg,
        "input_sha256": _file_digest(args.input),
        "kernel": family,
        "candidates": candidates.tolist(),
        "estimator": estimator,
        "seed": args.seed,
    }
    meta = _meta("cv", args, effective)
    out = _out_dir(args)
    _write_cv(out, cv, meta)
    written = ["cv.csv"]
    if args.plot:
        from .plotting import plot_cv

        plot_cv(out / "cv.png", cv.candidates, cv.scores, cv.selected)
        written.append("cv.png")
    print(f"selected bandwidth: {cv.selected!r}")
    return written


def _scenario_from_config(args, cfg):
    grid_sec = _section(cfg, "grid")
    pop_sec = _section(cfg, "population")
    grid = TimeGrid(float(grid_sec.get("T", 1.0)), int(grid_sec.get("d", 48)))
    pop = generate_population(
        args.seed,
        int(pop_sec.get("N", 2000)),
        grid,
        int(pop_sec.get("strata", 1)),
        float(pop_sec.get("beta", 1.0)),
        GeneratorConfig(**_section(pop_sec, "generator")),
    )
    design = _generated_design(_section(cfg, "design"), pop)
    resp_sec = _section(cfg, "response")
    if resp_sec.get("kind") == "estimate":
        raise ConfigError("simulate needs a known response model")
    resp = _response_model(resp_sec, pop.stratum_labels, pop.stratum_codes, grid.d)
    family, bw = _kernel(args, cfg)
    if bw is None or bw == "cv":
        raise ConfigError("simulate needs a fixed --bandwidth")
    spec = KernelSpec(family, float(bw))
    sim = _section(cfg, "simulation")
    if args.eval_points is not None:
        t = interior_points(grid, int(args.eval_points))
    else:
        t = interior_points(grid, int(sim.get("eval_points", 5)))
    tags = tuple(_estimators(args, cfg))
    plugin = tuple(sim.get("plugin", ()))
    return Scenario(pop, design, resp, spec, t, tags, "known", plugin, f"{design.kind}/{resp.kind}")


def cmd_simulate(args, cfg):
    scenario = _scenario_from_config(args, cfg)
    R = args.replicates or int(_section(cfg, "simulation").get("replicates", 1000))
    report = monte_carlo(scenario, R, args.seed)
    effective = {"command": "simulate", "config": cfg, "replicates": R, "seed": args.seed,
                 "kernel": scenario.spec.family, "bandwidth": scenario.spec.bandwidth}
    meta = _meta("simulate", args, effective)
    out = _out_dir(args)
    payload = {"header": meta, "report": report.to_dict()}
    write_json(out / "simulation.json", payload)
    rows = []
    for tag in scenario.estimators:
        for i, t in enumerate(report.eval_points):
            rows.append((
                float(t), tag, float(report.target[i]), float(report.mean[tag][i]),
                float(report.variance[tag][i]), float(report.se_variance[tag][i]),
                float(report.formula_variance[tag][i]),
            ))
    write_table(
        out / "simulation.csv",
        ["t", "estimator", "target", "mean", "empirical_variance", "se_variance", "formula_variance"],
        rows,
        meta,
    )
    written = ["simulation.json", "simulation.csv"]
    if args.plot:
        from .plotting import plot_simulation

        plot_simulation(
            out / "simulation.png",
            report.eval_points,
            report.target,
            {k: (report.variance[k], report.formula_variance[k]) for k in scenario.estimators},
        )
        written.append("simulation.png")
    return written


def cmd_verify(args, cfg):
    sec = _section(cfg, "verify")
    count = int(sec.get("instances", 12))
    results = []
    worst = 0.0
    for i, (pop, design, resp, spec) in enumerate(tiny_instances(args.seed, count)):
        fac = exact_moments(pop, design, resp, spec, "ht", strategy="factored")
        joint = exact_moments(pop, design, resp, spec, "ht", strategy="joint")
        agree = float(np.max(np.abs(np.r_[fac.expectation - joint.expectation, fac.variance - joint.variance])))
        entry = {
            "instance": i,
            "description": fac.description,
            "configurations": fac.n_configurations,
            "total_probability": fac.total_probability,
            "max_mean_error": fac.max_mean_error,
            "max_variance_error": fac.max_variance_error,
            "strategy_disagreement": agree,
        }
        worst = max(worst, fac.max_mean_error, fac.max_variance_error, agree, abs(fac.total_probability - 1))
        results.append(entry)
    effective = {"command": "verify", "config": cfg, "instances": count, "seed": args.seed}
    meta = _meta("verify", args, effective)
    payload = {
        "header": meta,
        "tolerance": VERIFY_TOLERANCE,
        "max_discrepancy": worst,
        "passed": worst < VERIFY_TOLERANCE,
        "instances": results,
    }
    out = _out_dir(args)
    write_json(out / "verification.json", payload)
    print(f"max discrepancy {worst:.3e} over {count} instances ({'pass' if worst < VERIFY_TOLERANCE else 'FAIL'})")
    if worst >= VERIFY_TOLERANCE:
        raise SystemExit(1)
    return ["verification.json"]


COMMANDS = {
    "gen": cmd_gen,
    "estimate": cmd_estimate,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="smoothsurvey", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--input", help="curve CSV (sampled units, empty cell = unobserved)")
        p.add_argument("--kernel", choices=KERNEL_FAMILIES)
        p.add_argument("--bandwidth", type=float)
        p.add_argument("--cv-grid", help="'lo:hi:count' (log-spaced) or 'h1,h2,...'")
        p.add_argument("--estimator", choices=TAGS + ("all",))
        p.add_argument("--eval-points", type=int, help="number of evaluation points")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--plot", action="store_true", help="also render PNG figures")
        p.add_argument("--replicates", type=int, help="Monte Carlo replicates (simulate)")
        p.add_argument(
            "--renormalize",
            action="store_true",
            help="hajek2: skip instants without respondents instead of failing",
        )
    return parser


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        written = COMMANDS[args.command](args, cfg)
    except (ConfigError, InputError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SmoothSurveyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except TypeError as exc:
        # unknown keys in generator settings surface here
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    for name in written:
        log.info("wrote %s", Path(args.out) / name)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
