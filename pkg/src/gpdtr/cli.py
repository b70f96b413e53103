"""Command-line entry point: fit, gcompute, optimize, simulate, calibrate.

Every flag can also be supplied through an environment variable named
``GPDTR_<FLAG>`` (upper case, dashes as underscores, e.g. ``GPDTR_SEED``);
an explicit command-line flag wins.  Outputs are written atomically and each
run leaves ``<out>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, gcomp, mcmc, simgen
from ._io import ConfigError, atomic_open, file_digest, read_kv_file
from .data_model import ParseError, Schema, ValidationError, export, ingest
from .rules import FeasibleSet, RuleConfigError, parse_rule, parse_value_list, rule_grid

log = logging.getLogger("gpdtr")

ENV_PREFIX = "GPDTR_"
USER_ERRORS = (ConfigError, ParseError, ValidationError, RuleConfigError, mcmc.InitializationError, ValueError, OSError, KeyError)


@dataclass
class RunConfig:
    """Resolved settings of one invocation; serialized into the manifest."""

    subcommand: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    options: dict = field(default_factory=dict)


# -- parsing ---------------------------------------------------------------------------


def _grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected start:stop:step")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9))
        return start + step * np.arange(n + 1)
    try:
        return np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _feasible(text: str) -> FeasibleSet:
    if text in ("", "none", "all"):
        return FeasibleSet()
    if text == "no-act-course3":
        return FeasibleSet.no_act_at_course3()
    try:
        return FeasibleSet.parse(text)
    except (ValueError, RuleConfigError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpdtr", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="run the MCMC sampler and write posterior draws")
    f.add_argument("--cohort", required=True, help="cohort CSV")
    f.add_argument("--schema", required=True, help="covariate schema file")
    f.add_argument("--config", help="sampler settings as key = value lines")
    f.add_argument("--out", required=True, help="draws file (one JSON record per line)")
    f.add_argument("--M", type=int, help="total iterations")
    f.add_argument("--M-star", type=int, help="burn-in / adaptation iterations")
    f.add_argument("--thin", type=int)
    f.add_argument("--hazard", choices=("piecewise", "weibull"))
    f.add_argument("--halve-partition", action="store_true", default=None)

    g = sub.add_parser("gcompute", parents=[common], help="posterior potential survival under a rule")
    g.add_argument("--draws", required=True)
    g.add_argument("--rule", required=True, help='e.g. "threshold(-0.1,0.5)", "fixed(1,1,0,1)", "below(l1,0)"')
    g.add_argument("--grid-t", type=_grid, default=_grid("0:1460:30"))
    g.add_argument("--B", type=int, default=10_000)
    g.add_argument("--alpha", type=float, default=0.05, help="1 - interval level")
    g.add_argument("--covariate", default="ef", help="covariate read by threshold rules")
    g.add_argument("--feasible", type=_feasible, default=FeasibleSet(), help='"none", "no-act-course3" or "3:0; 4:0|1"')
    g.add_argument("--versus", help="second rule; writes ratio and difference contrasts")
    g.add_argument("--out", required=True, help="per-draw curves CSV; summary goes to <stem>_summary.csv")

    o = sub.add_parser("optimize", parents=[common], help="posterior over the optimal threshold rule")
    o.add_argument("--draws", required=True)
    o.add_argument("--objective", choices=("survival", "utility"), default="survival")
    o.add_argument("--t-ref", type=float, required=True)
    o.add_argument("--s", type=float, help="covariate floor in the utility penalty")
    o.add_argument("--tau1", default="0,-0.1,...,-0.5")
    o.add_argument("--tau2", default="0.4,...,0.9")
    o.add_argument("--alpha", type=float, default=0.10, help="1 - credible-set level")
    o.add_argument("--B", type=int, default=10_000)
    o.add_argument("--covariate", default="ef")
    o.add_argument("--phi-min-course", type=int, default=2)
    o.add_argument("--out", required=True, help="pmf CSV")

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--design", help="design file (defaults to the shipped design)")
    s.add_argument("--n", type=int)
    s.add_argument("--out", help="cohort CSV (stdout when omitted)")
    s.add_argument("--schema-out", help="schema file (default <out>.schema)")

    c = sub.add_parser("calibrate", parents=[common], help="replicated bias / coverage / width study")
    c.add_argument("--design")
    c.add_argument("--reps", type=int, default=100)
    c.add_argument("--t", default="5,10,15,20")
    c.add_argument("--models", default="gp,weibull")
    c.add_argument("--n", type=int)
    c.add_argument("--M", type=int, default=4000)
    c.add_argument("--M-star", type=int, default=2000)
    c.add_argument("--thin", type=int, default=10)
    c.add_argument("--B", type=int, default=5000)
    c.add_argument("--n-truth", type=int, default=1_000_000)
    c.add_argument("--out", required=True, help="table CSV; per-replicate rows go to <stem>_replicates.csv")
    return p


def _apply_env(parser: argparse.ArgumentParser, env) -> None:
    """Turn ``GPDTR_*`` variables into defaults on every subparser."""
    subparsers = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    for sp in subparsers:
        for name, sub in sp.choices.items():
            for action in sub._actions:
                if not action.option_strings or action.dest == "help":
                    continue
                key = ENV_PREFIX + action.option_strings[-1].lstrip("-").upper().replace("-", "_")
                if key not in env:
                    continue
                raw = env[key]
                if isinstance(action, argparse._CountAction):
                    value = int(raw)
                elif isinstance(action, argparse._StoreTrueAction) or action.nargs == 0:
                    value = raw.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    try:
                        value = action.type(raw)
                    except (ValueError, argparse.ArgumentTypeError) as exc:
                        sub.error(f"{key}: {exc}")
                else:
                    value = raw
                action.default = value
                action.required = False


# -- helpers ---------------------------------------------------------------------------


def _stem_path(out: str, suffix: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + suffix + (p.suffix or ".csv")))


def _fmt(v) -> str:
    return repr(float(v))


def _write_manifest(run: RunConfig, out: str) -> None:
    manifest = {
        "subcommand": run.subcommand,
        "seed": run.seed,
        "options": run.options,
        "inputs": {name: {"path": path, "sha256": file_digest(path)} for name, path in run.inputs.items()},
        "outputs": {path: file_digest(path) for path in run.outputs},
        "versions": {
            "gpdtr": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with atomic_open(out + ".manifest.json") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, FeasibleSet):
        return [[k, list(v)] for k, v in o.overrides]
    raise TypeError(type(o).__name__)


def _options(args, skip=("threads", "verbose", "command", "func")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- subcommands -----------------------------------------------------------------------


def cmd_fit(args) -> RunConfig:
    kv = read_kv_file(args.config) if args.config else {}
    overrides = {"seed": args.seed}
    for name in ("M", "M_star", "thin", "hazard", "halve_partition"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    cfg = mcmc.SamplerConfig.from_kv(kv, **overrides)
    schema = Schema.read(args.schema)
    cohort = ingest(args.cohort, schema).finalized()
    log.info("fitting %d subjects, %d iterations, keeping %d draws", len(cohort.subjects), cfg.M, cfg.n_kept)
    with atomic_open(args.out) as fh:
        mcmc.run_sampler(cohort, cfg, sink=lambda d: fh.write(mcmc.draw_to_line(d)))
    meta = mcmc.meta_path(args.out)
    with atomic_open(meta) as fh:
        json.dump(mcmc.draws_meta(cohort, cfg), fh, sort_keys=True)
        fh.write("\n")
    return RunConfig(
        "fit", cfg.seed, {"cohort": args.cohort, "schema": args.schema, **({"config": args.config} if args.config else {})},
        [args.out, str(meta)], {**_options(args), "sampler": asdict(cfg)},
    )


def _load_draws(path: str):
    draws, meta = mcmc.read_draws(path)
    if len(draws) < 2:
        raise ConfigError(f"{path}: need at least two draws, found {len(draws)}")
    return draws, meta


def _write_curves(path: str, res: gcomp.GCompResult, values: np.ndarray) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m"] + [f"{t:g}" for t in res.grid])
        for m, row in zip(res.draw_ids, values):
            w.writerow([int(m)] + [_fmt(v) for v in row])


def _write_summary(path: str, grid, summ: gcomp.Summary, extrapolated) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean", "lower", "upper", "extrapolated"])
        for j, t in enumerate(grid):
            w.writerow([f"{t:g}", _fmt(summ.mean[j]), _fmt(summ.lower[j]), _fmt(summ.upper[j]), int(extrapolated[j])])


def cmd_gcompute(args) -> RunConfig:
    draws, meta = _load_draws(args.draws)
    rule = parse_rule(args.rule, args.covariate)
    cfg = gcomp.GCompConfig(
        B=args.B, grid=args.grid_t, seed=args.seed, feasible=args.feasible,
        identifiable_horizon=meta.get("max_death_time", np.inf), workers=args.threads,
    )
    res = gcomp.gcompute(draws, rule, cfg)
    outputs = [args.out, _stem_path(args.out, "_summary")]
    _write_curves(outputs[0], res, res.psi)
    _write_summary(outputs[1], res.grid, gcomp.posterior_summary(res.psi, args.alpha), res.extrapolated)
    if args.versus:
        res2 = gcomp.gcompute(draws, parse_rule(args.versus, args.covariate), cfg)
        for kind in ("ratio", "difference"):
            con = gcomp.contrast(res, res2, kind, args.alpha)
            path = _stem_path(args.out, f"_{kind}")
            _write_summary(path, res.grid, con.summary, res.extrapolated)
            outputs.append(path)
    return RunConfig("gcompute", args.seed, {"draws": args.draws, "draws_meta": str(mcmc.meta_path(args.draws))}, outputs, _options(args))


def cmd_optimize(args) -> RunConfig:
    draws, _ = _load_draws(args.draws)
    tau1 = parse_value_list(args.tau1)
    tau2 = parse_value_list(args.tau2)
    cells = rule_grid(tau1, tau2)
    cfg = gcomp.GCompConfig(
        B=args.B, grid=np.array([args.t_ref]), s=args.s, t_ref=args.t_ref, phi_covariate=args.covariate,
        phi_min_course=args.phi_min_course, seed=args.seed, workers=args.threads,
    )
    post = gcomp.optimize_rule(draws, cells, cfg, args.objective, 1 - args.alpha, args.covariate)
    in_set = set(post.credible_set.tolist())
    with atomic_open(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau1", "tau2", "mass", "in_credible_set"])
        for i, cell in enumerate(cells):
            w.writerow([f"{cell.tau1:g}", f"{cell.tau2:g}", _fmt(post.pmf[i]), int(i in in_set)])
    values_path = _stem_path(args.out, "_values")
    with atomic_open(values_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m"] + [f"{c.tau1:g}/{c.tau2:g}" for c in cells] + ["argmax"])
        for d, row, best in zip(draws, post.values, post.argmax):
            w.writerow([d.m] + [_fmt(v) for v in row] + [int(best)])
    mode = cells[post.mode]
    log.info("posterior mode tau1=%g tau2=%g (mass %.3f); %d draws had tied maxima", mode.tau1, mode.tau2, post.pmf[post.mode], post.n_ties)
    return RunConfig(
        "optimize", args.seed, {"draws": args.draws, "draws_meta": str(mcmc.meta_path(args.draws))},
        [args.out, values_path], {**_options(args), "n_ties": post.n_ties},
    )


def _design(args) -> simgen.SimDesign:
    design = simgen.SimDesign.read(args.design) if args.design else simgen.SimDesign()
    if args.n is not None:
        design = simgen.SimDesign(**{**design.__dict__, "n": args.n})
    return design


def cmd_simulate(args) -> RunConfig | None:
    design = _design(args)
    cohort = simgen.generate_cohort(design, seed=args.seed)
    if args.out is None:
        from .data_model import write_rows

        write_rows(cohort.subjects, cohort.schema, sys.stdout)
        return None
    export(cohort, args.out)
    schema_out = args.schema_out or args.out + ".schema"
    cohort.schema.write(schema_out)
    inputs = {"design": args.design} if args.design else {}
    return RunConfig("simulate", args.seed, inputs, [args.out, schema_out], {**_options(args), "design_values": design.to_kv()})


def cmd_calibrate(args) -> RunConfig:
    design = _design(args)
    settings = simgen.CalibrationSettings(
        reps=args.reps, t_points=tuple(float(v) for v in args.t.split(",")), models=tuple(m.strip() for m in args.models.split(",")),
        M=args.M, M_star=args.M_star, thin=args.thin, B=args.B, n_truth=args.n_truth, seed=args.seed, workers=args.threads,
    )

    def progress(i, n):
        log.info("replicate %d/%d done", i, n)

    report = simgen.calibrate(design, settings, progress=progress)
    reps_path = _stem_path(args.out, "_replicates")
    simgen.write_report(report, args.out)
    simgen.write_replicates(report, reps_path)
    for row in report.rows:
        log.info("%s t=%g bias=%.2f%% coverage=%.1f%% width=%.3f", row["model"], row["t"], row["bias_pct"], row["coverage_pct"], row["width"])
    inputs = {"design": args.design} if args.design else {}
    return RunConfig(
        "calibrate", args.seed, inputs, [args.out, reps_path],
        {**_options(args), "design_values": design.to_kv(), "failures": report.failures, "truth_method": report.truth_method},
    )


COMMANDS = {"fit": cmd_fit, "gcompute": cmd_gcompute, "optimize": cmd_optimize, "simulate": cmd_simulate, "calibrate": cmd_calibrate}


def main(argv=None, env=None) -> int:
    parser = build_parser()
    _apply_env(parser, os.environ if env is None else env)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        run = COMMANDS[args.command](args)
        if run is not None:
            _write_manifest(run, run.outputs[0])
    except USER_ERRORS as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"gpdtr {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
