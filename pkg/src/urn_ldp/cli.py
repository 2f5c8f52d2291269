"""Command-line entry point: ``urn-ldp <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 1 failed check or analysis, 2 usage or parse error,
3 resource cap.  Every run writes ``manifest.json`` next to its data files;
files are written only once the whole run has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction

from . import __version__
from .config import ConfigError, ExperimentConfig
from .drift import (
    DriftProfile,
    UnsupportedFamilyError,
    equilibrium_solve,
    monotonicity_check,
    remark_condition_checks,
)
from .exact import DP_CAP, dp_rows
from .ldp import (
    InsufficientPointsError,
    Lemma31Params,
    bound_verification,
    exact_tail_grid,
    lemma31_terms,
    martingale_sum_exceedance,
    mc_tail_grid,
    rate_fit,
)
from .model import ResourceLimitError, simulate_path, validate_config
from .sa import (
    HarmonicSchedule,
    LinearDrift,
    RademacherNoise,
    RangeViolation,
    TanhDrift,
    UniformNoise,
    condition_audit,
    run_sa,
    synthetic_problem,
    tail_experiment,
    urn_as_sa,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3

PATHS_COLUMNS = ["trial", "step", "y1", "y2", "t", "z", "outcome", "delta_m"]
EXACT_COLUMNS = ["n", "k", "z", "probability"]
TAILS_COLUMNS = ["n", "eps", "trials", "hits", "p_hat", "ci99", "provenance"]
RATEFIT_COLUMNS = ["a_hat", "log_c_hat", "r_squared", "points_used", "points_zero"]
BOUNDS_COLUMNS = ["check_id", "description", "status", "worst_value", "worst_step"]
CHECK_COLUMNS = ["check_id", "condition", "status", "detail"]


class CheckFailed(Exception):
    """Analysis finished but a check failed; outputs are still written."""


def fmt(v):
    """17 significant digits for floats so values round-trip through text."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Fraction):
        v = float(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if hasattr(v, "item"):
        return fmt(v.item())
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if isinstance(v, Fraction) or hasattr(v, "item"):
        v = float(v)
    if isinstance(v, float):
        return float(fmt(v)) if math.isfinite(v) else fmt(v)
    return str(v)


class Outputs:
    """In-memory staging of result files, flushed to disk in one go."""

    def __init__(self, fmt_name):
        self.format = fmt_name
        self.files = {}

    def table(self, stem, columns, rows):
        if self.format == "json":
            recs = [dict(zip(columns, (_jsonable(v) for v in row))) for row in rows]
            self.files[f"{stem}.json"] = json.dumps(recs, indent=2) + "\n"
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(v) for v in row])
            self.files[f"{stem}.csv"] = buf.getvalue()

    def document(self, name, payload):
        self.files[name] = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"

    def flush(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        written = []
        try:
            for name, text in self.files.items():
                path = os.path.join(out_dir, name)
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                written.append(path)
        except OSError:
            for path in written:
                os.remove(path)
            raise
        return written


# ---------------------------------------------------------------------------
# subcommands


def _validation_rows(report):
    return [
        (f"{r.code}:{r.check}", r.code, "pass" if r.passed else ("fail" if r.fatal else "flag"), r.detail)
        for r in report.results
    ]


def _require_valid(cfg, urn, allow_invalid):
    report = validate_config(urn.matrix, urn.skew, (urn.y1, urn.y2))
    if not report.ok and not allow_invalid:
        names = ", ".join(f"{r.code} {r.check}" for r in report.failed())
        raise CheckFailed(f"invalid model configuration: {names}")
    return report


def cmd_check(cfg, args, out):
    urn = cfg.urn()
    report = validate_config(urn.matrix, urn.skew, (urn.y1, urn.y2))
    rows = _validation_rows(report)
    failed = [r for r in report.failed()]
    profile = DriftProfile(urn.matrix, urn.skew)
    can_drift = all(r.passed for r in report.results if r.code == "C1" and r.check in ("f(0)=0", "f(1)=1"))
    can_drift = can_drift and urn.matrix.h1 > 0 and urn.matrix.h2 > 0
    if can_drift:
        mono = monotonicity_check(profile)
        rows.append(("drift:non_increasing", "drift", "pass" if mono.passed else "fail",
                     f"worst increase {mono.worst_increase:.3g} on {mono.worst_pair}; {mono.note}"))
        if not mono.passed:
            failed.append("drift non_increasing")
        try:
            rem = remark_condition_checks(urn.matrix, urn.skew)
        except UnsupportedFamilyError as exc:
            rows.append(("sufficient:conditions", "sufficient", "n/a", str(exc)))
        else:
            for c in rem.checks:
                rows.append((f"sufficient:{c.name.split(':')[0]}", "sufficient", "pass" if c.passed else "fail",
                             f"{c.name}: {fmt(c.lhs)} {c.relation} {fmt(c.rhs)}"))
            rows.append(("sufficient:sufficient_condition", "sufficient", "pass" if rem.passed else "fail",
                         f"{rem.family}" + (f" case {rem.case}, y0={fmt(rem.y0)}" if rem.case else "")))
            rows.append(("sufficient:concavity_precondition", "sufficient", "pass" if rem.concavity_ok else "fail",
                         f"H11/H1 <= H12/H2: {rem.ratio_ordered}; skew concave: {rem.skew_concave}"))
            if not rem.passed:
                failed.append("sufficient sufficient_condition")
            if not rem.concavity_ok:
                failed.append("sufficient concavity_precondition")
    out.table("check", CHECK_COLUMNS, rows)
    for row in rows:
        if row[2] == "fail":
            print(f"FAIL {row[0]}: {row[3]}", file=sys.stderr)
    if failed:
        raise CheckFailed("configuration checks failed")


def cmd_equilibrium(cfg, args, out):
    urn = cfg.urn()
    _require_valid(cfg, urn, args.allow_invalid)
    rep = equilibrium_solve(DriftProfile(urn.matrix, urn.skew), cfg.number("analysis.tol", 1e-12))
    out.document("equilibrium.json", {
        "istar": [rep.istar_lo, rep.istar_hi],
        "y_star": rep.y_star,
        "h_prime_at_root": rep.h_prime_at_root,
        "stable": rep.stable,
        "sign_pattern": rep.sign_pattern,
        "monotone_nonincreasing": rep.monotone_nonincreasing,
        "worst_violation": rep.worst_violation,
        "worst_pair": list(rep.worst_pair),
        "roots_found": rep.roots_found,
        "roots_in_istar": rep.roots_in_istar,
    })
    if rep.y_star is None:
        print(f"no unique equilibrium; roots: {[fmt(r) for r in rep.roots_found]}", file=sys.stderr)
        raise CheckFailed("no unique root")


def cmd_simulate(cfg, args, out):
    urn = cfg.urn()
    _require_valid(cfg, urn, args.allow_invalid)
    n = cfg.integer("analysis.n")
    trials = cfg.integer("analysis.trials", 1)
    if n < 0 or trials < 1:
        raise ConfigError("analysis.n must be >= 0 and analysis.trials >= 1")
    rows = []
    for tr in range(trials):
        path = simulate_path(urn, n, args.seed, trial=tr)
        s0 = path.states[0]
        rows.append((tr, 0, s0.y1, s0.y2, s0.t, s0.z, None, None))
        for st, rec in zip(path.states[1:], path.steps):
            rows.append((tr, st.n, st.y1, st.y2, st.t, st.z, rec.outcome.name, rec.delta_m))
    out.table("paths", PATHS_COLUMNS, rows)


def _y_star(cfg, urn):
    if cfg.has("analysis.y_star"):
        return cfg.number("analysis.y_star")
    rep = equilibrium_solve(DriftProfile(urn.matrix, urn.skew))
    if rep.y_star is None:
        raise CheckFailed("no unique equilibrium to measure deviations from")
    return rep.y_star


def _tail_rows(ests):
    return [(e.n, e.eps, e.trials, e.hits, e.p_hat, e.ci_half_width, e.provenance) for e in ests]


def cmd_exact(cfg, args, out):
    urn = cfg.urn()
    _require_valid(cfg, urn, args.allow_invalid)
    ns = cfg.numbers("analysis.n_grid") if cfg.has("analysis.n_grid") else [cfg.integer("analysis.n")]
    if any(not isinstance(n, int) or n < 0 for n in ns):
        raise ConfigError("n values must be nonnegative integers")
    rows = []
    for dist in dp_rows(urn, ns, cap=cfg.integer("analysis.cap", DP_CAP)):
        rows.extend((dist.n, k, z, p) for k, z, p in dist.support)
    out.table("exact", EXACT_COLUMNS, rows)
    if cfg.has("analysis.eps"):
        out.table("tails", TAILS_COLUMNS, _tail_rows(exact_tail_grid(urn, _y_star(cfg, urn), ns, cfg.numbers("analysis.eps"))))


def cmd_ldp(cfg, args, out):
    urn = cfg.urn()
    _require_valid(cfg, urn, args.allow_invalid)
    trials = cfg.integer("analysis.trials")
    if trials < 1:
        raise ConfigError("analysis.trials must be >= 1")
    ns = cfg.numbers("analysis.n_grid") if cfg.has("analysis.n_grid") else [cfg.integer("analysis.n")]
    eps_list = cfg.numbers("analysis.eps")
    if any(e <= 0 for e in eps_list):
        raise ConfigError("analysis.eps must be positive")
    y_star = _y_star(cfg, urn)
    mc = mc_tail_grid(urn, y_star, ns, eps_list, trials, args.seed, args.threads,
                      exact_ci=cfg.flag("analysis.exact_ci"))
    ests = list(mc)
    use_exact = cfg.flag("analysis.exact", True) and max(ns) <= DP_CAP
    exact = exact_tail_grid(urn, y_star, ns, eps_list) if use_exact else []
    ests.extend(exact)
    out.table("tails", TAILS_COLUMNS, _tail_rows(ests))
    fit_rows = []
    source = exact if exact else mc
    for eps in eps_list:
        pts = [e for e in source if e.eps == eps]
        try:
            f = rate_fit(pts)
            fit_rows.append((f.a_hat, f.log_c_hat, f.r_squared, f.points_used, f.points_zero))
        except InsufficientPointsError:
            zeros = sum(1 for e in pts if e.p_hat == 0)
            fit_rows.append((None, None, None, len(pts) - zeros, zeros))
    out.table("ratefit", RATEFIT_COLUMNS, fit_rows)


def _sa_problem(cfg, urn_cfg=None):
    kind = cfg.get("sa.problem", "tanh").strip().lower()
    if kind == "urn":
        return urn_as_sa(urn_cfg if urn_cfg is not None else cfg.urn())
    x_star = cfg.number("sa.x_star", 0.0)
    noise_kind = cfg.get("sa.noise", "rademacher").strip().lower()
    bound = cfg.number("sa.noise_bound", 1.0)
    if noise_kind == "rademacher":
        noise = RademacherNoise(bound)
    elif noise_kind == "uniform":
        noise = UniformNoise(bound)
    else:
        raise ConfigError(f"sa.noise: unknown noise {noise_kind!r}")
    schedule = HarmonicSchedule(cfg.number("sa.gamma_scale", 1.0), cfg.number("sa.gamma_offset", 0.0))
    if kind == "tanh":
        drift = TanhDrift(cfg.number("sa.strength"), x_star)
    elif kind == "linear":
        drift = LinearDrift(cfg.number("sa.strength"), x_star)
    else:
        raise ConfigError(f"sa.problem: unknown problem {kind!r}")
    return synthetic_problem(drift, noise, cfg.number("sa.x0", x_star), schedule,
                             bounded=cfg.flag("sa.bounded"), x_star=x_star, name=kind)


def cmd_sa(cfg, args, out):
    urn = None
    if cfg.get("sa.problem", "tanh").strip().lower() == "urn":
        urn = cfg.urn()
        _require_valid(cfg, urn, args.allow_invalid)
    problem = _sa_problem(cfg, urn)
    trials = cfg.integer("analysis.trials")
    if trials < 1:
        raise ConfigError("analysis.trials must be >= 1")
    ns = cfg.numbers("analysis.n_grid")
    eps = cfg.numbers("analysis.eps")[0]
    if eps <= 0:
        raise ConfigError("analysis.eps must be positive")
    x_star = problem.x_star if problem.x_star is not None else cfg.number("sa.x_star")
    exp = tail_experiment(problem, x_star, ns, eps, trials, args.seed, args.threads)
    out.table("tails_upper", TAILS_COLUMNS, _tail_rows(exp.upper))
    out.table("tails_lower", TAILS_COLUMNS, _tail_rows(exp.lower))
    s = exp.summary
    audit = condition_audit(run_sa(problem, min(max(ns), cfg.integer("analysis.audit_n", 2000)), args.seed))
    out.document("regime.json", {
        "predicted_upper": s.predicted_upper, "predicted_lower": s.predicted_lower,
        "upper_exponent": s.upper_exponent, "lower_exponent": s.lower_exponent,
        "upper_fit": vars(s.upper_fit), "lower_fit": vars(s.lower_fit),
        "constants": {k: getattr(problem, k) for k in ("u_l", "u_u", "k_g", "k_u", "k_e", "k_gl", "k_gu")},
        "audit": {k: {"status": c.status, "declared": c.declared, "observed": c.observed,
                      "worst_step": c.worst_step} for k, c in audit.conditions.items()},
    })
    if not audit.ok:
        raise CheckFailed("SA condition audit failed")


def cmd_bounds(cfg, args, out):
    urn = cfg.urn()
    _require_valid(cfg, urn, args.allow_invalid)
    n = cfg.integer("analysis.n")
    paths = cfg.integer("analysis.paths", 100)
    if n < 1 or paths < 1:
        raise ConfigError("analysis.n and analysis.paths must be >= 1")
    rep = bound_verification(urn, n, paths, args.seed,
                             eps_list=tuple(cfg.numbers("analysis.eps", [0.05, 0.1, 0.2])),
                             threads=args.threads)
    out.table("bounds", BOUNDS_COLUMNS,
              [(c.check_id, c.description, c.status, c.worst_value, c.worst_step) for c in rep.checks])
    doc = {"k_hat": rep.k_hat, "k_cap": rep.extras["k_cap"], "y_star": rep.y_star,
           "k_hat_per_path_min": float(rep.k_hat_per_path.min()),
           "k_hat_per_path_max": float(rep.k_hat_per_path.max())}
    if cfg.has("analysis.k"):
        k = cfg.integer("analysis.k")
        n_sum = cfg.integer("analysis.sum_n", n)
        eps = cfg.number("analysis.sum_eps", 0.5)
        big_k = cfg.number("analysis.k_hat", rep.k_hat)
        try:
            params = Lemma31Params(cfg.number("analysis.beta", math.e), k, n_sum, eps, big_k, urn.matrix)
        except ValueError as exc:
            raise ConfigError(f"martingale-sum bound parameters: {exc}") from None
        terms = lemma31_terms(params)
        freq, _ = martingale_sum_exceedance(urn, k, n_sum, eps, cfg.integer("analysis.sum_paths", 10_000),
                                            args.seed, args.threads)
        doc["martingale_sum"] = {
            "beta": params.beta, "k": k, "n": n_sum, "eps": eps, "K": big_k,
            "sum_inv_sq": terms.s, "t": terms.t, "chernoff_ok": terms.chernoff_ok,
            "bound": terms.bound, "empirical_frequency": freq, "holds": freq <= terms.bound,
        }
    out.document("bounds_summary.json", doc)
    if not rep.ok or (doc.get("martingale_sum") and not doc["martingale_sum"]["holds"]):
        raise CheckFailed("bound verification found violations")


COMMANDS = {
    "check": cmd_check,
    "equilibrium": cmd_equilibrium,
    "simulate": cmd_simulate,
    "exact": cmd_exact,
    "ldp": cmd_ldp,
    "sa": cmd_sa,
    "bounds": cmd_bounds,
}
STOCHASTIC = {"simulate", "ldp", "sa", "bounds"}


def build_parser():
    parser = argparse.ArgumentParser(prog="urn-ldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key-value experiment file")
        p.add_argument("--out", help="output directory (default: output.dir or '.')")
        p.add_argument("--seed", type=int, help="64-bit unsigned master seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for trial fan-out")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--allow-invalid", action="store_true",
                       help="run even when the model fails C1-C4 (for negative tests)")
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is None and cfg.has("analysis.seed"):
            args.seed = cfg.integer("analysis.seed")
        if args.command in STOCHASTIC and args.seed is None:
            raise ConfigError("a seed is required (--seed or analysis.seed)")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        args.threads = args.threads or cfg.integer("analysis.threads", 1)
        args.format = args.format or cfg.get("output.format", "csv").strip()
        if args.format not in ("csv", "json"):
            raise ConfigError("output.format must be csv or json")
        out_dir = args.out or cfg.get("output.dir", ".")
        out = Outputs(args.format)
        status = EXIT_OK
        try:
            COMMANDS[args.command](cfg, args, out)
        except CheckFailed as exc:
            print(f"urn-ldp: {exc}", file=sys.stderr)
            status = EXIT_FAIL
        resolved = dict(sorted(cfg.raw.items()))
        out.document("manifest.json", {
            "tool": "urn-ldp", "version": __version__, "command": args.command,
            "seed": args.seed, "threads": args.threads, "format": args.format,
            "allow_invalid": args.allow_invalid, "config": resolved, "exit_status": status,
        })
        out.flush(out_dir)
        return status
    except ConfigError as exc:
        print(f"urn-ldp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"urn-ldp: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except RangeViolation as exc:
        print(f"urn-ldp: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
