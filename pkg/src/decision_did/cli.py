"""``decision-did`` command line: simulate, estimate, oracle, verify, replicate-example, sweep."""

from __future__ import annotations

import argparse
import json
import math
import re
import secrets
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .builtins import BUILTINS, StaggeredParams, builtin_anticipation_dgp, builtin_cars_example, builtin_staggered_dgp
from .estimators import (
    EstimationError,
    bootstrap_ci,
    did_classic,
    did_classic_se,
    group_time_att,
    normalize_control,
)
from .oracle import SIGMA, OracleSampler, bias_sweep, oracle_estimand, two_period_nodes, verify_proposition
from .panel import PanelValidationError, load_panel, save_panel
from .scm import (
    Scm,
    ScmError,
    check_intervention,
    sample_interventional,
    sample_observational,
    to_panel,
    validate,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAIL = 3
EXIT_VACUOUS = 4

EXAMPLE_MARGIN = 0.03
EXAMPLE_DID_MARGIN = 0.04
Z95 = 1.959963984540054


class UsageError(Exception):
    """Bad input detected before any computation starts."""


# -- helpers ------------------------------------------------------------------------


def resolve_scm(spec: str, tau: int | None = None, s: int | None = None, alpha: float | None = None) -> Scm:
    """``cars``, ``builtin:NAME`` (or a bare builtin name) or ``file:PATH`` to an SCM."""
    if spec.startswith("file:"):
        path = Path(spec[5:])
        if not path.is_file():
            raise UsageError(f"SCM file not found: {path}")
        scm = Scm.from_json(path.read_text(encoding="utf-8"))
        validate(scm)
        return scm
    name = spec[8:] if spec.startswith("builtin:") else spec
    if name not in BUILTINS:
        raise UsageError(f"unknown SCM {spec!r}; builtins: {', '.join(sorted(BUILTINS))}")
    if name == "staggered":
        return builtin_staggered_dgp(4 if tau is None else tau, 1 if s is None else s, StaggeredParams())
    if name == "prop1-dgp":
        return builtin_anticipation_dgp(-2.0 if alpha is None else alpha)
    return BUILTINS[name]()


def _seed(args) -> int:
    return int(args.seed) if args.seed is not None else secrets.randbits(63)


def _check_output(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    parent = out.parent if str(out.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")
    return out


def _write_json(path: Path | None, doc: dict) -> None:
    if path is not None:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def render_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[_fmt(x) for x in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(line.rstrip() for line in lines)


def _parse_do(items: Sequence[str] | None) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--do expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--do value for {name!r} is not a number") from None
    return out


_GT = re.compile(r"^(ATT_[AP]_GT)\((\d+),\s*(\d+)\)$", re.IGNORECASE)


def _parse_kind(kind: str, g: int | None, k: int | None) -> tuple[str, int | None, int | None]:
    m = _GT.match(kind.strip())
    if m:
        return m.group(1).upper(), int(m.group(2)), int(m.group(3))
    return kind.strip().upper(), g, k


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = _check_output(args.out)
    scm = resolve_scm(args.scm, args.tau, args.s, args.alpha)
    do = check_intervention(scm, _parse_do(args.do))
    seed = _seed(args)
    if args.n < 1:
        raise UsageError("--n must be positive")
    if do:
        panel = sample_interventional(scm, do, args.n, seed, keep_exogenous=args.keep_exogenous)
    else:
        panel = sample_observational(scm, args.n, seed, keep_exogenous=args.keep_exogenous)
    save_panel(panel, out)
    manifest = {"scm": scm.name, "scm_hash": scm.digest(), "seed": seed, "n": args.n, "lag_s": scm.lag,
                "n_periods": panel.n_periods, "do": do, "decision_observed": panel.has_decision}
    _write_json(Path(f"{out}.manifest.json"), manifest)
    print(render_table(["scm", "scm_hash", "seed", "n", "periods"],
                       [[scm.name, scm.digest()[:16], seed, args.n, panel.n_periods]]))
    return EXIT_OK


def cmd_estimate(args) -> int:
    path = Path(args.panel)
    if not path.is_file():
        raise UsageError(f"panel file not found: {path}")
    out = _check_output(args.out)
    gt = args.g is not None or args.k is not None
    if gt and (args.g is None or args.k is None):
        raise UsageError("--g and --k go together")
    if gt:
        control = normalize_control(args.control)
    panel = load_panel(path, lag_s=args.s)
    if gt:
        s = args.s if args.s is not None else 1
        report = group_time_att(panel, args.g, args.k, s, control)

        def estimator(p):
            return group_time_att(p, args.g, args.k, s, control)
    else:
        report = did_classic(panel, args.assert_estimand)

        def estimator(p):
            return did_classic(p, args.assert_estimand)

    seed = None
    if args.bootstrap:
        seed = _seed(args)
        report.bootstrap_ci = bootstrap_ci(panel, estimator, args.level, args.bootstrap, seed)
    doc = report.to_dict()
    doc["seed"] = seed
    _write_json(out, doc)
    row = [report.estimand, report.estimate, report.control_group,
           ", ".join(f"{k}={v}" for k, v in report.cell_sizes.items())]
    headers = ["estimand", "estimate", "control", "cells"]
    if report.bootstrap_ci is not None:
        headers.append(f"{report.bootstrap_ci.level:.0%} CI")
        row.append(f"[{report.bootstrap_ci.lo:.6g}, {report.bootstrap_ci.hi:.6g}]")
    print(render_table(headers, [row]))
    print(f"assumption set asserted: {', '.join(report.assumption_set)}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    out = _check_output(args.out)
    scm = resolve_scm(args.scm, args.tau, args.s, args.alpha)
    kind, g, k = _parse_kind(args.kind, args.g, args.k)
    seed = _seed(args)
    est = oracle_estimand(scm, kind, g, k, n_draws=args.draws, seed=seed, method=args.method)
    doc = est.to_dict()
    doc.update({"scm": scm.name, "scm_hash": scm.digest(), "seed": seed})
    _write_json(out, doc)
    print(render_table(["kind", "value", "mc_se", "n_event", "event", "method"],
                       [[est.kind, est.value, est.mc_se, est.n_event, est.event, est.method]]))
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _check_output(args.out)
    scm = resolve_scm(args.scm, args.tau, args.s, args.alpha)
    seed = _seed(args)
    report = verify_proposition(args.prop, scm, args.n_units, args.replications, seed, args.oracle_draws,
                                args.sigma)
    _write_json(out, report.to_dict())
    rows = [[a["name"], a["required"], a["holds"]] for a in report.audits]
    print(render_table(["assumption audit", "required", "holds"], rows))
    print()
    rows = [[c["label"], c.get("diff"), c.get("tolerance"), c["ok"]] for c in report.comparisons]
    print(render_table(["identity", "diff", "tolerance", "ok"], rows))
    if report.classic is not None:
        c = report.classic
        print(f"\nclassic reading (DiD = ATT_A2): audit holds={c['audit_holds']}, "
              f"diff={_fmt(c['comparison']['diff'])}, verified={c['verified']}")
    status = {"pass": "pass", "fail": "fail: identity does not hold", "vacuous": "vacuous: premises violated"}
    print(f"\nproposition {report.proposition} on {report.scm} (seed {seed}): {status[report.status]}")
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "vacuous": EXIT_VACUOUS}[report.status]


def _check_row(name: str, reference: float, value: float, se: float, margin: float, source: str) -> dict:
    half = Z95 * se if math.isfinite(se) else math.inf
    if not math.isfinite(value) or half > margin:
        flag = "inconclusive"
    else:
        flag = "pass" if abs(value - reference) <= margin else "fail"
    return {"quantity": name, "reference": reference, "source": source, "value": value, "mc_se": se,
            "ci_lo": value - half, "ci_hi": value + half, "margin": margin, "flag": flag}


def replicate_example(n: int = 1_000_000, seed: int = 1) -> dict:
    """Every number of the recall example, each with a Monte Carlo interval and a flag."""
    scm = builtin_cars_example()
    sampler = OracleSampler(scm, n, seed)
    nd = two_period_nodes(scm)
    nat = sampler.natural
    rows = []

    def guarded(name, reference, margin, source, fn):
        try:
            value, se = fn()
        except EstimationError:
            value, se = float("nan"), float("nan")
        rows.append(_check_row(name, reference, value, se, margin, source))

    def trend(v):
        return v[nd["Y2"]] - v[nd["Y1"]]

    treated, control = nat[nd["A2"]] == 1, nat[nd["A2"]] == 0

    def cf_trend():
        sampler.event(treated, "A2=1")
        return sampler.mean(trend, {nd["A2"]: 0}, treated)

    def obs_trend(mask, label):
        def fn():
            sampler.event(mask, label)
            return sampler.mean(trend, {}, mask)
        return fn

    def oracle(kind):
        def fn():
            est = oracle_estimand(scm, kind, sampler=sampler)
            return est.value, est.mc_se
        return fn

    def did():
        panel = to_panel(scm, nat)
        return did_classic(panel).estimate, did_classic_se(panel)

    guarded("E[Y2^(a2=0) - Y1 | A2=1]", -2.0, EXAMPLE_MARGIN, "published", cf_trend)
    guarded("E[Y2 - Y1 | A2=0]", -2.0, EXAMPLE_MARGIN, "published", obs_trend(control, "A2=0"))
    guarded("E[Y2 - Y1 | A2=1]", -2.0, EXAMPLE_MARGIN, "published", obs_trend(treated, "A2=1"))
    guarded("ATT_A2", 0.0, EXAMPLE_MARGIN, "published", oracle("ATT_A2"))
    guarded("ATT_P", -4.0, EXAMPLE_MARGIN, "published", oracle("ATT_P"))
    guarded("PSI", -5.0, EXAMPLE_MARGIN, "derived", oracle("PSI"))
    guarded("did_classic", 0.0, EXAMPLE_DID_MARGIN, "published", did)
    flags = [r["flag"] for r in rows]
    overall = "fail" if "fail" in flags else ("inconclusive" if "inconclusive" in flags else "pass")
    return {"scm": scm.name, "scm_hash": scm.digest(), "n": int(n), "seed": int(seed), "rows": rows,
            "status": overall}


def cmd_replicate_example(args) -> int:
    out = _check_output(args.out)
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    doc = replicate_example(args.n, args.seed)
    _write_json(out, doc)
    rows = [[r["quantity"], r["reference"], r["value"], f"[{r['ci_lo']:.4g}, {r['ci_hi']:.4g}]", r["flag"]]
            for r in doc["rows"]]
    print(render_table(["quantity", "reference", "estimate", "95% MC CI", "flag"], rows))
    print(f"\nn={doc['n']} seed={doc['seed']}: {doc['status']}")
    return EXIT_FAIL if doc["status"] == "fail" else EXIT_OK


def cmd_sweep(args) -> int:
    out = _check_output(args.out)
    csv_out = _check_output(args.csv)
    try:
        alphas = [float(x) for x in args.alphas.split(",") if x.strip()]
    except ValueError:
        raise UsageError("--alphas must be a comma-separated list of numbers") from None
    if not alphas:
        raise UsageError("--alphas is empty")
    seed = _seed(args)
    table = bias_sweep(builtin_anticipation_dgp, alphas, args.n_units, seed, args.oracle_draws, args.sigma)
    _write_json(out, table.to_dict())
    if csv_out is not None:
        csv_out.write_text(table.to_csv(), encoding="utf-8")
    rows = [[r.alpha, r.psi, r.att_a2, r.did, r.residual, r.residual_se, r.ok] for r in table.rows]
    print(render_table(["alpha", "psi", "ATT_A2", "did", "residual", "residual_se", "ok"], rows))
    return EXIT_OK if table.passed else EXIT_FAIL


# -- parser -------------------------------------------------------------------------


def _add_scm(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scm", required=True, help="cars | builtin:NAME | file:PATH.json")
    p.add_argument("--tau", type=int, help="periods for builtin:staggered (default 4)")
    p.add_argument("--s", type=int, help="decision-to-implementation lag for builtin:staggered (default 1)")
    p.add_argument("--alpha", type=float, help="anticipation coefficient for builtin:prop1-dgp (default -2)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="RNG seed; drawn from OS entropy and reported when omitted")
    p.add_argument("--out", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decision-did", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a panel CSV from an SCM")
    _add_scm(p)
    p.add_argument("--n", type=int, required=True, help="number of units")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="panel CSV path; the manifest goes to OUT.manifest.json")
    p.add_argument("--do", action="append", metavar="NODE=VALUE", help="intervene (repeatable)")
    p.add_argument("--keep-exogenous", action="store_true", help="also write exogenous node columns")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="DiD estimate from a panel CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--g", type=int, help="decision time (staggered)")
    p.add_argument("--k", type=int, help="outcome time (staggered)")
    p.add_argument("--s", type=int, help="decision-to-implementation lag")
    p.add_argument("--control", default="not_yet_treated", help="not_yet_treated | never_treated")
    p.add_argument("--assert", dest="assert_estimand", default="ATT_A2", choices=["ATT_A2", "ATT_P"],
                   help="which reading of the two-period DiD the caller asserts")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="bootstrap replicates (0 = none)")
    p.add_argument("--level", type=float, default=0.95)
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="ground-truth estimand by interventional simulation")
    _add_scm(p)
    p.add_argument("--kind", required=True, help="ATT_A2 | ATT_P | PSI | ATT_P_GT | ATT_A_GT (or ATT_P_GT(g,k))")
    p.add_argument("--g", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--method", default="auto", choices=["auto", "mean", "sample"])
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="Monte Carlo check of an identification result")
    p.add_argument("--prop", type=int, required=True, choices=[1, 2, 3])
    _add_scm(p)
    p.add_argument("--n-units", type=int, default=10_000)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--oracle-draws", type=int, default=1_000_000)
    p.add_argument("--sigma", type=float, default=SIGMA, help="tolerance in combined standard errors")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replicate-example", help="reproduce the numbers of the recall example")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replicate_example)

    p = sub.add_parser("sweep", help="anticipation bias across a grid of coefficients")
    p.add_argument("--alphas", default="-3,-2,-1,0", help="comma-separated grid; write --alphas=-2,0 for negatives")
    p.add_argument("--n-units", type=int, default=100_000)
    p.add_argument("--oracle-draws", type=int, default=200_000)
    p.add_argument("--sigma", type=float, default=SIGMA)
    p.add_argument("--csv", help="write the table as CSV here")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ScmError, PanelValidationError, EstimationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
