"""Acceptance criteria 1-8, one test each.

Every test prints a single ``ACCEPTANCE <n>: PASS|FAIL ...`` line (shown even
under output capture) and then asserts.
"""

import json
import math
import time

import numpy as np
import pytest
from reference import callaway_santanna, random_staggered

from decision_did import _rng
from decision_did.builtins import (
    builtin_anticipation_dgp,
    builtin_cars_example,
    builtin_no_anticipation_dgp,
    builtin_staggered_dgp,
)
from decision_did.cli import main, replicate_example
from decision_did.estimators import (
    NEVER_TREATED,
    NOT_YET,
    PositivityError,
    cells,
    did_classic,
    group_time_att,
)
from decision_did.oracle import bias_sweep, verify_proposition
from decision_did.panel import PanelDataset
from decision_did.scm import sample_observational

SIGMA = 4.0


@pytest.fixture
def report(pytestconfig):
    capture = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
        with capture.global_and_fixture_disabled():
            print("\n" + line)
        assert ok, line

    return emit


def test_criterion_1_example_replication(report):
    start = time.perf_counter()
    doc = replicate_example(n=1_000_000, seed=1)
    elapsed = time.perf_counter() - start
    rows = {r["quantity"]: r for r in doc["rows"]}
    checks = {
        "ATT_A2": (rows["ATT_A2"]["value"], 0.0),
        "ATT_P": (rows["ATT_P"]["value"], -4.0),
        "trend A2=1": (rows["E[Y2 - Y1 | A2=1]"]["value"], -2.0),
        "trend A2=0": (rows["E[Y2 - Y1 | A2=0]"]["value"], -2.0),
        "trend A2=1 untreated": (rows["E[Y2^(a2=0) - Y1 | A2=1]"]["value"], -2.0),
    }
    ok = all(abs(v - ref) <= 0.03 for v, ref in checks.values()) and elapsed < 30
    detail = ", ".join(f"{k}={v:.4f}" for k, (v, _) in checks.items())
    report(1, ok, f"[{detail}; {elapsed:.1f}s at 10^6 draws]")


def test_criterion_2_classic_did_on_cars(report):
    scm = builtin_cars_example()
    big = did_classic(sample_observational(scm, 1_000_000, 1)).estimate
    reps = [did_classic(sample_observational(scm, 10_000, _rng.derive_seed(2, r))).estimate for r in range(200)]
    mean, se = float(np.mean(reps)), float(np.std(reps, ddof=1) / math.sqrt(len(reps)))
    ok = abs(big) <= 0.04 and abs(mean) <= SIGMA * se
    report(2, ok, f"[n=10^6 estimate {big:.4f} (|.|<=0.04); 200 x 10^4 mean {mean:.4f}, 4se={SIGMA * se:.4f}]")


def test_criterion_3_proposition_2(report):
    rep = verify_proposition(2, builtin_no_anticipation_dgp(), n_units=10_000, replications=200, seed=3)
    (cmp,) = rep.comparisons
    audits = {a["name"]: a["holds"] for a in rep.audits}
    premises = ("decision_determinism", "no_anticipation_p", "parallel_trends_p", "consistency_p")
    truth = rep.oracle["ATT_P"]["value"]
    ok = rep.status == "pass" and abs(truth + 3) <= 1e-9 + SIGMA * rep.oracle["ATT_P"]["mc_se"] \
        and all(audits[a] for a in premises)
    report(3, ok, f"[did mean {cmp['estimator_mean']:.4f} vs ATT_P {truth:.4f}, |diff| {abs(cmp['diff']):.4f} "
                  f"<= {cmp['tolerance']:.4f}; premises {'hold' if all(audits[a] for a in premises) else 'FAIL'}]")


def test_criterion_4_proposition_1_and_sweep(report):
    rep = verify_proposition(1, builtin_anticipation_dgp(-2.0), n_units=10_000, replications=200, seed=4)
    (cmp,) = rep.comparisons
    sweep = bias_sweep(alphas=(-3.0, -2.0, -1.0, 0.0), n_units=200_000, seed=4, oracle_draws=200_000)
    worst = max(abs(r.residual) / r.residual_se for r in sweep.rows)
    ok = rep.status == "pass" and abs(cmp["target"] + 1) <= 0.01 and sweep.passed and worst <= SIGMA
    report(4, ok, f"[did mean {cmp['estimator_mean']:.4f} vs ATT_A2 - PSI {cmp['target']:.4f}; "
                  f"sweep max |residual|/se {worst:.2f} <= 4]")


def test_criterion_5_proposition_3(report):
    rep = verify_proposition(3, builtin_staggered_dgp(4, 1), n_units=10_000, replications=200, seed=5)
    identities = [c for c in rep.comparisons if c["kind"] == "identity"]
    pre = [c for c in rep.comparisons if c["kind"] == "pre_implementation"]
    controls = {c["label"].split(")")[0].split(",")[-1] for c in identities}
    agree = [c for c in rep.comparisons if c["kind"] == "control_agreement"]
    bad = [c["label"] for c in rep.comparisons if not c["ok"]]
    ok = rep.status == "pass" and not bad and len(identities) == 12 and len(pre) == 6 \
        and controls == {"never_treated", "not_yet_treated"} and len(agree) == 6
    report(5, ok, f"[{len(identities)} (g,k,control) identities, {len(agree)} control agreements, "
                  f"{len(pre)} pre-implementation zeros, "
                  f"controls {sorted(controls)}; failures {bad}]")


def test_criterion_6_s0_reduction(report):
    mismatches, compared = 0, 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        tau = int(rng.integers(3, 7))
        y, a, _ = random_staggered(rng, int(rng.integers(30, 120)), tau, 0)
        panel = PanelDataset(y, a, None, 0)
        for g in range(2, tau + 1):
            for k in range(g, tau + 1):
                for ours, theirs in ((NEVER_TREATED, "never"), (NOT_YET, "notyet")):
                    try:
                        ref = callaway_santanna(y, a, g, k, theirs)
                    except ValueError:
                        try:
                            group_time_att(panel, g, k, 0, ours)
                            mismatches += 1
                        except PositivityError:
                            pass
                        continue
                    compared += 1
                    mismatches += group_time_att(panel, g, k, 0, ours).estimate != ref
    report(6, mismatches == 0 and compared > 500,
           f"[{compared} (g,k,control) values on 50 panels, {mismatches} not bit-identical]")


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def test_criterion_7_exact_algebra(report):
    worst_did, worst_gt, cell_mismatch, n_cells = 0.0, 0.0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(20, 80))
        # two-period panel
        y = rng.normal(size=(n, 2)) * 3
        a2 = np.r_[1, 0, rng.integers(0, 2, size=n - 2)]
        panel = PanelDataset(y, np.column_stack([np.zeros(n, int), a2]))
        c, d = rng.uniform(-5, 5, size=(n, 1)), rng.uniform(-5, 5, size=2)
        base = did_classic(panel).estimate
        for shifted in (y + c, y + d, y + c + d):
            worst_did = max(worst_did, _rel(base, did_classic(panel.with_outcome(shifted)).estimate))
        # staggered panel with decision observed
        s = int(rng.integers(0, 3))
        tau = int(rng.integers(s + 2, 7))
        ys, a, p = random_staggered(rng, n, tau, s)
        sp = PanelDataset(ys, a, p, s)
        c, d = rng.uniform(-5, 5, size=(n, 1)), rng.uniform(-5, 5, size=tau)
        for g in range(max(1, 2 - s), tau - s + 1):
            for k in range(g + s, tau + 1):
                for control in (NOT_YET, NEVER_TREATED):
                    t1, c1 = cells(sp, g, k, s, control, "treatment")
                    t2, c2 = cells(sp, g, k, s, control, "decision")
                    n_cells += 1
                    cell_mismatch += not (np.array_equal(t1, t2) and np.array_equal(c1, c2))
                    try:
                        est = group_time_att(sp, g, k, s, control).estimate
                    except PositivityError:
                        continue
                    for shifted in (ys + c, ys + d, ys + c + d):
                        other = group_time_att(sp.with_outcome(shifted), g, k, s, control).estimate
                        worst_gt = max(worst_gt, _rel(est, other))
    ok = worst_did <= 1e-12 and worst_gt <= 1e-12 and cell_mismatch == 0
    report(7, ok, f"[max rel. error did {worst_did:.1e}, group-time {worst_gt:.1e}; "
                  f"cell sets differ in {cell_mismatch} of {n_cells}]")


def _run_all_subcommands(tmp, threads, monkeypatch, capsys):
    monkeypatch.setenv(_rng.THREADS_ENV, str(threads))
    tmp.mkdir()
    outputs = {}
    panel = tmp / "panel.csv"
    stag = tmp / "stag.csv"
    commands = {
        "simulate": ["simulate", "--scm", "cars", "--n", "150000", "--seed", "8", "--out", str(panel)],
        "simulate-staggered": ["simulate", "--scm", "builtin:staggered", "--n", "140000", "--seed", "8",
                               "--out", str(stag)],
        "estimate": ["estimate", "--panel", str(panel), "--bootstrap", "120", "--seed", "8",
                     "--out", str(tmp / "est.json")],
        "estimate-gt": ["estimate", "--panel", str(stag), "--g", "2", "--k", "4", "--s", "1",
                        "--control", "never", "--bootstrap", "100", "--seed", "8", "--out", str(tmp / "gt.json")],
        "oracle": ["oracle", "--scm", "cars", "--kind", "ATT_P", "--draws", "200000", "--method", "sample",
                   "--seed", "8", "--out", str(tmp / "oracle.json")],
        "verify": ["verify", "--prop", "3", "--scm", "builtin:staggered", "--n-units", "3000",
                   "--replications", "20", "--oracle-draws", "140000", "--seed", "8", "--out", str(tmp / "v.json")],
        "replicate-example": ["replicate-example", "--n", "200000", "--seed", "8", "--out", str(tmp / "ex.json")],
        "sweep": ["sweep", "--alphas=-1,0", "--n-units", "140000", "--oracle-draws", "70000", "--seed", "8",
                  "--out", str(tmp / "sweep.json"), "--csv", str(tmp / "sweep.csv")],
    }
    for name, argv in commands.items():
        code = main(argv)
        outputs[f"{name}:stdout"] = capsys.readouterr().out
        outputs[f"{name}:exit"] = code
    for f in sorted(tmp.iterdir()):
        outputs[f.name] = f.read_bytes()
    return outputs


def test_criterion_8_determinism(report, tmp_path, monkeypatch, capsys):
    serial = _run_all_subcommands(tmp_path / "serial", 1, monkeypatch, capsys)
    parallel = _run_all_subcommands(tmp_path / "parallel", 4, monkeypatch, capsys)
    repeat = _run_all_subcommands(tmp_path / "repeat", 1, monkeypatch, capsys)

    def normalize(outputs, tag):
        return {k: (v.replace(tag.encode(), b"") if isinstance(v, bytes) else
                    v.replace(tag, "") if isinstance(v, str) else v) for k, v in outputs.items()}

    a = normalize(serial, str(tmp_path / "serial"))
    b = normalize(parallel, str(tmp_path / "parallel"))
    c = normalize(repeat, str(tmp_path / "repeat"))
    differing = sorted(k for k in a if a[k] != b.get(k) or a[k] != c.get(k))
    files = [k for k in a if ":" not in k]
    exits = {k: v for k, v in a.items() if k.endswith(":exit")}
    ok = not differing and len(files) >= 10 and all(v == 0 for v in exits.values())
    seeds_recorded = json.loads(a["est.json"])["seed"] == 8
    report(8, ok and seeds_recorded, f"[{len(files)} files and 8 stdout streams identical across repeat and "
                                     f"4-thread runs; differing: {differing}]")
