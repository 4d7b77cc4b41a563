"""Difference-in-differences functionals on observed panels."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _rng
from .panel import PanelDataset

NOT_YET = "not_yet_treated"
NEVER_TREATED = "never_treated"

_CONTROL_ALIASES = {
    "not_yet_treated": NOT_YET,
    "not_yet": NOT_YET,
    "notyet": NOT_YET,
    "ny": NOT_YET,
    "never_treated": NEVER_TREATED,
    "never": NEVER_TREATED,
    "nev": NEVER_TREATED,
}

# Assumption sets the caller may assert for the two-period functional.
ASSUMPTION_SETS = {
    "ATT_A2": ("positivity", "consistency", "parallel_trends_a2"),
    "ATT_P": ("positivity", "decision_determinism", "no_anticipation_p", "parallel_trends_p", "consistency_p"),
}

CLASSIC_FUNCTIONAL = "{E[Y2|A2=1] - E[Y1|A2=1]} - {E[Y2|A2=0] - E[Y1|A2=0]}"


class EstimationError(ValueError):
    pass


class PositivityError(EstimationError):
    """A conditional mean the functional needs has no units behind it."""


@dataclass
class BootstrapCI:
    lo: float
    hi: float
    level: float
    replicates: int
    seed: int
    redraws: int = 0


@dataclass
class EstimateReport:
    estimand: str
    estimate: float
    functional: str
    control_group: str
    cell_sizes: dict[str, int]
    assumption_set: tuple[str, ...] = ()
    g: int | None = None
    k: int | None = None
    s: int | None = None
    bootstrap_ci: BootstrapCI | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["assumption_set"] = list(self.assumption_set)
        return d

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def _mean(y: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(y[mask]))


def _singletons(cells: dict[str, int]) -> list[str]:
    return [name for name, size in cells.items() if size == 1]


def did_classic(panel: PanelDataset, estimand: str = "ATT_A2") -> EstimateReport:
    """Two-period DiD of arm-specific means.

    The number is the same whichever estimand is requested; ``estimand="ATT_P"``
    only records that the caller asserts the decision-based assumption set.
    Nothing in the data can tell the two readings apart.
    """
    if estimand not in ASSUMPTION_SETS:
        raise EstimationError(f"estimand must be one of {sorted(ASSUMPTION_SETS)}")
    if panel.n_periods != 2:
        raise EstimationError(f"classic DiD needs exactly 2 periods, panel has {panel.n_periods}")
    a = panel.treatment
    if np.any(a[:, 0] != 0):
        raise EstimationError("classic DiD needs A1 = 0 for every unit")
    treated = a[:, 1] == 1
    control = ~treated
    cells = {"A2=1": int(treated.sum()), "A2=0": int(control.sum())}
    for name, size in cells.items():
        if size == 0:
            raise PositivityError(f"positivity violation: arm {name} is empty")
    y1, y2 = panel.outcome[:, 0], panel.outcome[:, 1]
    est = (_mean(y2, treated) - _mean(y1, treated)) - (_mean(y2, control) - _mean(y1, control))
    diagnostics = {}
    if _singletons(cells):
        diagnostics["singleton_cells"] = _singletons(cells)
    return EstimateReport(
        estimand=estimand,
        estimate=est,
        functional=CLASSIC_FUNCTIONAL,
        control_group="n/a",
        cell_sizes=cells,
        assumption_set=ASSUMPTION_SETS[estimand],
        diagnostics=diagnostics,
    )


def did_classic_se(panel: PanelDataset) -> float:
    """Large-sample standard error of :func:`did_classic` from per-unit trend variances."""
    treated = panel.treatment[:, 1] == 1
    trend = panel.outcome[:, 1] - panel.outcome[:, 0]
    var = 0.0
    for mask in (treated, ~treated):
        m = int(mask.sum())
        if m < 2:
            return float("nan")
        var += float(np.var(trend[mask], ddof=1)) / m
    return float(np.sqrt(var))


def normalize_control(control: str) -> str:
    try:
        return _CONTROL_ALIASES[control.lower()]
    except KeyError:
        raise EstimationError(f"control must be {NOT_YET!r} or {NEVER_TREATED!r}, got {control!r}") from None


def _check_indices(tau: int, g: int, k: int, s: int) -> None:
    if s < 0:
        raise EstimationError("lag s must be nonnegative")
    if not 1 <= g <= tau - s:
        raise EstimationError(f"decision time g={g} must satisfy 1 <= g <= tau - s = {tau - s}")
    if not g + s <= k <= tau:
        raise EstimationError(f"outcome time k={k} must satisfy g + s = {g + s} <= k <= tau = {tau}")
    if g + s - 1 < 1:
        raise EstimationError("no pre-implementation period: g + s - 1 must be >= 1")


def cells(
    panel: PanelDataset,
    g: int,
    k: int,
    s: int,
    control: str,
    basis: str = "treatment",
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of the treated cell and the control cell.

    ``basis="treatment"``: treated is ``A_{g+s} = 1`` with no earlier treatment;
    not-yet-treated controls have no treatment through ``min(k + s, tau)`` and
    never-treated controls none through ``tau``.  The treatment record stops at
    ``tau``, so ``k + s`` is truncated there; with determinism and frozen late
    decisions the truncated cell equals the untruncated one.

    ``basis="decision"`` builds the same cells from the decision record:
    ``P_g = 1, P_{g-1} = 0``; ``P_k = 0``; ``P_{tau-s} = 0``.
    """
    tau = panel.n_periods
    g, k, s = int(g), int(k), int(s)
    control = normalize_control(control)
    _check_indices(tau, g, k, s)
    if basis == "treatment":
        a = panel.treatment
        treated = (a[:, g + s - 1] == 1) & ~a[:, : g + s - 1].any(axis=1)
        horizon = min(k + s, tau) if control == NOT_YET else tau
        ctrl = ~a[:, :horizon].any(axis=1)
    elif basis == "decision":
        if panel.decision is None:
            raise EstimationError("decision basis requested but P is unobserved")
        p = panel.decision
        treated = (p[:, g - 1] == 1) & ~p[:, : g - 1].any(axis=1)
        horizon = k if control == NOT_YET else tau - s
        ctrl = ~p[:, :horizon].any(axis=1)
    else:
        raise EstimationError(f"unknown basis {basis!r}")
    return treated, ctrl


def group_time_att(
    panel: PanelDataset,
    g: int,
    k: int,
    s: int,
    control: str = NOT_YET,
) -> EstimateReport:
    """Group-time effect of first deciding at ``g``, measured at ``k``.

    ``{E[Y_k | T] - E[Y_b | T]} - {E[Y_k | C] - E[Y_b | C]}`` with base period
    ``b = g + s - 1``, treated cell ``T`` and control cell ``C`` from :func:`cells`.
    When the decision is observed, the decision-based cells must pick exactly the
    same units; a mismatch means the records contradict lagged determinism.
    """
    control = normalize_control(control)
    treated, ctrl = cells(panel, g, k, s, control)
    diagnostics: dict = {"cell_basis": "treatment"}
    if panel.decision is not None:
        t2, c2 = cells(panel, g, k, s, control, basis="decision")
        if not (np.array_equal(treated, t2) and np.array_equal(ctrl, c2)):
            raise EstimationError(
                "treatment and decision records select different units; A_k = P_(k-s) does not hold"
            )
        diagnostics["cell_basis"] = "treatment (decision cross-checked)"
    sizes = {"treated": int(treated.sum()), "control": int(ctrl.sum())}
    for name, size in sizes.items():
        if size == 0:
            raise PositivityError(f"positivity violation: {name} cell for (g={g}, k={k}) is empty")
    base = g + s - 1
    yk, yb = panel.outcome[:, k - 1], panel.outcome[:, base - 1]
    est = (_mean(yk, treated) - _mean(yb, treated)) - (_mean(yk, ctrl) - _mean(yb, ctrl))
    if _singletons(sizes):
        diagnostics["singleton_cells"] = _singletons(sizes)
    ctrl_event = f"A_1..A_{min(k + s, panel.n_periods)} = 0" if control == NOT_YET else f"A_1..A_{panel.n_periods} = 0"
    functional = (
        f"{{E[Y{k}|T] - E[Y{base}|T]}} - {{E[Y{k}|C] - E[Y{base}|C]}}, "
        f"T: A_{g + s} = 1 and A_1..A_{base} = 0; C: {ctrl_event}"
    )
    return EstimateReport(
        estimand=f"ATT_P_GT({g},{k})",
        estimate=est,
        functional=functional,
        control_group=control,
        cell_sizes=sizes,
        assumption_set=("decision_determinism_lagged", "decision_structure", "consistency_p",
                        "no_anticipation_staggered", "parallel_trends_staggered"),
        g=g,
        k=k,
        s=s,
        diagnostics=diagnostics,
    )


Estimator = Callable[[PanelDataset], "EstimateReport | float"]


def _value(result) -> float:
    return float(result.estimate if isinstance(result, EstimateReport) else result)


def bootstrap_ci(
    panel: PanelDataset,
    estimator: Estimator,
    level: float = 0.95,
    replicates: int = 999,
    seed: int = 0,
    max_attempts: int = 100,
) -> BootstrapCI:
    """Percentile interval from resampling whole units with replacement.

    Resample ``r`` on attempt ``t`` uses the stream ``(seed, r, t)``; a resample
    that empties a required cell is redrawn.  Fails when more than half of all
    drawn resamples were degenerate.
    """
    if replicates < 100:
        raise EstimationError("bootstrap needs at least 100 replicates")
    if not 0 < level < 1:
        raise EstimationError("level must lie in (0, 1)")
    full = estimator(panel)
    if isinstance(full, EstimateReport) and _singletons(full.cell_sizes):
        raise EstimationError(f"bootstrap refuses single-unit cells: {_singletons(full.cell_sizes)}")
    n = panel.n_units

    def one(r: int) -> tuple[float, int]:
        for t in range(max_attempts):
            idx = _rng.generator(seed, r, t).integers(0, n, size=n)
            try:
                return _value(estimator(panel.take(idx))), t
            except PositivityError:
                continue
        return float("nan"), max_attempts

    results = _rng.map_ordered(one, range(replicates))
    redraws = sum(t for _, t in results)
    values = np.array([v for v, _ in results])
    if redraws > replicates or np.isnan(values).any():
        raise EstimationError(
            f"more than 50% of bootstrap resamples were degenerate ({redraws} redraws for {replicates} replicates)"
        )
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return BootstrapCI(float(lo), float(hi), level, replicates, int(seed), int(redraws))
