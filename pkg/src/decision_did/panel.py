"""Balanced unit-by-period panels of treatment, outcome and (optionally) decision."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from collections.abc import Sequence
from typing import IO, Mapping, Union

import numpy as np
import pandas as pd

NEVER = "never"

Source = Union[str, os.PathLike, IO[str], IO[bytes]]


class PanelValidationError(ValueError):
    pass


@dataclass(frozen=True)
class PanelSchema:
    unit: str = "unit"
    time: str = "time"
    treatment: str = "a"
    outcome: str = "y"
    decision: str = "p"
    exogenous: tuple[str, ...] = ()

    @classmethod
    def coerce(cls, schema: "PanelSchema | Mapping[str, object] | None") -> "PanelSchema":
        if schema is None:
            return cls()
        if isinstance(schema, cls):
            return schema
        kw = dict(schema)
        if "exogenous" in kw:
            kw["exogenous"] = tuple(kw["exogenous"])
        return cls(**kw)


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class _IdView(Sequence):
    """Read-only ``ids[index]`` without materializing it."""

    __slots__ = ("_ids", "_index")

    def __init__(self, ids: Sequence[str], index: np.ndarray):
        if isinstance(ids, _IdView):
            ids, index = ids._ids, ids._index[index]
        self._ids, self._index = ids, index

    def __len__(self) -> int:
        return len(self._index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return tuple(self._ids[j] for j in self._index[i])
        return self._ids[self._index[i]]

    def __iter__(self):
        ids = self._ids
        return (ids[j] for j in self._index)

    def __eq__(self, other) -> bool:
        return isinstance(other, Sequence) and tuple(self) == tuple(other)

    def __repr__(self) -> str:
        return f"_IdView(n={len(self)})"


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Dense panel; row ``i`` of each matrix is unit ``i``, column ``k-1`` is period ``k``.

    ``decision`` is ``None`` when the decision variable is unobserved.  ``lag_s``
    is the decision-to-implementation lag when known.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    decision: np.ndarray | None = None
    lag_s: int | None = None
    unit_ids: tuple[str, ...] = ()
    exogenous: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float)
        a = np.asarray(self.treatment)
        if y.ndim != 2 or a.shape != y.shape:
            raise PanelValidationError("outcome and treatment must be matching (units x periods) matrices")
        if y.shape[1] < 1:
            raise PanelValidationError("panel needs at least one period")
        if not np.all(np.isfinite(y)):
            raise PanelValidationError("missing or non-finite outcome cell")
        if not np.isin(a, (0, 1)).all():
            raise PanelValidationError("non-binary treatment value")
        object.__setattr__(self, "outcome", _frozen(y, np.float64))
        object.__setattr__(self, "treatment", _frozen(a, np.int8))
        if self.decision is not None:
            p = np.asarray(self.decision)
            if p.shape != y.shape:
                raise PanelValidationError("decision matrix shape differs from outcome")
            if not np.isin(p, (0, 1)).all():
                raise PanelValidationError("non-binary decision value")
            object.__setattr__(self, "decision", _frozen(p, np.int8))
        if self.lag_s is not None and int(self.lag_s) < 0:
            raise PanelValidationError("lag_s must be nonnegative")
        ids = tuple(str(u) for u in self.unit_ids) or tuple(str(i) for i in range(y.shape[0]))
        if len(ids) != y.shape[0]:
            raise PanelValidationError("unit_ids length differs from number of units")
        object.__setattr__(self, "unit_ids", ids)
        exo = {}
        for name, values in dict(self.exogenous).items():
            values = np.asarray(values, dtype=float)
            if values.shape != (y.shape[0],):
                raise PanelValidationError(f"exogenous column {name!r} has wrong length")
            exo[name] = _frozen(values, np.float64)
        object.__setattr__(self, "exogenous", exo)

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[1]

    @property
    def has_decision(self) -> bool:
        return self.decision is not None

    def without_decision(self) -> "PanelDataset":
        return PanelDataset(self.outcome, self.treatment, None, self.lag_s, self.unit_ids, self.exogenous)

    def with_outcome(self, outcome: np.ndarray) -> "PanelDataset":
        return PanelDataset(outcome, self.treatment, self.decision, self.lag_s, self.unit_ids, self.exogenous)

    def take(self, index: np.ndarray) -> "PanelDataset":
        """Row subset / resample.  Skips re-validation; the source is already valid.

        Unit ids of the result are a lazy view, so resampling large panels does
        not pay for building a tuple of strings.
        """
        new = object.__new__(PanelDataset)
        idx = np.asarray(index, dtype=np.intp)
        object.__setattr__(new, "outcome", self.outcome[idx])
        object.__setattr__(new, "treatment", self.treatment[idx])
        object.__setattr__(new, "decision", None if self.decision is None else self.decision[idx])
        object.__setattr__(new, "lag_s", self.lag_s)
        object.__setattr__(new, "unit_ids", _IdView(self.unit_ids, idx))
        object.__setattr__(new, "exogenous", {k: v[idx] for k, v in self.exogenous.items()})
        return new

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if self.lag_s != other.lag_s or tuple(self.unit_ids) != tuple(other.unit_ids):
            return False
        if (self.decision is None) != (other.decision is None):
            return False
        if set(self.exogenous) != set(other.exogenous):
            return False
        same = np.array_equal(self.outcome, other.outcome) and np.array_equal(self.treatment, other.treatment)
        if self.decision is not None:
            same = same and np.array_equal(self.decision, other.decision)
        return same and all(np.array_equal(v, other.exogenous[k]) for k, v in self.exogenous.items())

    __hash__ = None


# -- CSV ------------------------------------------------------------------------


def _sort_ids(ids: np.ndarray) -> list[str]:
    ids = list(ids)
    try:
        return sorted(ids, key=lambda s: int(s))
    except ValueError:
        return sorted(ids)


def _floats(col: pd.Series, name: str) -> np.ndarray:
    # Python's float() is correctly rounded; pandas' fast parser is not, which breaks round trips.
    try:
        values = np.array([float(v) for v in col], dtype=float)
    except ValueError:
        bad = next(v for v in col if not _is_float(v))
        raise PanelValidationError(f"non-numeric {name} value {bad!r}") from None
    if not np.all(np.isfinite(values)):
        raise PanelValidationError(f"non-finite {name} value")
    return values


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def _binary(col: pd.Series, name: str) -> np.ndarray:
    values = pd.to_numeric(col, errors="coerce")
    if values.isna().any():
        raise PanelValidationError(f"non-binary {name} value {col[values.isna()].iloc[0]!r}")
    if not values.isin((0, 1)).all():
        raise PanelValidationError(f"non-binary {name} value {col[~values.isin((0, 1))].iloc[0]!r}")
    return values.to_numpy().astype(np.int8)


def load_panel(
    source: Source,
    schema: PanelSchema | Mapping[str, object] | None = None,
    lag_s: int | None = None,
) -> PanelDataset:
    """Read a long-format CSV (one row per unit-period) into a dense panel.

    Row order is irrelevant.  Units are indexed in sorted id order (numeric when
    every id is an integer) and the original ids are kept on ``unit_ids``.
    """
    schema = PanelSchema.coerce(schema)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    df = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    for col in (schema.unit, schema.time, schema.treatment, schema.outcome, *schema.exogenous):
        if col not in df.columns:
            raise PanelValidationError(f"missing required column {col!r}")

    for col in (schema.unit, schema.time, schema.treatment, schema.outcome, *schema.exogenous):
        blank = df[col].str.strip() == ""
        if blank.any():
            row = df[blank].iloc[0]
            raise PanelValidationError(
                f"missing cell in column {col!r} for unit {row[schema.unit]!r} time {row[schema.time]!r}"
            )

    times = pd.to_numeric(df[schema.time], errors="coerce")
    if times.isna().any() or (times != np.floor(times)).any():
        raise PanelValidationError("time column must hold integers")
    times = times.astype(np.int64).to_numpy()

    key = pd.DataFrame({"u": df[schema.unit].to_numpy(), "t": times})
    dup = key.duplicated()
    if dup.any():
        u, t = key[dup].iloc[0]
        raise PanelValidationError(f"duplicate (unit, time) row for unit {u!r} time {t}")

    ids = _sort_ids(pd.unique(df[schema.unit]))
    n = len(ids)
    if len(df) == 0:
        raise PanelValidationError("empty panel")
    tau = int(times.max())
    if times.min() < 1:
        raise PanelValidationError("time grid must be the contiguous integers 1..tau")
    counts = key.groupby("u", sort=False).size()
    if (counts != tau).any():
        bad = counts[counts != tau].index[0]
        raise PanelValidationError(f"ragged panel: unit {bad!r} has {counts[bad]} of {tau} periods")

    code = pd.Series(np.arange(n), index=ids)
    rows = code.loc[df[schema.unit].to_numpy()].to_numpy()
    cols = times - 1

    outcome = np.full((n, tau), np.nan)
    outcome[rows, cols] = _floats(df[schema.outcome], "outcome")

    treatment = np.zeros((n, tau), dtype=np.int8)
    treatment[rows, cols] = _binary(df[schema.treatment], "treatment")

    decision = None
    if schema.decision in df.columns:
        blank = (df[schema.decision].str.strip() == "").to_numpy()
        if blank.all():
            decision = None
        elif blank.any():
            raise PanelValidationError("partial decision observation: decision column has missing cells")
        else:
            decision = np.zeros((n, tau), dtype=np.int8)
            decision[rows, cols] = _binary(df[schema.decision], "decision")

    exogenous = {}
    for col in schema.exogenous:
        per_unit = np.full(n, np.nan)
        per_unit[rows] = _floats(df[col], f"exogenous {col!r}")
        exogenous[col] = per_unit

    return PanelDataset(outcome, treatment, decision, lag_s, tuple(ids), exogenous)


def panel_frame(panel: PanelDataset, schema: PanelSchema | Mapping[str, object] | None = None) -> pd.DataFrame:
    schema = PanelSchema.coerce(schema)
    n, tau = panel.n_units, panel.n_periods
    data = {
        schema.unit: np.repeat(np.asarray(panel.unit_ids, dtype=object), tau),
        schema.time: np.tile(np.arange(1, tau + 1), n),
        schema.treatment: panel.treatment.reshape(-1).astype(np.int64),
        schema.outcome: panel.outcome.reshape(-1),
    }
    if panel.decision is not None:
        data[schema.decision] = panel.decision.reshape(-1).astype(np.int64)
    for name, values in panel.exogenous.items():
        data[name] = np.repeat(values, tau)
    return pd.DataFrame(data)


def save_panel(panel: PanelDataset, dest: Source, schema: PanelSchema | Mapping[str, object] | None = None) -> None:
    """Write the canonical long-format CSV; floats use 17 significant digits so reloads are bit-exact."""
    panel_frame(panel, schema).to_csv(dest, index=False, float_format="%.17g", lineterminator="\n")


def dumps_panel(panel: PanelDataset, schema: PanelSchema | Mapping[str, object] | None = None) -> str:
    buf = io.StringIO()
    save_panel(panel, buf, schema)
    return buf.getvalue()


# -- groups and audits ------------------------------------------------------------


@dataclass(frozen=True)
class GroupAssignment:
    """First-decision time per unit; ``0`` in ``first_decision`` encodes "never"."""

    first_decision: np.ndarray
    s: int
    n_periods: int

    def label(self, i: int) -> int | str:
        g = int(self.first_decision[i])
        return NEVER if g == 0 else g

    @property
    def labels(self) -> list[int | str]:
        return [self.label(i) for i in range(len(self.first_decision))]

    def counts(self) -> dict[int | str, int]:
        out: dict[int | str, int] = {NEVER: int(np.sum(self.first_decision == 0))}
        for g in range(1, self.n_periods - self.s + 1):
            out[g] = int(np.sum(self.first_decision == g))
        return out

    def members(self, g: int | str) -> np.ndarray:
        code = 0 if g == NEVER else int(g)
        return np.flatnonzero(self.first_decision == code)


def first_treated(treatment: np.ndarray) -> np.ndarray:
    """1-based first period with treatment 1; 0 for never-treated rows."""
    treated = treatment.astype(bool)
    first = treated.argmax(axis=1) + 1
    return np.where(treated.any(axis=1), first, 0)


def monotone_violations(treatment: np.ndarray) -> np.ndarray:
    return np.flatnonzero((np.diff(treatment.astype(np.int8), axis=1) < 0).any(axis=1))


def infer_groups(panel: PanelDataset, s: int) -> GroupAssignment:
    """Assign each unit its first-decision time ``first treated period - s``."""
    s = int(s)
    if s < 0:
        raise PanelValidationError("lag s must be nonnegative")
    bad = monotone_violations(panel.treatment)
    if len(bad):
        raise PanelValidationError(
            f"non-monotone treatment path for unit {panel.unit_ids[bad[0]]!r}: treatment reverts 1 -> 0"
        )
    first = first_treated(panel.treatment)
    early = np.flatnonzero((first > 0) & (first <= s))
    if len(early):
        i = early[0]
        raise PanelValidationError(
            f"unit {panel.unit_ids[i]!r} first treated at period {first[i]} <= s={s}: "
            "implementation precedes every admissible decision time"
        )
    g = np.where(first > 0, first - s, 0)
    return GroupAssignment(g.astype(np.int64), s, panel.n_periods)


NOT_CHECKABLE = (
    "parallel_trends_a2",
    "no_anticipation_p",
    "parallel_trends_p",
    "exclusion_restriction",
    "consistency",
    "no_anticipation_staggered",
    "parallel_trends_staggered",
)


def determinism_violations(panel: PanelDataset, s: int) -> int:
    """Count (unit, period) cells breaking ``A_k = P_{k-s}`` (and ``A_k = 0`` for ``k <= s``)."""
    a, p = panel.treatment, panel.decision
    expected = np.zeros_like(a)
    if s < panel.n_periods:
        expected[:, s:] = p[:, : panel.n_periods - s]
    return int(np.sum(a != expected))


def audit_assumptions(
    panel: PanelDataset,
    s: int | None = None,
    queries: list[tuple[int, int, str]] | None = None,
) -> dict:
    """Observational checks only: positivity, decision determinism and group sizes.

    Counterfactual assumptions are listed under ``not_checkable`` because they
    cannot be tested from observed data.  ``queries`` holds ``(g, k, control)``
    triples whose cells are checked for positivity in the staggered case.
    """
    from .estimators import cells  # local: estimators imports this module

    s = panel.lag_s if s is None else s
    s = 1 if s is None else int(s)
    out: dict = {"n_units": panel.n_units, "n_periods": panel.n_periods, "lag_s": s}

    positivity: dict = {"violations": []}
    if panel.n_periods == 2:
        n1 = int(np.sum(panel.treatment[:, 1] == 1))
        positivity["arms"] = {"A2=1": n1, "A2=0": panel.n_units - n1}
        for arm, count in positivity["arms"].items():
            if count == 0:
                positivity["violations"].append(f"empty arm {arm}")
    for g, k, control in queries or []:
        try:
            treated, ctrl = cells(panel, g, k, s, control)
        except ValueError as exc:
            positivity["violations"].append(f"(g={g}, k={k}, {control}): {exc}")
            continue
        for label, mask in (("treated", treated), (control, ctrl)):
            if not mask.any():
                positivity["violations"].append(f"(g={g}, k={k}): empty {label} cell")
    positivity["ok"] = not positivity["violations"]
    out["positivity"] = positivity

    if panel.decision is None:
        out["determinism"] = {"status": "skipped: P unobserved"}
    else:
        v = determinism_violations(panel, s)
        out["determinism"] = {"status": "pass" if v == 0 else "fail", "violations": v}

    try:
        groups = infer_groups(panel, s)
        out["group_sizes"] = {str(k): v for k, v in groups.counts().items()}
    except PanelValidationError as exc:
        out["group_sizes"] = {"error": str(exc)}

    out["not_checkable"] = {name: "not checkable from data" for name in NOT_CHECKABLE}
    return out
