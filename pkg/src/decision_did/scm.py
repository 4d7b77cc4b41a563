"""Recursive structural causal models with affine-plus-max mechanisms.

A model is an ordered list of nodes.  Each node's parents must appear earlier in
the list, which is how temporal order is enforced: sampling walks the list once
and can never read a node that has not been assigned yet.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from . import _rng
from .panel import PanelDataset

KINDS = ("exogenous", "stochastic", "deterministic")
DISTS = ("bernoulli", "poisson", "normal", "deterministic")
ROLES = ("treatment", "outcome", "decision")


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class MaxTerm:
    parents: tuple[str, ...]
    coef: float = 1.0


@dataclass(frozen=True)
class Affine:
    """``intercept + sum(coef * parent) + sum(coef * max(parents...))``."""

    intercept: float = 0.0
    terms: tuple[tuple[str, float], ...] = ()
    max_terms: tuple[MaxTerm, ...] = ()

    @property
    def parents(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for name, _ in self.terms:
            seen[name] = None
        for mt in self.max_terms:
            for name in mt.parents:
                seen[name] = None
        return tuple(seen)

    def evaluate(self, values: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.full(n, float(self.intercept))
        for name, coef in self.terms:
            out += coef * values[name]
        for mt in self.max_terms:
            out += mt.coef * np.maximum.reduce([np.asarray(values[p], dtype=float) for p in mt.parents])
        return out

    def interval(self, bounds: Mapping[str, tuple[float, float]]) -> tuple[float, float]:
        lo = hi = float(self.intercept)
        for name, coef in self.terms:
            a, b = bounds[name]
            lo += min(coef * a, coef * b)
            hi += max(coef * a, coef * b)
        for mt in self.max_terms:
            a = max(bounds[p][0] for p in mt.parents)
            b = max(bounds[p][1] for p in mt.parents)
            lo += min(mt.coef * a, mt.coef * b)
            hi += max(mt.coef * a, mt.coef * b)
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "terms": [{"parent": p, "coef": c} for p, c in self.terms],
            "max_terms": [{"parents": list(mt.parents), "coef": mt.coef} for mt in self.max_terms],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Affine":
        max_terms = []
        for mt in d.get("max_terms", []):
            if isinstance(mt, Mapping):
                max_terms.append(MaxTerm(tuple(mt["parents"]), float(mt.get("coef", 1.0))))
            else:
                max_terms.append(MaxTerm(tuple(mt), 1.0))
        terms = tuple((t["parent"], float(t["coef"])) for t in d.get("terms", []))
        return cls(float(d.get("intercept", 0.0)), terms, tuple(max_terms))


def affine(intercept: float = 0.0, terms: Mapping[str, float] | None = None, maxes=()) -> Affine:
    """Shorthand: ``affine(10, {"U": 5, "P": -5}, [(("P", "A2"), -5)])``."""
    return Affine(
        float(intercept),
        tuple((k, float(v)) for k, v in (terms or {}).items()),
        tuple(MaxTerm(tuple(ps), float(c)) for ps, c in maxes),
    )


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    dist: str
    mean: Affine = field(default_factory=Affine)
    sd: float | None = None
    time: int | None = None
    role: str | None = None

    @property
    def parents(self) -> tuple[str, ...]:
        return self.mean.parents

    @property
    def binary(self) -> bool:
        return self.dist == "bernoulli" or self.role in ("treatment", "decision")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "dist": self.dist, "mean": self.mean.to_dict()}
        if self.sd is not None:
            d["sd"] = self.sd
        if self.time is not None:
            d["time"] = self.time
        if self.role is not None:
            d["role"] = self.role
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Node":
        try:
            return cls(
                name=str(d["name"]),
                kind=str(d["kind"]),
                dist=str(d.get("dist", "deterministic" if d["kind"] == "deterministic" else "")),
                mean=Affine.from_dict(d.get("mean", {})),
                sd=None if d.get("sd") is None else float(d["sd"]),
                time=None if d.get("time") is None else int(d["time"]),
                role=d.get("role"),
            )
        except KeyError as exc:
            raise ScmError(f"node definition missing field {exc}") from None


def exogenous(name: str, dist: str, mean: float, sd: float | None = None) -> Node:
    return Node(name, "exogenous", dist, Affine(float(mean)), sd)


def stochastic(name: str, dist: str, mean: Affine, sd: float | None = None, time=None, role=None) -> Node:
    return Node(name, "stochastic", dist, mean, sd, time, role)


def deterministic(name: str, expr: Affine, time=None, role=None) -> Node:
    return Node(name, "deterministic", "deterministic", expr, None, time, role)


@dataclass(frozen=True)
class Scm:
    nodes: tuple[Node, ...]
    name: str = "scm"
    lag: int | None = None

    @cached_property
    def index(self) -> dict[str, int]:
        return {node.name: i for i, node in enumerate(self.nodes)}

    def __getitem__(self, name: str) -> Node:
        return self.nodes[self.index[name]]

    def __contains__(self, name: str) -> bool:
        return name in self.index

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def role_nodes(self, role: str) -> dict[int, str]:
        """``{time: node name}`` for nodes carrying ``role``."""
        return {n.time: n.name for n in self.nodes if n.role == role}

    @property
    def horizon(self) -> int:
        times = [n.time for n in self.nodes if n.role in ("treatment", "outcome") and n.time is not None]
        return max(times) if times else 0

    def descendants(self, roots: Iterable[str]) -> set[str]:
        """Strict descendants of ``roots`` (roots themselves excluded unless reached)."""
        roots = set(roots)
        out: set[str] = set()
        for node in self.nodes:
            if any(p in roots or p in out for p in node.parents):
                out.add(node.name)
        return out

    def validate(self) -> None:
        validate(self)

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "nodes": [n.to_dict() for n in self.nodes]}
        if self.lag is not None:
            d["lag"] = self.lag
        return d

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scm":
        if "nodes" not in d:
            raise ScmError("SCM document needs a 'nodes' list")
        lag = d.get("lag")
        return cls(tuple(Node.from_dict(x) for x in d["nodes"]), str(d.get("name", "scm")),
                   None if lag is None else int(lag))

    @classmethod
    def from_json(cls, text: str) -> "Scm":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ScmError(f"invalid SCM JSON: {exc}") from None

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def node_bounds(scm: Scm) -> dict[str, tuple[float, float]]:
    """Interval of reachable values per node (mean level for Poisson/Normal)."""
    bounds: dict[str, tuple[float, float]] = {}
    for node in scm.nodes:
        lo, hi = node.mean.interval(bounds)
        bounds[node.name] = (0.0, 1.0) if node.dist == "bernoulli" else (lo, hi)
    return bounds


def _integral(expr: Affine) -> bool:
    coefs = [expr.intercept, *(c for _, c in expr.terms), *(mt.coef for mt in expr.max_terms)]
    return all(float(c).is_integer() for c in coefs)


def validate(scm: Scm) -> None:
    """Check ordering, parent references, supports and mean ranges.

    Parent values of Poisson/Normal nodes propagate through their mean range,
    Bernoulli nodes through ``[0, 1]``; a Poisson mean whose lower bound is
    negative, or a Bernoulli mean leaving ``[0, 1]``, is rejected.  Treatment and
    decision nodes must be provably binary.
    """
    seen: set[str] = set()
    names = set(scm.names)
    if len(names) != len(scm.nodes):
        raise ScmError("duplicate node name")
    if scm.lag is not None and scm.lag < 0:
        raise ScmError("lag must be nonnegative")
    bounds: dict[str, tuple[float, float]] = {}
    binary: set[str] = set()
    for node in scm.nodes:
        if node.kind not in KINDS:
            raise ScmError(f"node {node.name!r}: unknown kind {node.kind!r}")
        if node.dist not in DISTS:
            raise ScmError(f"node {node.name!r}: unknown distribution {node.dist!r}")
        if (node.kind == "deterministic") != (node.dist == "deterministic"):
            raise ScmError(f"node {node.name!r}: deterministic kind and mechanism must go together")
        if node.role is not None and node.role not in ROLES:
            raise ScmError(f"node {node.name!r}: unknown role {node.role!r}")
        if node.role is not None and (node.time is None or node.time < 1):
            raise ScmError(f"node {node.name!r}: role {node.role!r} needs a time index >= 1")
        for parent in node.parents:
            if parent not in seen:
                if parent in names:
                    raise ScmError(f"forward reference: {node.name!r} lists {parent!r}, which comes later")
                raise ScmError(f"node {node.name!r}: unknown parent {parent!r}")
        if node.kind == "exogenous" and node.parents:
            raise ScmError(f"exogenous node {node.name!r} cannot have parents")
        for mt in node.mean.max_terms:
            if not mt.parents:
                raise ScmError(f"node {node.name!r}: empty max term")
        lo, hi = node.mean.interval(bounds)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ScmError(f"node {node.name!r}: non-finite mean")
        if node.dist == "poisson" and lo < 0:
            raise ScmError(f"negative reachable mean for Poisson node {node.name!r} (lower bound {lo:g})")
        if node.dist == "bernoulli" and (lo < 0 or hi > 1):
            raise ScmError(f"Bernoulli node {node.name!r}: mean range [{lo:g}, {hi:g}] leaves [0, 1]")
        if node.dist == "normal" and not (node.sd is not None and node.sd > 0 and math.isfinite(node.sd)):
            raise ScmError(f"Normal node {node.name!r} needs a positive sd")
        is_binary = node.dist == "bernoulli" or (
            node.kind == "deterministic"
            and lo >= 0
            and hi <= 1
            and all(p in binary for p in node.parents)
            and _integral(node.mean)
        )
        if is_binary:
            binary.add(node.name)
        if node.role in ("treatment", "decision") and not is_binary:
            raise ScmError(
                f"{node.role} node {node.name!r} must be binary: Bernoulli, or deterministic with integer "
                "coefficients on binary parents and range inside [0, 1]"
            )
        bounds[node.name] = (0.0, 1.0) if node.dist == "bernoulli" else (lo, hi)
        seen.add(node.name)


# -- interventions ----------------------------------------------------------------


def check_intervention(scm: Scm, do: Mapping[str, float]) -> dict[str, float]:
    out = {}
    for name, value in do.items():
        if name not in scm:
            raise ScmError(f"intervention on unknown node {name!r}")
        node = scm[name]
        value = float(value)
        if not math.isfinite(value):
            raise ScmError(f"intervention value for {name!r} must be finite")
        if node.binary and value not in (0.0, 1.0):
            raise ScmError(f"intervention value {value:g} outside the binary support of {name!r}")
        if node.dist == "poisson" and (value < 0 or value != math.floor(value)):
            raise ScmError(f"intervention value {value:g} outside the support of Poisson node {name!r}")
        out[name] = value
    return out


def world_tag(do: Mapping[str, float]) -> int:
    """Stable nonzero stream tag for an intervention arm."""
    if not do:
        return 0
    text = json.dumps(sorted((k, float(v)) for k, v in do.items()))
    return 1 + int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big") % (2**31 - 1)


def _draw(node: Node, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = len(mean)
    if node.dist == "bernoulli":
        return (rng.random(m) < mean).astype(float)
    if node.dist == "poisson":
        # Realised rates below zero only arise in far tails; they are clipped.
        return rng.poisson(np.maximum(mean, 0.0)).astype(float)
    return rng.normal(mean, node.sd, size=m)


def simulate(
    scm: Scm,
    n: int,
    seed: int,
    do: Mapping[str, float] | None = None,
    world: int | None = None,
    validated: bool = False,
) -> dict[str, np.ndarray]:
    """Draw every node for ``n`` units.

    Non-descendants of intervened nodes use the natural (tag 0) streams, so they
    are bit-identical to an observational draw with the same seed.  Descendants
    draw fresh noise from the ``world`` stream (default: a hash of ``do``).
    """
    if not validated:
        validate(scm)
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    seed = _rng.check_seed(seed)
    do = check_intervention(scm, do or {})
    world = world_tag(do) if world is None else int(world)
    downstream = scm.descendants(do)
    tags = [world if node.name in downstream else 0 for node in scm.nodes]

    def run_block(spec):
        b, start, stop = spec
        m = stop - start
        vals: dict[str, np.ndarray] = {}
        for i, node in enumerate(scm.nodes):
            if node.name in do:
                vals[node.name] = np.full(m, do[node.name])
                continue
            mean = node.mean.evaluate(vals, m)
            if node.kind == "deterministic":
                vals[node.name] = mean
            else:
                vals[node.name] = _draw(node, mean, _rng.generator(seed, tags[i], i, b))
        return vals

    parts = _rng.map_ordered(run_block, list(_rng.blocks(n)))
    if not parts:
        return {name: np.empty(0) for name in scm.names}
    return {name: np.concatenate([p[name] for p in parts]) for name in scm.names}


def random_descendants(scm: Scm, do: Mapping[str, float]) -> set[str]:
    """Descendants of ``do`` whose value is still random given the natural non-descendants."""
    downstream = scm.descendants(do)
    out: set[str] = set()
    for node in scm.nodes:
        if node.name in downstream and node.name not in do:
            if node.kind != "deterministic" or any(p in out for p in node.parents):
                out.add(node.name)
    return out


def mean_propagation_exact(scm: Scm, do: Mapping[str, float]) -> bool:
    """True when no max term downstream of ``do`` takes a still-random argument."""
    downstream = scm.descendants(do) - set(do)
    rand = random_descendants(scm, do)
    return not any(
        p in rand
        for node in scm.nodes
        if node.name in downstream
        for mt in node.mean.max_terms
        for p in mt.parents
    )


def conditional_means(
    scm: Scm,
    n: int,
    seed: int,
    do: Mapping[str, float],
    natural: Mapping[str, np.ndarray] | None = None,
    validated: bool = False,
) -> dict[str, np.ndarray]:
    """Per-unit ``E[node | natural non-descendants]`` under ``do``.

    Non-descendants keep their natural draws; descendants carry their conditional
    expectation.  Exact only when :func:`mean_propagation_exact` holds, because
    expectation commutes with affine maps but not with ``max``.
    """
    if not validated:
        validate(scm)
    do = check_intervention(scm, do)
    if not mean_propagation_exact(scm, do):
        raise ScmError("mean propagation is inexact: a max term takes a random argument")
    if natural is None:
        natural = simulate(scm, n, seed, validated=True)
    downstream = scm.descendants(do)
    vals: dict[str, np.ndarray] = {}
    for node in scm.nodes:
        if node.name in do:
            vals[node.name] = np.full(n, do[node.name])
        elif node.name in downstream:
            vals[node.name] = node.mean.evaluate(vals, n)
        else:
            vals[node.name] = natural[node.name]
    return vals


# -- panels -----------------------------------------------------------------------


def decision_matrix(scm: Scm, values: Mapping[str, np.ndarray], n: int, tau: int) -> np.ndarray | None:
    """Decision indicators per period; periods without a decision node carry the latest earlier one."""
    nodes = scm.role_nodes("decision")
    if not nodes:
        return None
    out = np.zeros((n, tau))
    current = np.zeros(n)
    for k in range(1, tau + 1):
        if k in nodes:
            current = values[nodes[k]]
        out[:, k - 1] = current
    return out


def role_matrix(scm: Scm, values: Mapping[str, np.ndarray], role: str, n: int, tau: int) -> np.ndarray:
    nodes = scm.role_nodes(role)
    out = np.empty((n, tau))
    for k in range(1, tau + 1):
        if k not in nodes:
            raise ScmError(f"SCM has no {role} node for period {k}")
        out[:, k - 1] = values[nodes[k]]
    return out


def to_panel(scm: Scm, values: Mapping[str, np.ndarray], keep_exogenous: bool = False) -> PanelDataset:
    n = len(next(iter(values.values()))) if values else 0
    tau = scm.horizon
    if tau < 1:
        raise ScmError("SCM has no treatment/outcome nodes to map onto a panel")
    outcome = role_matrix(scm, values, "outcome", n, tau)
    treatment = role_matrix(scm, values, "treatment", n, tau)
    decision = decision_matrix(scm, values, n, tau)
    exo = {}
    if keep_exogenous:
        exo = {node.name: values[node.name] for node in scm.nodes if node.kind == "exogenous"}
    return PanelDataset(outcome, treatment, decision, scm.lag, tuple(str(i) for i in range(n)), exo)


def sample_observational(scm: Scm, n: int, seed: int, keep_exogenous: bool = False) -> PanelDataset:
    validate(scm)
    return to_panel(scm, simulate(scm, n, seed, validated=True), keep_exogenous)


def sample_interventional(
    scm: Scm,
    do: Mapping[str, float],
    n: int,
    seed: int,
    keep_exogenous: bool = False,
    world: int | None = None,
) -> PanelDataset:
    validate(scm)
    return to_panel(scm, simulate(scm, n, seed, do, world, validated=True), keep_exogenous)
