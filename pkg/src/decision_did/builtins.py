"""Built-in data-generating processes."""

from __future__ import annotations

from dataclasses import dataclass

from .scm import Scm, ScmError, affine, deterministic, exogenous, stochastic, validate


def builtin_cars_example() -> Scm:
    """Defective-car recall model: deciding the recall already changes behaviour at time 1.

    U ~ Bernoulli(0.2); A1 := 0; P := U; Y1 ~ Poisson(10 + 5U - 5P); A2 := P;
    Y2 ~ Poisson(10 - 0.2 Y1 + 5U - 5 max(P, A2)).
    """
    nodes = (
        exogenous("U", "bernoulli", 0.2),
        deterministic("A1", affine(0), time=1, role="treatment"),
        deterministic("P", affine(0, {"U": 1}), time=1, role="decision"),
        stochastic("Y1", "poisson", affine(10, {"U": 5, "P": -5}), time=1, role="outcome"),
        deterministic("A2", affine(0, {"P": 1}), time=2, role="treatment"),
        stochastic("Y2", "poisson", affine(10, {"Y1": -0.2, "U": 5}, [(("P", "A2"), -5)]), time=2, role="outcome"),
    )
    return Scm(nodes, name="cars", lag=1)


def builtin_anticipation_dgp(alpha: float = -2.0) -> Scm:
    """Two-period model where the decision shifts Y1 by ``alpha`` and affects Y2 only through A2.

    Y1 ~ Poisson(10 + 5U + alpha P); Y2 ~ Poisson(12 + 5U - 3 A2); P := U ~ Bernoulli(0.2).
    Parallel trends under P = 0 and the exclusion restriction hold by construction,
    so the DiD functional converges to ATT_A2 - alpha.
    """
    nodes = (
        exogenous("U", "bernoulli", 0.2),
        deterministic("A1", affine(0), time=1, role="treatment"),
        deterministic("P", affine(0, {"U": 1}), time=1, role="decision"),
        stochastic("Y1", "poisson", affine(10, {"U": 5, "P": alpha}), time=1, role="outcome"),
        deterministic("A2", affine(0, {"P": 1}), time=2, role="treatment"),
        stochastic("Y2", "poisson", affine(12, {"U": 5, "A2": -3}), time=2, role="outcome"),
    )
    scm = Scm(nodes, name=f"anticipation(alpha={alpha:g})", lag=1)
    validate(scm)
    return scm


def builtin_no_anticipation_dgp() -> Scm:
    """Two-period model without anticipation: Y1 ~ Poisson(10 + 5U); Y2 ~ Poisson(12 + 5U - 3 max(P, A2))."""
    nodes = (
        exogenous("U", "bernoulli", 0.2),
        deterministic("A1", affine(0), time=1, role="treatment"),
        deterministic("P", affine(0, {"U": 1}), time=1, role="decision"),
        stochastic("Y1", "poisson", affine(10, {"U": 5}), time=1, role="outcome"),
        deterministic("A2", affine(0, {"P": 1}), time=2, role="treatment"),
        stochastic("Y2", "poisson", affine(12, {"U": 5}, [(("P", "A2"), -3)]), time=2, role="outcome"),
    )
    return Scm(nodes, name="no-anticipation", lag=1)


@dataclass(frozen=True)
class StaggeredParams:
    """Coefficients of the staggered-adoption model.

    ``effects[e]`` is the additional effect of having been treated for ``e``
    extra periods, so the effect after ``e`` periods of exposure is
    ``sum(effects[:e + 1])``.  ``anticipation`` multiplies ``P_k - P_{k-s}``
    (decided but not yet implemented); zero gives no anticipation.
    """

    u_prob: float = 0.5
    unit_effect: float = 2.0
    base: float = 10.0
    trend: tuple[float, ...] | None = None
    trend_slope: float = 1.0
    effects: tuple[float, ...] = (1.0, 0.5, 0.25)
    anticipation: float = 0.0
    hazard_base: float = 0.15
    hazard_u: float = 0.2
    sd: float = 1.0


def builtin_staggered_dgp(tau: int = 4, s: int = 1, params: StaggeredParams | None = None) -> Scm:
    """Staggered decisions with lagged implementation ``A_k := P_{k-s}``.

    Decisions are absorbing: ``P_k := max(P_{k-1}, D_k)`` with a fresh decision
    draw ``D_k ~ Bernoulli(hazard_base + hazard_u U)`` up to ``tau - s``; after
    that the decision is frozen.  Outcomes are Normal with a time-invariant unit
    effect, so untreated trends are parallel across decision cohorts.
    """
    p = params or StaggeredParams()
    tau, s = int(tau), int(s)
    if s < 1 or tau < s + 1:
        raise ScmError("staggered DGP needs tau >= s + 1 >= 2")
    trend = p.trend if p.trend is not None else tuple(p.trend_slope * k for k in range(1, tau + 1))
    if len(trend) != tau:
        raise ScmError(f"trend needs {tau} entries")
    for h in (p.hazard_base, p.hazard_base + p.hazard_u):
        if not 0 < h < 1:
            raise ScmError("decision hazards must lie strictly inside (0, 1)")
    if not 0 < p.u_prob < 1:
        raise ScmError("u_prob must lie strictly inside (0, 1)")
    if p.sd <= 0:
        raise ScmError("outcome sd must be positive")

    nodes = [exogenous("U", "bernoulli", p.u_prob)]
    last_decision = tau - s
    for k in range(1, tau + 1):
        if k <= last_decision:
            nodes.append(stochastic(f"D{k}", "bernoulli", affine(p.hazard_base, {"U": p.hazard_u})))
            if k == 1:
                nodes.append(deterministic("P1", affine(0, {"D1": 1}), time=1, role="decision"))
            else:
                nodes.append(deterministic(f"P{k}", affine(0, maxes=[((f"P{k - 1}", f"D{k}"), 1)]),
                                           time=k, role="decision"))
        else:
            nodes.append(deterministic(f"P{k}", affine(0, {f"P{k - 1}": 1}), time=k, role="decision"))
        if k <= s:
            nodes.append(deterministic(f"A{k}", affine(0), time=k, role="treatment"))
        else:
            nodes.append(deterministic(f"A{k}", affine(0, {f"P{k - s}": 1}), time=k, role="treatment"))

        terms: dict[str, float] = {"U": p.unit_effect}
        for e, beta in enumerate(p.effects):
            if k - e >= s + 1 and beta != 0:
                terms[f"A{k - e}"] = terms.get(f"A{k - e}", 0.0) + beta
        if p.anticipation != 0:
            terms[f"P{k}"] = terms.get(f"P{k}", 0.0) + p.anticipation
            if k - s >= 1:
                terms[f"P{k - s}"] = terms.get(f"P{k - s}", 0.0) - p.anticipation
        nodes.append(stochastic(f"Y{k}", "normal", affine(p.base + trend[k - 1], terms), sd=p.sd,
                                time=k, role="outcome"))

    scm = Scm(tuple(nodes), name=f"staggered(tau={tau}, s={s})", lag=s)
    validate(scm)
    return scm


BUILTINS = {
    "cars": builtin_cars_example,
    "prop1-dgp": builtin_anticipation_dgp,
    "prop2-dgp": builtin_no_anticipation_dgp,
    "staggered": builtin_staggered_dgp,
}
