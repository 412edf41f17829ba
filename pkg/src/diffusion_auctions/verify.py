"""Executable incentive checks for diffusion auctions.

The checks discretize the quantifiers "for all valuations, for all
forwarded subsets": valuations run over a grid that always contains 0,
the agent's reported value, and every allocation-jump threshold located
by recursive bisection; neighbor subsets run over the full powerset up
to a cap, beyond which they are sampled (always keeping the empty and
full sets).  Each check produces a :class:`VerificationReport` whose
witness, on failure, carries a concrete reproducing deviation.

Conditions:

* ``monotonicity``        - allocation non-decreasing in the own value;
* ``payment-identity``    - payment equals the value-independent
  component plus ``v*g(v) - integral of g``;
* ``diffusion-constraint``- withholding neighbors cannot be funded by
  the change in value-independent payments;
* ``ddsic``               - truthful value and full forwarding each
  weakly dominate, for every true value on the grid;
* ``ic``                  - joint value/forwarding deviations;
* ``ir``                  - truthful utility is non-negative;
* ``misreport``           - strict neighbor under-reports (referral
  family: deviations re-route the tree);
* ``ta-equivalence``      - seller revenue matches the first-level
  transformed auction.
"""

from __future__ import annotations

import itertools
from bisect import bisect_right, insort
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .mechanisms import LevelRule, Mechanism, run_referral_auction, transformed_auction_revenue
from .network import DiffusionNetwork, ReportProfile

CORE_CONDITIONS = ("monotonicity", "payment-identity", "diffusion-constraint",
                   "ddsic", "ir")
ALL_CONDITIONS = CORE_CONDITIONS + ("ic", "misreport")


class VerificationError(RuntimeError):
    """The check machinery itself could not complete (not a failed check)."""


@dataclass(frozen=True)
class DeviationGrid:
    """Discretization of the deviation space plus check tolerances."""

    points: tuple[float, ...]
    subset_cap: int = 12
    subset_samples: int = 256
    ineq_tol: float = 1e-6
    integral_rtol: float = 1e-4
    integral_atol: float = 1e-9
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.points or self.points[0] != 0.0:
            raise ValueError("grid must start at 0")
        if list(self.points) != sorted(self.points):
            raise ValueError("grid must be sorted ascending")


def make_grid(reports: ReportProfile, size: int = 64, *,
              vmax: Optional[float] = None, seed: int = 0,
              **tolerances) -> DeviationGrid:
    """Uniform grid of ``size`` points on [0, 2*vmax]."""
    if vmax is None:
        vmax = max((reports.value(i) for i in reports.agents()), default=1.0)
    vmax = max(vmax, 1e-9)
    pts = tuple(np.linspace(0.0, 2.0 * vmax, size))
    return DeviationGrid(points=pts, seed=seed, **tolerances)


@dataclass
class Witness:
    """Reproducing input for a failed check."""

    agent: int
    subset: Optional[tuple[int, ...]]
    value: Optional[float]
    lhs: float
    rhs: float
    note: str
    data: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    condition: str
    passed: bool
    witness: Optional[Witness] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"condition": self.condition, "pass": self.passed}
        if self.witness is not None:
            w = self.witness
            out["witness"] = {
                "agent": w.agent,
                "subset": list(w.subset) if w.subset is not None else None,
                "value": w.value,
                "lhs": w.lhs,
                "rhs": w.rhs,
                "note": w.note,
            }
        return out


class _CurveTable:
    """Allocation/payment of one agent along its own-value axis, under a
    fixed forwarded subset.  Lazily evaluated; jump locations are pinned
    by recursive bisection so step integrals are exact to ``xtol``."""

    def __init__(self, mech: Mechanism, net: DiffusionNetwork,
                 base_profile: ReportProfile, agent: int, xtol: float,
                 budget: int = 20000):
        self._mech = mech
        self._net = net
        self._profile = base_profile
        self._agent = agent
        self._xtol = xtol
        self._budget = budget
        self._data: dict[float, tuple[float, float]] = {}
        self._xs: list[float] = []
        self._prefix_cache: Optional[list[float]] = None

    def _eval(self, x: float) -> tuple[float, float]:
        hit = self._data.get(x)
        if hit is not None:
            return hit
        if self._budget <= 0:
            raise VerificationError("curve evaluation budget exhausted "
                                    "(allocation appears pathological)")
        self._budget -= 1
        prof = self._profile.replace(self._agent, value=x)
        gp = self._mech.evaluate(self._net, prof, self._agent)
        self._data[x] = gp
        insort(self._xs, x)
        return gp

    def ensure(self, points: Iterable[float]) -> None:
        for x in points:
            self._eval(float(x))

    def refine_jumps(self) -> None:
        """Bisect every interval whose endpoint allocations differ until
        each jump is bracketed within ``xtol``."""
        stack = list(zip(self._xs[:-1], self._xs[1:]))
        while stack:
            a, b = stack.pop()
            if b - a <= self._xtol:
                continue
            if abs(self._data[b][0] - self._data[a][0]) <= 1e-12:
                continue
            mid = 0.5 * (a + b)
            self._eval(mid)
            stack.append((a, mid))
            stack.append((mid, b))

    # -- views ---------------------------------------------------------
    def xs(self) -> list[float]:
        return self._xs

    def g_at(self, x: float) -> float:
        return self._eval(x)[0]

    def p_at(self, x: float) -> float:
        return self._eval(x)[1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs = np.asarray(self._xs)
        g = np.asarray([self._data[x][0] for x in self._xs])
        p = np.asarray([self._data[x][1] for x in self._xs])
        return xs, g, p

    def integral_to(self, v: float) -> float:
        """Trapezoid integral of the allocation from 0 to ``v`` over the
        sampled points.  ``v`` is evaluated if not yet sampled."""
        if v not in self._data:
            self._eval(v)
        prefix = self._prefix()
        return prefix[bisect_right(self._xs, v) - 1]

    def _prefix(self) -> list[float]:
        if self._prefix_cache is not None and len(self._prefix_cache) == len(self._xs):
            return self._prefix_cache
        prefix = [0.0]
        for a, b in zip(self._xs[:-1], self._xs[1:]):
            seg = 0.5 * (self._data[a][0] + self._data[b][0]) * (b - a)
            prefix.append(prefix[-1] + seg)
        self._prefix_cache = prefix
        return prefix


class _Context:
    """Shared evaluation cache across the checks of one instance."""

    def __init__(self, mech: Mechanism, net: DiffusionNetwork,
                 reports: ReportProfile, grid: DeviationGrid):
        self.mech = mech
        self.net = net
        self.reports = reports
        self.grid = grid
        self.vmax = max((reports.value(i) for i in reports.agents()), default=1.0)
        self.vmax = max(self.vmax, 1.0)
        # jump brackets this tight keep step-integral error far below the
        # 1e-9 tolerances the worked-example checks are held to
        self.xtol = 1e-12 * self.vmax
        self._tables: dict[tuple[int, tuple[int, ...]], _CurveTable] = {}
        self._subset_cache: dict[int, tuple[list[frozenset[int]], bool]] = {}

    def ineq_tol(self) -> float:
        return self.grid.ineq_tol * self.vmax

    def agents(self) -> list[int]:
        return sorted(self.net.agents)

    def subsets(self, agent: int) -> tuple[list[frozenset[int]], bool]:
        """Tested forwarded subsets for ``agent`` and a sampled? flag."""
        hit = self._subset_cache.get(agent)
        if hit is not None:
            return hit
        full = self.reports.neighbors(agent)
        members = sorted(full)
        if len(members) <= self.grid.subset_cap:
            subsets = [frozenset(c)
                       for r in range(len(members) + 1)
                       for c in itertools.combinations(members, r)]
            sampled = False
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.grid.seed, agent]))
            chosen = {frozenset(), frozenset(members)}
            while len(chosen) < self.grid.subset_samples:
                mask = rng.integers(0, 2, size=len(members)).astype(bool)
                chosen.add(frozenset(m for m, keep in zip(members, mask) if keep))
            subsets = sorted(chosen, key=lambda s: (len(s), sorted(s)))
            sampled = True
        self._subset_cache[agent] = (subsets, sampled)
        return subsets, sampled

    def table(self, agent: int, subset: frozenset[int]) -> _CurveTable:
        key = (agent, tuple(sorted(subset)))
        table = self._tables.get(key)
        if table is None:
            profile = self.reports.replace(agent, neighbors=subset)
            table = _CurveTable(self.mech, self.net, profile, agent, self.xtol)
            table.ensure(self.grid.points)
            table.ensure([0.0, self.reports.value(agent)])
            table.refine_jumps()
            self._tables[key] = table
        return table


def _report(condition: str, witness: Optional[Witness],
            details: Optional[dict] = None) -> VerificationReport:
    return VerificationReport(condition=condition, passed=witness is None,
                              witness=witness, details=details or {})


def _monotonicity_impl(ctx: _Context) -> VerificationReport:
    tol = ctx.grid.ineq_tol
    for agent in ctx.agents():
        for subset in ctx.subsets(agent)[0]:
            table = ctx.table(agent, subset)
            xs, g, _ = table.arrays()
            drop = np.nonzero(g[1:] < g[:-1] - tol)[0]
            if drop.size:
                k = int(drop[0])
                return _report("monotonicity", Witness(
                    agent=agent, subset=tuple(sorted(subset)), value=float(xs[k + 1]),
                    lhs=float(g[k]), rhs=float(g[k + 1]),
                    note="allocation decreases in the own value",
                    data={"value_lo": float(xs[k])}))
    return _report("monotonicity", None)


def _identity_impl(ctx: _Context) -> VerificationReport:
    rtol = ctx.grid.integral_rtol
    atol = ctx.grid.integral_atol
    for agent in ctx.agents():
        for subset in ctx.subsets(agent)[0]:
            table = ctx.table(agent, subset)
            payment_at_zero = table.p_at(0.0)
            for x in list(table.xs()):
                expected = payment_at_zero + x * table.g_at(x) - table.integral_to(x)
                actual = table.p_at(x)
                scale = max(1.0, abs(expected), abs(actual))
                if abs(actual - expected) > atol + rtol * scale:
                    return _report("payment-identity", Witness(
                        agent=agent, subset=tuple(sorted(subset)), value=x,
                        lhs=actual, rhs=expected,
                        note="payment differs from the threshold integral form",
                        data={"payment_at_zero": payment_at_zero}))
    return _report("payment-identity", None)


def _diffusion_impl(ctx: _Context, record_curves: bool = False) -> VerificationReport:
    tol = ctx.ineq_tol()
    details: dict = {}
    witness = None
    for agent in ctx.agents():
        full = ctx.reports.neighbors(agent)
        t_full = ctx.table(agent, full)
        for subset in ctx.subsets(agent)[0]:
            if subset == full:
                continue
            t_sub = ctx.table(agent, subset)
            union = sorted(set(t_sub.xs()) | set(t_full.xs()))
            t_sub.ensure(union)
            t_full.ensure(union)
            lhs = t_sub.p_at(0.0) - t_full.p_at(0.0)
            rhs_max = -np.inf
            curve = {}
            for v in union:
                rhs = t_sub.integral_to(v) - t_full.integral_to(v)
                rhs_max = max(rhs_max, rhs)
                if record_curves and v in ctx.grid.points:
                    curve[v] = rhs
                if rhs > lhs + tol and witness is None:
                    witness = Witness(
                        agent=agent, subset=tuple(sorted(subset)), value=v,
                        lhs=lhs, rhs=rhs,
                        note="withholding is funded beyond the allocation gap")
            entry = {"lhs": lhs, "rhs_max": float(rhs_max),
                     "rhs_final": t_sub.integral_to(union[-1]) - t_full.integral_to(union[-1])}
            if record_curves:
                entry["rhs_by_value"] = curve
            details[(agent, tuple(sorted(subset)))] = entry
    return _report("diffusion-constraint", witness, details)


def _ddsic_impl(ctx: _Context) -> VerificationReport:
    tol = ctx.ineq_tol()
    sampled_agents = []
    for agent in ctx.agents():
        subsets, sampled = ctx.subsets(agent)
        if sampled:
            sampled_agents.append(agent)
        full = ctx.reports.neighbors(agent)
        t_full = ctx.table(agent, full)
        for subset in subsets:
            table = ctx.table(agent, subset)
            xs, g, p = table.arrays()
            # Point 1: at every true value, reporting it beats any other
            # report under the same forwarding choice.
            utilities = xs[:, None] * g[None, :] - p[None, :]
            truthful = xs * g - p
            gaps = utilities.max(axis=1) - truthful
            k = int(np.argmax(gaps))
            if gaps[k] > tol:
                y = int(np.argmax(utilities[k]))
                return _report("ddsic", Witness(
                    agent=agent, subset=tuple(sorted(subset)), value=float(xs[y]),
                    lhs=float(truthful[k]), rhs=float(utilities[k, y]),
                    note="value misreport beats the truthful report",
                    data={"true_value": float(xs[k]), "point": 1}))
            if subset == full:
                continue
            # Point 2: at every true value, full forwarding beats this subset.
            union = sorted(set(table.xs()) | set(t_full.xs()))
            table.ensure(union)
            t_full.ensure(union)
            for x in union:
                u_full = x * t_full.g_at(x) - t_full.p_at(x)
                u_sub = x * table.g_at(x) - table.p_at(x)
                if u_sub > u_full + tol:
                    return _report("ddsic", Witness(
                        agent=agent, subset=tuple(sorted(subset)), value=x,
                        lhs=u_full, rhs=u_sub,
                        note="withholding neighbors beats full forwarding",
                        data={"true_value": x, "point": 2}))
    details = {"sampled_agents": sampled_agents} if sampled_agents else {}
    return _report("ddsic", None, details)


def _ic_impl(ctx: _Context) -> VerificationReport:
    """Joint value/forwarding deviations against the truthful full report."""
    tol = ctx.ineq_tol()
    for agent in ctx.agents():
        subsets, _ = ctx.subsets(agent)
        full = ctx.reports.neighbors(agent)
        t_full = ctx.table(agent, full)
        xs_true = np.asarray(t_full.xs())
        g_full = np.asarray([t_full.g_at(x) for x in xs_true])
        p_full = np.asarray([t_full.p_at(x) for x in xs_true])
        truthful = xs_true * g_full - p_full
        for subset in subsets:
            table = ctx.table(agent, subset)
            ys, g, p = table.arrays()
            utilities = xs_true[:, None] * g[None, :] - p[None, :]
            gaps = utilities.max(axis=1) - truthful
            k = int(np.argmax(gaps))
            if gaps[k] > tol:
                y = int(np.argmax(utilities[k]))
                return _report("ic", Witness(
                    agent=agent, subset=tuple(sorted(subset)), value=float(ys[y]),
                    lhs=float(truthful[k]), rhs=float(utilities[k, y]),
                    note="joint deviation beats the truthful full report",
                    data={"true_value": float(xs_true[k])}))
    return _report("ic", None)


def _ir_impl(ctx: _Context) -> VerificationReport:
    tol = ctx.ineq_tol()
    details = {}
    for agent in ctx.agents():
        g, p = ctx.mech.evaluate(ctx.net, ctx.reports, agent)
        utility = ctx.reports.value(agent) * g - p
        details[agent] = utility
        if utility < -tol:
            return _report("ir", Witness(
                agent=agent, subset=None, value=ctx.reports.value(agent),
                lhs=utility, rhs=0.0,
                note="truthful participation yields negative utility"),
                {"utilities": details})
    return _report("ir", None, {"utilities": details})


def _misreport_impl(ctx: _Context) -> VerificationReport:
    """Strict neighbor under-reports; on general networks these re-route
    the referral tree."""
    tol = ctx.ineq_tol()
    for agent in ctx.agents():
        full = ctx.reports.neighbors(agent)
        if not full:
            continue
        t_full = ctx.table(agent, full)
        for subset in ctx.subsets(agent)[0]:
            if subset == full:
                continue
            table = ctx.table(agent, subset)
            union = sorted(set(table.xs()) | set(t_full.xs()))
            table.ensure(union)
            t_full.ensure(union)
            for x in union:
                u_full = x * t_full.g_at(x) - t_full.p_at(x)
                u_sub = x * table.g_at(x) - table.p_at(x)
                if u_sub > u_full + tol:
                    return _report("misreport", Witness(
                        agent=agent, subset=tuple(sorted(subset)), value=x,
                        lhs=u_full, rhs=u_sub,
                        note="strict neighbor under-report raises utility",
                        data={"true_value": x}))
    return _report("misreport", None)


_IMPLS = {
    "monotonicity": _monotonicity_impl,
    "payment-identity": _identity_impl,
    "diffusion-constraint": _diffusion_impl,
    "ddsic": _ddsic_impl,
    "ic": _ic_impl,
    "ir": _ir_impl,
    "misreport": _misreport_impl,
}


def verify_mechanism(mech: Mechanism, net: DiffusionNetwork,
                     reports: ReportProfile, grid: Optional[DeviationGrid] = None,
                     conditions: Sequence[str] = CORE_CONDITIONS) -> list[VerificationReport]:
    """Run the requested checks with a shared evaluation cache."""
    grid = grid or make_grid(reports)
    ctx = _Context(mech, net, reports, grid)
    return [_IMPLS[c](ctx) for c in conditions]


def check_allocation_monotonicity(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _monotonicity_impl(_Context(mech, net, reports, grid))


def check_payment_identity(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _identity_impl(_Context(mech, net, reports, grid))


def check_diffusion_constraint(mech, net, reports, grid=None,
                               record_curves: bool = False) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _diffusion_impl(_Context(mech, net, reports, grid), record_curves)


def check_ddsic_deviations(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _ddsic_impl(_Context(mech, net, reports, grid))


def check_ic_deviations(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _ic_impl(_Context(mech, net, reports, grid))


def check_ir(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _ir_impl(_Context(mech, net, reports, grid))


def check_neighbor_misreport(mech, net, reports, grid=None) -> VerificationReport:
    grid = grid or make_grid(reports)
    return _misreport_impl(_Context(mech, net, reports, grid))


def check_ta_equivalence(net: DiffusionNetwork, reports: ReportProfile,
                         rule: LevelRule) -> VerificationReport:
    """Seller revenue of the referral run must equal the transformed
    auction's first-level threshold payment, as the same expression."""
    outcome, _ = run_referral_auction(net, reports, rule)
    ta = transformed_auction_revenue(net, reports, rule)
    details = {"referral_revenue": outcome.seller_revenue, "ta_revenue": ta}
    if outcome.seller_revenue != ta:
        return _report("ta-equivalence", Witness(
            agent=-1, subset=None, value=None,
            lhs=outcome.seller_revenue, rhs=ta,
            note="referral revenue differs from the transformed auction"),
            details)
    return _report("ta-equivalence", None, details)


def replay_witness(mech: Mechanism, net: DiffusionNetwork,
                   reports: ReportProfile, report: VerificationReport) -> bool:
    """Re-derive a failed check's violation from its witness alone."""
    w = report.witness
    if w is None:
        return False
    cond = report.condition

    def point(agent, subset, value):
        prof = reports
        if subset is not None:
            prof = prof.replace(agent, neighbors=subset)
        if value is not None:
            prof = prof.replace(agent, value=value)
        return mech.evaluate(net, prof, agent)

    if cond == "monotonicity":
        g_lo, _ = point(w.agent, w.subset, w.data["value_lo"])
        g_hi, _ = point(w.agent, w.subset, w.value)
        return g_lo > g_hi
    if cond == "ir":
        g, p = point(w.agent, None, None)
        return reports.value(w.agent) * g - p < 0
    if cond in ("ddsic", "ic", "misreport"):
        x = w.data["true_value"]
        if cond == "ddsic" and w.data.get("point") == 2:
            g_full, p_full = point(w.agent, tuple(sorted(reports.neighbors(w.agent))), x)
            g_sub, p_sub = point(w.agent, w.subset, x)
            return x * g_sub - p_sub > x * g_full - p_full
        base_subset = (tuple(sorted(reports.neighbors(w.agent)))
                       if cond in ("ic",) else w.subset)
        g_t, p_t = point(w.agent, base_subset, x)
        g_d, p_d = point(w.agent, w.subset, w.value)
        return x * g_d - p_d > x * g_t - p_t
    if cond in ("payment-identity", "diffusion-constraint"):
        grid = make_grid(reports)
        ctx = _Context(mech, net, reports, grid)
        table = ctx.table(w.agent, frozenset(w.subset))
        table.ensure([w.value])
        table.refine_jumps()
        if cond == "payment-identity":
            expected = (table.p_at(0.0) + w.value * table.g_at(w.value)
                        - table.integral_to(w.value))
            scale = max(1.0, abs(expected))
            tol = grid.integral_atol + grid.integral_rtol * scale
            return abs(table.p_at(w.value) - expected) > tol
        t_full = ctx.table(w.agent, reports.neighbors(w.agent))
        union = sorted(set(table.xs()) | set(t_full.xs()) | {w.value})
        table.ensure(union)
        t_full.ensure(union)
        lhs = table.p_at(0.0) - t_full.p_at(0.0)
        rhs = table.integral_to(w.value) - t_full.integral_to(w.value)
        return rhs > lhs
    return False


def random_exponents(agents: Iterable[int], rng: np.random.Generator,
                     low: float = 0.5, high: float = 3.0) -> dict[int, float]:
    """Per-agent exponent draws, independent of any report."""
    return {i: float(rng.uniform(low, high)) for i in agents}
