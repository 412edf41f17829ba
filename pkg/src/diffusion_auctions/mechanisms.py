"""Executable diffusion auctions on referral trees.

The level-by-level engine runs an auction at every level of the tree,
rooted at the seller.  Each level computes *effective valuations* (the
best report in each child's subtree minus the running offset), picks a
tentative winner, charges it the level's threshold price plus the
offset, and descends into its subtree.  The exponential-valuation
auction scores subtrees by ``rho**t_i`` with per-agent exponents; the
referral-auction family plugs in an arbitrary monotone level rule and
prices by the Myerson threshold of that rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .network import (
    EQ_TOL,
    DiffusionNetwork,
    Outcome,
    ReferralTree,
    ReportProfile,
    ValuesLike,
    _value_getter,
    build_referral_tree,
    subtree_values,
    truthful_profile,
    unsold_outcome,
)


class NonMonotoneRuleError(ValueError):
    """A pluggable level rule failed the monotonicity probe."""


def unit_exponents(nodes) -> dict[int, float]:
    return {i: 1.0 for i in nodes}


def _exponent(exponents: Mapping[int, float], node: int) -> float:
    t = exponents.get(node, 1.0)
    if t <= 0:
        raise ValueError(f"exponent t[{node}]={t} must be positive")
    return t


@dataclass(frozen=True)
class LevelTrace:
    """Record of one level of the descent."""

    parent: int
    offset: float
    survivors: tuple[tuple[int, float], ...]   # (node, effective valuation)
    tentative_winner: Optional[int]
    effective_payment: float                   # z
    actual_payment: Optional[float]            # z + offset; None when the
                                               # parent kept the item


def _run_levels(
    tree: ReferralTree,
    values: Callable[[int], float],
    submax: Mapping[int, float],
    select: Callable[[list[tuple[int, float]]], Optional[tuple[int, float]]],
    start_parent: Optional[int] = None,
    start_offset: float = 0.0,
) -> tuple[Optional[int], dict[int, float], list[LevelTrace]]:
    """Shared descent loop.

    ``select`` receives the surviving (node, rho) pairs of a level with
    at least two entries and returns the tentative winner and its
    effective payment, or ``None`` to decline the level entirely.
    ``start_parent``/``start_offset`` resume the descent below a level
    that was decided by other means.  Returns (winner, {path node:
    payment to its parent}, traces); the start node's own payment is not
    included.
    """
    parent = tree.root if start_parent is None else start_parent
    offset = start_offset
    pay: dict[int, float] = {}
    tentative: Optional[int] = None if parent == tree.root else parent
    traces: list[LevelTrace] = []

    while True:
        survivors = []
        for child in tree.child_tuple(parent):
            rho = submax[child] - offset
            if rho >= -EQ_TOL:
                survivors.append((child, max(rho, 0.0)))
        if len(survivors) >= 2:
            chosen = select(survivors)
        elif len(survivors) == 1:
            chosen = (survivors[0][0], 0.0)
        else:
            chosen = None

        if chosen is None:
            # No child stays in the game: the current tentative winner
            # keeps the item (or the item is unsold at the root).
            traces.append(LevelTrace(parent, offset, tuple(survivors), None, 0.0, None))
            break
        i_star, z = chosen
        if parent != tree.root and values(parent) >= offset + z - EQ_TOL:
            # The parent prefers keeping the item over selling at offset+z.
            traces.append(LevelTrace(parent, offset, tuple(survivors), None, z, None))
            break
        actual = offset + z
        pay[i_star] = actual
        traces.append(LevelTrace(parent, offset, tuple(survivors), i_star, z, actual))
        tentative = i_star
        parent, offset = i_star, actual
        if not tree.child_tuple(i_star):
            break   # reached a leaf

    return tentative, pay, traces


def _settle(tree: ReferralTree, winner: Optional[int],
            pay: Mapping[int, float]) -> Outcome:
    """Net out the payment chain along the winning path."""
    agents = tree.agents()
    allocation = {i: 0.0 for i in agents}
    payments = {i: 0.0 for i in agents}
    if winner is None:
        return Outcome(allocation, payments, 0.0, None)
    allocation[winner] = 1.0
    path = list(pay)    # insertion order follows the descent
    for idx, node in enumerate(path):
        received = pay[path[idx + 1]] if idx + 1 < len(path) else 0.0
        payments[node] = pay[node] - received
    revenue = pay[path[0]] if path else 0.0
    return Outcome(allocation, payments, revenue, winner)


def run_lblev(tree: ReferralTree, reports: ValuesLike,
              exponents: Mapping[int, float]) -> tuple[Outcome, list[LevelTrace]]:
    """Level-by-level exponential-valuation auction on a referral tree.

    At each level the subtree with the largest ``rho**t`` stays in the
    game and pays the runner-up's ``rho`` raised to the exponent ratio
    ``t_runnerup / t_winner``, on top of the running offset.  Ties break
    toward the smaller node id.  Exponents default to 1 when omitted;
    non-positive exponents are rejected.
    """
    values = _value_getter(reports)
    agents = tree.agents()
    texp = {i: _exponent(exponents, i) for i in agents}
    if not agents or all(values(i) == 0.0 for i in agents):
        return unsold_outcome(agents), []
    submax = subtree_values(tree, reports)

    def select(survivors: list[tuple[int, float]]) -> tuple[int, float]:
        ranked = sorted(survivors, key=lambda nr: (-(nr[1] ** texp[nr[0]]), nr[0]))
        i_star = ranked[0][0]
        runner, rho_runner = ranked[1]
        z = rho_runner ** (texp[runner] / texp[i_star])
        return i_star, z

    winner, pay, traces = _run_levels(tree, values, submax, select)
    return _settle(tree, winner, pay), traces


def run_idm_tree(tree: ReferralTree, reports: ValuesLike) -> Outcome:
    """Information-diffusion mechanism on a tree: the unit-exponent case."""
    outcome, _ = run_lblev(tree, reports, {})
    return outcome


class LevelRule:
    """Deterministic single-winner allocation over one level's effective
    valuations.  Must be monotone: raising the winner's value keeps it
    winning, and raising a loser's value past its threshold makes it win.
    """

    name = "rule"

    def winner(self, values: Mapping[int, float]) -> Optional[int]:
        raise NotImplementedError


class ArgmaxRule(LevelRule):
    """Highest effective valuation wins; ties break to the smaller id."""

    name = "argmax"

    def winner(self, values: Mapping[int, float]) -> Optional[int]:
        if not values:
            return None
        return min(values, key=lambda i: (-values[i], i))


class PowerRule(LevelRule):
    """Highest ``value**t_i`` wins; ties break to the smaller id."""

    def __init__(self, exponents: Mapping[int, float]):
        self.exponents = dict(exponents)
        self.name = "argmax-pow"

    def winner(self, values: Mapping[int, float]) -> Optional[int]:
        if not values:
            return None
        return min(values, key=lambda i: (-(values[i] ** _exponent(self.exponents, i)), i))


class SecondPriceReserveRule(LevelRule):
    """Highest value wins if it clears the reserve; otherwise no winner."""

    def __init__(self, reserve: float = 0.0):
        self.reserve = float(reserve)
        self.name = f"second-price-r{reserve:g}"

    def winner(self, values: Mapping[int, float]) -> Optional[int]:
        if not values:
            return None
        best = min(values, key=lambda i: (-values[i], i))
        return best if values[best] >= self.reserve else None


class ArgminRule(LevelRule):
    """Deliberately non-monotone: lowest value wins.  Test helper."""

    name = "argmin"

    def winner(self, values: Mapping[int, float]) -> Optional[int]:
        if not values:
            return None
        return min(values, key=lambda i: (values[i], i))


def myerson_level_payment(rule: LevelRule, winner: int,
                          rhos: Mapping[int, float],
                          iterations: int = 64) -> float:
    """Threshold payment: the smallest value at which ``winner`` still wins.

    Computed by bisection over the winner's coordinate with everything
    else fixed.  Equals ``rho_w - integral of the win indicator`` for a
    deterministic monotone rule.  Probes that detect a non-monotone rule
    raise :class:`NonMonotoneRuleError`.
    """
    rhos = dict(rhos)
    if any(v < 0 for v in rhos.values()):
        raise ValueError("effective valuations must be non-negative")
    if rule.winner(rhos) != winner:
        raise ValueError(f"{winner} is not the rule's winner at these values")
    rho_w = rhos[winner]

    def wins(y: float) -> bool:
        trial = dict(rhos)
        trial[winner] = y
        return rule.winner(trial) == winner

    hi_probe = 2.0 * max(rhos.values(), default=0.0)
    if hi_probe > rho_w and not wins(hi_probe):
        raise NonMonotoneRuleError(f"{rule.name}: winner loses when raised to {hi_probe}")
    if wins(0.0):
        return 0.0
    lo, hi = 0.0, rho_w
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if wins(mid):
            hi = mid
        else:
            lo = mid
    for frac in (0.25, 0.5, 0.75):
        y = frac * lo
        if y < lo and wins(y):
            raise NonMonotoneRuleError(f"{rule.name}: wins below its own threshold at {y}")
    return hi


def run_referral_auction(net: DiffusionNetwork, reports: ReportProfile,
                         rule: LevelRule) -> tuple[Outcome, list[LevelTrace]]:
    """Referral auction: first-invite-first-served tree, then the level
    descent with the plugged-in rule and its Myerson threshold payments.

    The rule adjudicates a level only when two or more subtrees survive;
    a lone survivor pays just the offset.  Payments and the final
    netting follow the same accounting as :func:`run_lblev`.
    """
    tree = build_referral_tree(net, reports)
    agents = tree.agents()
    values = reports.value
    if not agents or all(values(i) == 0.0 for i in agents):
        outcome = unsold_outcome(net.agents)
        return outcome, []
    submax = subtree_values(tree, reports)

    def select(survivors: list[tuple[int, float]]) -> Optional[tuple[int, float]]:
        level_values = dict(survivors)
        i_star = rule.winner(level_values)
        if i_star is None:
            return None
        z = myerson_level_payment(rule, i_star, level_values)
        return i_star, z

    winner, pay, traces = _run_levels(tree, values, submax, select)
    outcome = _settle(tree, winner, pay)
    # Extend to agents cut off by the reported forwards.
    allocation = {i: 0.0 for i in net.agents}
    payments = {i: 0.0 for i in net.agents}
    allocation.update(outcome.allocation)
    payments.update(outcome.payments)
    full = Outcome(allocation, payments, outcome.seller_revenue, outcome.winner)
    return full, traces


def transformed_auction_revenue(net: DiffusionNetwork, reports: ReportProfile,
                                rule: LevelRule) -> float:
    """Seller revenue of the transformed auction: replace each first-level
    subtree by a single node holding its best report, then run one round
    of the rule with its Myerson threshold payment."""
    tree = build_referral_tree(net, reports)
    first = tree.child_tuple(tree.root)
    if not first or all(reports.value(i) == 0.0 for i in tree.agents()):
        return 0.0
    submax = subtree_values(tree, reports)
    level_values = {i: submax[i] for i in first}
    if len(level_values) == 1:
        return 0.0
    i_star = rule.winner(level_values)
    if i_star is None:
        return 0.0
    return myerson_level_payment(rule, i_star, level_values)


def rc_example_mechanism(bids: Sequence[float],
                         ids: Sequence[int] = (1, 2, 3)) -> Outcome:
    """Three-bidder randomized residual-claimant auction.

    The item goes to the highest bidder with probability 2/3 and to the
    second highest with probability 1/3.  The highest bidder pays one
    third of the second-highest bid; that amount is handed to the lowest
    bidder, so payments sum to zero and the seller earns nothing.  Ties
    break toward the smaller id.  All-zero bids leave the item unsold.
    """
    if len(bids) != 3 or len(ids) != 3:
        raise ValueError("exactly three bids are required")
    if any(b < 0 for b in bids):
        raise ValueError("bids must be non-negative")
    if all(b == 0 for b in bids):
        return unsold_outcome(ids)
    order = sorted(zip(ids, bids), key=lambda ib: (-ib[1], ib[0]))
    (hi, _), (mid, mid_bid), (lo, _) = order
    transfer = mid_bid / 3.0
    allocation = {hi: 2.0 / 3.0, mid: 1.0 / 3.0, lo: 0.0}
    payments = {hi: transfer, mid: 0.0, lo: -transfer}
    return Outcome(allocation, payments, 0.0, None)


class Mechanism:
    """A diffusion auction runnable on a network plus a report profile.

    ``evaluate`` exposes one agent's allocation probability and payment,
    which is the only surface the incentive checks need; the default
    implementation runs the full auction.
    """

    name = "mechanism"

    def run(self, net: DiffusionNetwork, reports: ReportProfile) -> Outcome:
        raise NotImplementedError

    def evaluate(self, net: DiffusionNetwork, reports: ReportProfile,
                 agent: int) -> tuple[float, float]:
        out = self.run(net, reports)
        return out.allocation.get(agent, 0.0), out.payments.get(agent, 0.0)

    def run_on_values(self, net: DiffusionNetwork,
                      values: Mapping[int, float]) -> Outcome:
        """Run under truthful forwarding with the given valuations."""
        return self.run(net, truthful_profile(net, values))


def _complete(outcome: Outcome, agents) -> Outcome:
    allocation = {i: 0.0 for i in agents}
    payments = {i: 0.0 for i in agents}
    allocation.update(outcome.allocation)
    payments.update(outcome.payments)
    return Outcome(allocation, payments, outcome.seller_revenue, outcome.winner)


class LblevAuction(Mechanism):
    """Wrapper running the exponential-valuation auction on the reported
    subtree of a tree network.  ``exponents=None`` gives unit exponents,
    i.e. the information-diffusion mechanism."""

    def __init__(self, exponents: Optional[Mapping[int, float]] = None):
        self.exponents = dict(exponents) if exponents else {}
        self.name = "lblev" if exponents else "idm"
        self._tree_cache: dict[int, ReferralTree] = {}

    def run(self, net: DiffusionNetwork, reports: ReportProfile) -> Outcome:
        tree = build_referral_tree(net, reports)
        outcome, _ = run_lblev(tree, reports, self.exponents)
        return _complete(outcome, net.agents)

    def run_with_traces(self, net: DiffusionNetwork,
                        reports: ReportProfile) -> tuple[Outcome, list[LevelTrace]]:
        tree = build_referral_tree(net, reports)
        outcome, traces = run_lblev(tree, reports, self.exponents)
        return _complete(outcome, net.agents), traces

    def run_on_values(self, net: DiffusionNetwork,
                      values: Mapping[int, float]) -> Outcome:
        tree = self._tree_cache.get(id(net))
        if tree is None:
            tree = build_referral_tree(net, truthful_profile(net, {i: 0.0 for i in net.agents}))
            self._tree_cache[id(net)] = tree
        outcome, _ = run_lblev(tree, values, self.exponents)
        return outcome


class ReferralAuction(Mechanism):
    """Wrapper for the referral-auction family with a pluggable rule."""

    def __init__(self, rule: LevelRule):
        self.rule = rule
        self.name = f"ra:{rule.name}"

    def run(self, net: DiffusionNetwork, reports: ReportProfile) -> Outcome:
        outcome, _ = run_referral_auction(net, reports, self.rule)
        return outcome

    def run_with_traces(self, net: DiffusionNetwork,
                        reports: ReportProfile) -> tuple[Outcome, list[LevelTrace]]:
        return run_referral_auction(net, reports, self.rule)
