"""Graph and tree substrate for diffusion auctions.

A diffusion auction runs on a directed graph with a distinguished seller
node.  Agents report a valuation, a subset of their out-neighbors to
forward the auction information to, and carry a system-assigned arrival
timestamp.  This module holds those core types plus the reachability
filter, referral-tree construction, subtree statistics, and instance
file I/O.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional, Union

import numpy as np

#: Reserved node id for the seller.  Agent ids must be positive.
SELLER = 0

#: Tolerance used for float-equality decisions inside mechanisms.
EQ_TOL = 1e-9


class InstanceError(ValueError):
    """Raised when a network / report-profile input is malformed."""


@dataclass(frozen=True)
class Report:
    """One agent's report: valuation, forwarded neighbors, arrival stamp."""

    value: float
    neighbors: frozenset[int]
    timestamp: int

    def __post_init__(self) -> None:
        if self.value < 0:
            raise InstanceError(f"negative reported valuation {self.value}")
        if self.timestamp < 0:
            raise InstanceError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class DiffusionNetwork:
    """Directed graph over agents plus the seller.

    ``out_edges[i]`` lists the nodes that *i* can inform.  No edge may
    target the seller, and the seller never appears in the agent set.
    """

    seller: int
    agents: frozenset[int]
    out_edges: Mapping[int, frozenset[int]]

    def __post_init__(self) -> None:
        if self.seller in self.agents:
            raise InstanceError("seller id listed in the agent set")
        known = self.agents | {self.seller}
        for src, dsts in self.out_edges.items():
            if src not in known:
                raise InstanceError(f"edge source {src} is not a known node")
            for dst in dsts:
                if dst == self.seller:
                    raise InstanceError(f"edge {src}->{dst} targets the seller")
                if dst not in self.agents:
                    raise InstanceError(f"edge {src}->{dst} targets unknown node")

    def neighbors(self, node: int) -> frozenset[int]:
        return self.out_edges.get(node, frozenset())

    def sorted_agents(self) -> list[int]:
        return sorted(self.agents)


def network_from_edges(edges: Iterable[tuple[int, int]],
                       agents: Optional[Iterable[int]] = None,
                       seller: int = SELLER) -> DiffusionNetwork:
    """Build a :class:`DiffusionNetwork` from an edge list."""
    adj: dict[int, set[int]] = {}
    seen: set[int] = set()
    for src, dst in edges:
        adj.setdefault(src, set()).add(dst)
        seen.add(dst)
        if src != seller:
            seen.add(src)
    agent_set = frozenset(agents) if agents is not None else frozenset(seen)
    return DiffusionNetwork(
        seller=seller,
        agents=agent_set,
        out_edges={k: frozenset(v) for k, v in adj.items()},
    )


@dataclass(frozen=True)
class ReportProfile:
    """Immutable per-agent report map."""

    reports: Mapping[int, Report]

    def agents(self) -> Iterable[int]:
        return self.reports.keys()

    def value(self, agent: int) -> float:
        return self.reports[agent].value

    def neighbors(self, agent: int) -> frozenset[int]:
        return self.reports[agent].neighbors

    def timestamp(self, agent: int) -> int:
        return self.reports[agent].timestamp

    def values(self) -> dict[int, float]:
        return {i: r.value for i, r in self.reports.items()}

    def replace(self, agent: int, *, value: Optional[float] = None,
                neighbors: Optional[Iterable[int]] = None) -> "ReportProfile":
        """Copy of the profile with one agent's report altered."""
        old = self.reports[agent]
        new = Report(
            value=old.value if value is None else float(value),
            neighbors=old.neighbors if neighbors is None else frozenset(neighbors),
            timestamp=old.timestamp,
        )
        merged = dict(self.reports)
        merged[agent] = new
        return ReportProfile(merged)


#: Mechanisms accept either a full profile or a bare {agent: value} map
#: wherever only valuations matter (e.g. Monte Carlo loops on a fixed tree).
ValuesLike = Union[ReportProfile, Mapping[int, float]]


def _value_getter(reports: ValuesLike):
    if isinstance(reports, ReportProfile):
        return reports.value
    return reports.__getitem__


def bfs_timestamps(net: DiffusionNetwork) -> dict[int, int]:
    """Arrival order under full forwarding: breadth-first from the seller,
    ties within a layer by ascending id.  Unreachable agents are stamped
    after all reachable ones."""
    order: dict[int, int] = {}
    stamp = 0
    seen = {net.seller}
    frontier = sorted(net.neighbors(net.seller))
    while frontier:
        nxt: set[int] = set()
        for node in frontier:
            if node in seen:
                continue
            seen.add(node)
            order[node] = stamp
            stamp += 1
            nxt |= set(net.neighbors(node))
        frontier = sorted(nxt - seen)
    for node in sorted(net.agents - seen):
        order[node] = stamp
        stamp += 1
    return order


def truthful_profile(net: DiffusionNetwork, values: Mapping[int, float],
                     timestamps: Optional[Mapping[int, int]] = None) -> ReportProfile:
    """Profile where every agent reports its true value and full neighbor set."""
    stamps = dict(timestamps) if timestamps is not None else bfs_timestamps(net)
    reports = {
        i: Report(value=float(values[i]), neighbors=net.neighbors(i),
                  timestamp=int(stamps[i]))
        for i in net.agents
    }
    return ReportProfile(reports)


def filter_subnetwork(net: DiffusionNetwork, reports: ValuesLike) -> frozenset[int]:
    """Agents reachable from the seller along reported forwarding edges.

    The seller always forwards to all its out-neighbors; an agent's edge
    to ``j`` is live only if ``j`` is both in its reported neighbor set
    and a true out-neighbor.
    """
    if not isinstance(reports, ReportProfile):
        raise TypeError("filter_subnetwork needs a full ReportProfile")
    reached: set[int] = set()
    queue = deque(sorted(net.neighbors(net.seller)))
    while queue:
        node = queue.popleft()
        if node in reached:
            continue
        reached.add(node)
        live = reports.neighbors(node) & net.neighbors(node)
        for nxt in sorted(live):
            if nxt not in reached:
                queue.append(nxt)
    return frozenset(reached)


@dataclass(frozen=True)
class ReferralTree:
    """Rooted tree over the reachable agents; root is the seller."""

    root: int
    parent: Mapping[int, int]
    children: Mapping[int, tuple[int, ...]]
    level: Mapping[int, int]

    def nodes(self) -> list[int]:
        return sorted(self.parent.keys())

    def agents(self) -> frozenset[int]:
        cached = getattr(self, "_agents", None)
        if cached is None:
            cached = frozenset(self.parent.keys())
            object.__setattr__(self, "_agents", cached)
        return cached

    def subtree(self, node: int) -> Iterator[int]:
        """Iterate over the subtree rooted at ``node`` (inclusive)."""
        stack = [node]
        while stack:
            cur = stack.pop()
            yield cur
            stack.extend(self.children.get(cur, ()))

    def child_tuple(self, node: int) -> tuple[int, ...]:
        return self.children.get(node, ())

    def post_order(self) -> tuple[int, ...]:
        """Agents ordered children-before-parents (root excluded)."""
        cached = getattr(self, "_post_order", None)
        if cached is None:
            pre: list[int] = []
            stack = list(self.children.get(self.root, ()))
            while stack:
                node = stack.pop()
                pre.append(node)
                stack.extend(self.children.get(node, ()))
            cached = tuple(reversed(pre))
            object.__setattr__(self, "_post_order", cached)
        return cached


def build_referral_tree(net: DiffusionNetwork, reports: ReportProfile) -> ReferralTree:
    """First-invite-first-served referral tree.

    The seller's out-neighbors are always its children.  Every other
    reachable agent attaches to the reachable inviter with the smallest
    timestamp, ties broken by ascending id.  Unreachable agents are
    excluded.  Timestamps that would make the parent map cyclic (an
    agent "invited" only by its own descendants) are rejected: such
    stamps cannot arise from a real arrival process.
    """
    reached = filter_subnetwork(net, reports)
    first_level = sorted(net.neighbors(net.seller))
    parent: dict[int, int] = {i: net.seller for i in first_level}
    for node in sorted(reached):
        if node in parent:
            continue
        inviters = [
            k for k in reached
            if node in (reports.neighbors(k) & net.neighbors(k))
        ]
        if not inviters:
            raise InstanceError(f"reachable node {node} has no reachable inviter")
        parent[node] = min(inviters, key=lambda k: (reports.timestamp(k), k))

    children: dict[int, list[int]] = {}
    for node, par in parent.items():
        children.setdefault(par, []).append(node)
    for lst in children.values():
        lst.sort()

    level: dict[int, int] = {}
    queue = deque((c, 1) for c in children.get(net.seller, []))
    while queue:
        node, lvl = queue.popleft()
        level[node] = lvl
        for ch in children.get(node, []):
            queue.append((ch, lvl + 1))
    if len(level) != len(parent):
        raise InstanceError("timestamps induce a cyclic parent map")

    return ReferralTree(
        root=net.seller,
        parent=parent,
        children={k: tuple(v) for k, v in children.items()},
        level=level,
    )


def induced_subtree(net: DiffusionNetwork, reports: ReportProfile) -> ReferralTree:
    """Subtree of a tree-shaped network induced by the reported forwards.

    On a tree every reachable agent has a unique inviter, so this equals
    :func:`build_referral_tree` regardless of timestamps.
    """
    return build_referral_tree(net, reports)


def subtree_values(tree: ReferralTree, reports: ValuesLike) -> dict[int, float]:
    """Maximum reported valuation within each node's subtree (inclusive)."""
    value = _value_getter(reports)
    children = tree.children
    best: dict[int, float] = {}
    for node in tree.post_order():
        m = value(node)
        for ch in children.get(node, ()):
            if best[ch] > m:
                m = best[ch]
        best[node] = m
    return best


def subtree_max(tree: ReferralTree, node: int, reports: ValuesLike) -> float:
    """Maximum reported valuation over the subtree rooted at ``node``."""
    if node not in tree.parent and node != tree.root:
        raise InstanceError(f"node {node} is not in the tree")
    value = _value_getter(reports)
    return max(value(i) for i in tree.subtree(node))


@dataclass(frozen=True)
class Outcome:
    """Joint result of a mechanism: allocation probabilities and signed
    payments (positive means the agent pays)."""

    allocation: Mapping[int, float]
    payments: Mapping[int, float]
    seller_revenue: float
    winner: Optional[int] = None

    def __post_init__(self) -> None:
        total = 0.0
        for agent, prob in self.allocation.items():
            if prob < -EQ_TOL or prob > 1 + EQ_TOL:
                raise InstanceError(f"allocation[{agent}]={prob} outside [0,1]")
            total += prob
        if total > 1 + 1e-6:
            raise InstanceError(f"allocations sum to {total} > 1")

    def utility(self, agent: int, true_value: float) -> float:
        return true_value * self.allocation.get(agent, 0.0) - self.payments.get(agent, 0.0)

    def to_dict(self) -> dict:
        return {
            "winner": self.winner,
            "seller_revenue": self.seller_revenue,
            "allocation": {str(k): v for k, v in sorted(self.allocation.items())},
            "payments": {str(k): v for k, v in sorted(self.payments.items())},
        }


def unsold_outcome(agents: Iterable[int]) -> Outcome:
    zeros = {i: 0.0 for i in agents}
    return Outcome(allocation=dict(zeros), payments=dict(zeros),
                   seller_revenue=0.0, winner=None)


@dataclass(frozen=True)
class Instance:
    """A network plus a report profile, optionally with fixed exponents."""

    net: DiffusionNetwork
    reports: ReportProfile
    exponents: Optional[Mapping[int, float]] = None


def load_instance(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return instance_from_dict(raw)


def instance_from_dict(raw: Mapping) -> Instance:
    try:
        seller = int(raw.get("seller", SELLER))
        agents = frozenset(int(a["id"]) for a in raw["agents"])
        edges = [(int(e[0]), int(e[1])) for e in raw["edges"]]
        net = network_from_edges(edges, agents=agents, seller=seller)
        reports = {}
        for a in raw["agents"]:
            reports[int(a["id"])] = Report(
                value=float(a["valuation"]),
                neighbors=frozenset(int(x) for x in a["neighbors"]),
                timestamp=int(a.get("timestamp", 0)),
            )
        profile = ReportProfile(reports)
        exps = raw.get("exponents")
        if exps is not None:
            exps = {int(k): float(v) for k, v in exps.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance: {exc}") from exc
    return Instance(net=net, reports=profile, exponents=exps)


def instance_to_dict(inst: Instance) -> dict:
    net, profile = inst.net, inst.reports
    agents = []
    for i in net.sorted_agents():
        agents.append({
            "id": i,
            "valuation": profile.value(i),
            "neighbors": sorted(profile.neighbors(i)),
            "timestamp": profile.timestamp(i),
        })
    edges = []
    for src in sorted(net.out_edges):
        for dst in sorted(net.out_edges[src]):
            edges.append([src, dst])
    out = {"seller": net.seller, "agents": agents, "edges": edges}
    if inst.exponents is not None:
        out["exponents"] = {str(k): float(v) for k, v in sorted(inst.exponents.items())}
    return out


def save_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def random_tree_instance(n: int, rng: np.random.Generator,
                         value_high: float = 100.0) -> Instance:
    """Random rooted tree over ``n`` agents with uniform valuations.

    Node ``k``'s parent is drawn uniformly among the seller and the
    earlier agents, so depth and degree stay moderate.
    """
    if n < 1:
        raise InstanceError("need at least one agent")
    edges = []
    for k in range(1, n + 1):
        parent = SELLER if k == 1 else int(rng.integers(0, k))
        edges.append((parent, k))
    net = network_from_edges(edges, agents=range(1, n + 1))
    values = {i: float(rng.uniform(0.0, value_high)) for i in range(1, n + 1)}
    return Instance(net=net, reports=truthful_profile(net, values))
