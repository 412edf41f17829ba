"""Revenue experiments on two-stage random trees.

Stage one draws a base tree the designer can see; stage two activates
its edges with per-node keep probabilities drawn as Beta(5,1), giving
the realized referral tree.  Valuations come from three normal classes
(means 100/70/50, common sigma, clamped at zero) whose assignment to
nodes is fixed per base tree.  The exponent schedule interpolates, via
``lambda``, between unit exponents and the log-ratio of the expected
first-level winner and runner-up means, applied to the expected
runner-up node only.  The sweep reports the paired percentage revenue
improvement of the scheduled auction over the unit-exponent baseline.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .mechanisms import run_lblev
from .network import SELLER, ReferralTree

logger = logging.getLogger(__name__)

CLASS_MEANS = (100.0, 70.0, 50.0)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    sigma: float
    lambdas: tuple[float, ...]
    outer: int
    inner: int
    seed: int = 42
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError("need n >= 3 for the three valuation classes")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if any(l < 0 or l > 1 for l in self.lambdas):
            raise ValueError("lambda values must lie in [0, 1]")
        if self.outer < 1 or self.inner < 1:
            raise ValueError("trial counts must be >= 1")


@dataclass(frozen=True)
class BaseTree:
    """Stage-one tree over agents 1..n rooted at the seller."""

    n: int
    parent: Mapping[int, int]
    children: Mapping[int, tuple[int, ...]]

    def first_level(self) -> tuple[int, ...]:
        return self.children.get(SELLER, ())


def generate_base_tree(n: int, rng: np.random.Generator) -> BaseTree:
    """Level-order construction: each parent draws a children-set size
    uniformly in [1, floor(n/3)] from the remaining agents; the last
    parent absorbs any shortfall."""
    if n < 1:
        raise ValueError("need at least one agent")
    pool = [int(a) for a in rng.permutation(np.arange(1, n + 1))]
    cap = max(1, n // 3)
    queue = [SELLER]
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {}
    head = 0
    while pool:
        node = queue[head]
        head += 1
        size = int(rng.integers(1, cap + 1))
        kids = pool[:size]
        pool = pool[size:]
        children[node] = kids
        for k in kids:
            parent[k] = node
            queue.append(k)
    return BaseTree(n=n, parent=parent,
                    children={k: tuple(v) for k, v in children.items()})


def activate_edges(base: BaseTree, rng: np.random.Generator) -> ReferralTree:
    """Keep each child edge independently with its node's Beta(5,1) draw
    (inverse-cdf form u**(1/5)); return the seller-reachable subtree."""
    parent: dict[int, int] = {}
    children: dict[int, tuple[int, ...]] = {}
    level: dict[int, int] = {}
    frontier = [(SELLER, 0)]
    while frontier:
        node, lvl = frontier.pop(0)
        kids = base.children.get(node, ())
        if not kids:
            continue
        keep_prob = float(rng.uniform()) ** 0.2
        kept = tuple(k for k in kids if rng.uniform() < keep_prob)
        if kept:
            children[node] = kept
        for k in kept:
            parent[k] = node
            level[k] = lvl + 1
            frontier.append((k, lvl + 1))
    return ReferralTree(root=SELLER, parent=parent, children=children, level=level)


def assign_class_means(n: int, rng: np.random.Generator) -> dict[int, float]:
    """One high-mean agent, floor((n-1)/2) medium, the rest low, mapped to
    node ids uniformly at random."""
    high, medium, low = CLASS_MEANS
    means = [high] + [medium] * ((n - 1) // 2) + [low] * (n - 1 - (n - 1) // 2)
    shuffled = rng.permutation(np.asarray(means))
    return {i + 1: float(shuffled[i]) for i in range(n)}


def draw_valuations(means: Mapping[int, float], sigma: float,
                    rng: np.random.Generator) -> dict[int, float]:
    return {i: max(0.0, float(rng.normal(mu, sigma))) for i, mu in sorted(means.items())}


def sample_valuations(n: int, sigma: float, rng: np.random.Generator) -> dict[int, float]:
    """Class assignment plus normal draws in one step."""
    return draw_valuations(assign_class_means(n, rng), sigma, rng)


def _base_subtree_best(base: BaseTree, means: Mapping[int, float]) -> dict[int, float]:
    best: dict[int, float] = {}

    def walk(node: int) -> float:
        m = means[node]
        for child in base.children.get(node, ()):
            m = max(m, walk(child))
        best[node] = m
        return m

    for top in base.first_level():
        walk(top)
    return best


def exponent_schedule(base: BaseTree, means: Mapping[int, float],
                      lam: float) -> dict[int, float]:
    """Exponents fixed from the prior alone: the expected first-level
    runner-up node gets (1-lambda) + lambda * log(win)/log(runner-up),
    everyone else gets one."""
    exponents = {i: 1.0 for i in range(1, base.n + 1)}
    first = base.first_level()
    if len(first) < 2:
        logger.warning("fewer than two first-level subtrees; schedule is all ones")
        return exponents
    best = _base_subtree_best(base, means)
    ranked = sorted(first, key=lambda i: (-best[i], i))
    w_win = best[ranked[0]]
    w_run = best[ranked[1]]
    if w_win <= 1.0 or w_run <= 1.0:
        return exponents
    exponents[ranked[1]] = (1.0 - lam) + lam * (math.log(w_win) / math.log(w_run))
    return exponents


@dataclass(frozen=True)
class SweepRow:
    lam: float
    mean_pct: float
    stderr: float
    used: int
    excluded: int


def outer_sample(config: ExperimentConfig, outer: int) -> tuple[BaseTree, dict[int, float]]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, outer]))
    base = generate_base_tree(config.n, rng)
    means = assign_class_means(config.n, rng)
    return base, means


def inner_sample(config: ExperimentConfig, outer: int,
                 inner: int) -> tuple[ReferralTree, dict[int, float]]:
    """One stage-two draw: activated tree plus valuations.  Independent of
    lambda, so every lambda sees identical draws."""
    base, means = outer_sample(config, outer)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, outer, inner]))
    tree = activate_edges(base, rng)
    values = draw_valuations(means, config.sigma, rng)
    return tree, values


def _sweep_outer(config: ExperimentConfig, outer: int
                 ) -> tuple[dict[float, list[float]], dict[float, int]]:
    base, means = outer_sample(config, outer)
    if len(base.first_level()) < 2:
        # degenerate prior: the schedule is unit for every lambda
        unit = {i: 1.0 for i in range(1, base.n + 1)}
        schedules = {lam: unit for lam in config.lambdas}
    else:
        schedules = {lam: exponent_schedule(base, means, lam) for lam in config.lambdas}
    pcts: dict[float, list[float]] = {lam: [] for lam in config.lambdas}
    excluded: dict[float, int] = {lam: 0 for lam in config.lambdas}
    for inner in range(config.inner):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, outer, inner]))
        tree = activate_edges(base, rng)
        values = draw_valuations(means, config.sigma, rng)
        baseline, _ = run_lblev(tree, values, {})
        r0 = baseline.seller_revenue
        for lam in config.lambdas:
            scheduled, _ = run_lblev(tree, values, schedules[lam])
            if r0 > 0:
                pcts[lam].append(100.0 * (scheduled.seller_revenue - r0) / r0)
            else:
                excluded[lam] += 1
    return pcts, excluded


def sweep_lambda(config: ExperimentConfig) -> list[SweepRow]:
    """Paired revenue comparison over the lambda grid.

    Every (outer, inner) draw is keyed by derived seeds, so the same
    realized tree and valuations feed both mechanisms and every lambda;
    at lambda zero the schedule is exactly unit and the improvement is
    exactly zero.  Draws with zero baseline revenue are excluded and
    counted.
    """
    pcts: dict[float, list[float]] = {lam: [] for lam in config.lambdas}
    excluded: dict[float, int] = {lam: 0 for lam in config.lambdas}
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_sweep_outer, [config] * config.outer,
                                    range(config.outer)))
    else:
        results = [_sweep_outer(config, outer) for outer in range(config.outer)]
    for part_pcts, part_excluded in results:
        for lam in config.lambdas:
            pcts[lam].extend(part_pcts[lam])
            excluded[lam] += part_excluded[lam]
    rows = []
    for lam in config.lambdas:
        vals = np.asarray(pcts[lam])
        if vals.size == 0:
            rows.append(SweepRow(lam, 0.0, 0.0, 0, excluded[lam]))
            continue
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        rows.append(SweepRow(lam, float(vals.mean()), se, int(vals.size), excluded[lam]))
    return rows


def grid_search_lambda_star(n: int, sigma: float, config: ExperimentConfig) -> float:
    """Best lambda on the grid by mean improvement; ties keep the smaller
    lambda, so a flat landscape returns the unit-exponent baseline."""
    cfg = replace(config, n=n, sigma=sigma)
    rows = sweep_lambda(cfg)
    best = rows[0]
    for row in rows[1:]:
        if row.mean_pct > best.mean_pct:
            best = row
    return best.lam


def write_sweep_csv(rows: Sequence[SweepRow], config: ExperimentConfig, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["lambda", "n", "sigma", "outer", "inner",
                     "mean_pct", "stderr", "seed"])
    for row in rows:
        writer.writerow([f"{row.lam:g}", config.n, f"{config.sigma:g}",
                         config.outer, config.inner,
                         repr(row.mean_pct), repr(row.stderr), config.seed])
