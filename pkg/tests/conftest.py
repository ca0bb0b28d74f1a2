"""Shared fixtures: independent reference oracles and instance generators.

The reference implementations here deliberately avoid the package's own
closed forms — payments come from pointwise allocation-curve quadrature,
welfare from grid enumeration, ranks from explicit cut enumeration — so a
bug in the production path cannot hide in its own mirror.
"""

import itertools

import networkx as nx
import numpy as np
import pytest

from credmarket.mechanisms import edmonds_greedy
from credmarket.polymatroid import TableOracle

QUADRATURE_POINTS = 10_000
GRID_STEP = 0.25


# --------------------------------------------------------------------------
# Reference oracle 1: brute-force node-cut enumeration on a capacity DAG


def bruteforce_cut_rank(dag, subset):
    """f(S) as the minimum node cut separating S's leaves from the sink.

    Enumerates every node subset; a candidate cut counts if removing it
    disconnects each of the subset's leaf nodes from the sink. Exponential
    and honest — only for small graphs.
    """
    subset = set(subset)
    if not subset:
        return 0.0
    g = nx.DiGraph(dag.edges)
    g.add_nodes_from(dag.nodes)
    leaves = {dag.leaves[a] for a in subset}
    best = float("inf")
    nodes = list(dag.nodes)
    for r in range(len(nodes) + 1):
        for cut in itertools.combinations(nodes, r):
            cut_set = set(cut)
            cap = sum(dag.node_capacity.get(v, 0.0) for v in cut_set)
            if cap >= best:
                continue
            h = g.subgraph([v for v in nodes if v not in cut_set])
            blocked = all(
                leaf in cut_set
                or dag.sink in cut_set
                or (leaf not in h or dag.sink not in h)
                or not nx.has_path(h, leaf, dag.sink)
                for leaf in leaves
            )
            if blocked:
                best = cap
    return best


# --------------------------------------------------------------------------
# Reference oracle 2: payment by dense-grid quadrature of the bid-axis
# allocation curve (pointwise greedy reruns; no breakpoint integral)


def allocation_at(oracle, bids, agent, z):
    """The agent's greedy allocation when its bid is moved to z."""
    probe = list(bids)
    probe[agent] = z
    alloc, _ = edmonds_greedy(oracle, probe)
    return alloc[agent]


def quadrature_payment(oracle, bids, agent, n_points=QUADRATURE_POINTS):
    """Threshold payment p_i = b_i x_i - integral of x_i(z) dz over [0, b_i].

    The grid is the uniform n-point lattice refined at opponent bid levels
    (the only places the piecewise-constant curve can jump); each cell is
    evaluated at its midpoint, making the quadrature exact up to float
    error while still being a pointwise, implementation-blind probe.
    """
    b_i = bids[agent]
    if b_i <= 0:
        return 0.0
    knots = {z for j, z in enumerate(bids) if j != agent and 0.0 < z < b_i}
    grid = np.union1d(np.linspace(0.0, b_i, n_points + 1), sorted(knots))
    area = 0.0
    for lo, hi in zip(grid[:-1], grid[1:]):
        area += allocation_at(oracle, bids, agent, (lo + hi) / 2.0) * (hi - lo)
    x_i = allocation_at(oracle, bids, agent, b_i)
    return b_i * x_i - area


def vcg_externality(oracle, bids, agent):
    """Payment as the welfare externality on the other agents."""
    alloc, _ = edmonds_greedy(oracle, bids)
    others_now = sum(bids[j] * alloc[j] for j in alloc if j != agent)
    absent = list(bids)
    absent[agent] = 0.0
    alloc_wo, _ = edmonds_greedy(oracle, absent)
    others_best = sum(absent[j] * alloc_wo[j] for j in alloc_wo if j != agent)
    return others_best - others_now


# --------------------------------------------------------------------------
# Reference oracle 3: welfare by grid enumeration of the feasible region


def bruteforce_welfare(oracle, bids, step=GRID_STEP):
    """max sum(b_i x_i) over the grid {0, step, ...}^n inside the polytope.

    Feasibility is checked against every subset constraint x(S) <= f(S).
    Vectorized but still exponential; keep n <= 5 and caps <= 4.
    """
    n = oracle.n
    axes = [np.arange(0.0, oracle.rank({i}) + step / 2, step) for i in range(n)]
    mesh = np.stack(
        [m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1
    )
    subsets = []
    caps = []
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            mask = np.zeros(n)
            mask[list(combo)] = 1.0
            subsets.append(mask)
            caps.append(oracle.rank(set(combo)))
    loads = mesh @ np.array(subsets).T
    feasible = (loads <= np.array(caps) + 1e-12).all(axis=1)
    values = mesh @ np.asarray(bids, dtype=float)
    return float(values[feasible].max())


# --------------------------------------------------------------------------
# Instance generators


def random_table_oracle(rng, n, cap_max=4):
    """Random integer-valued polymatroid on n agents via capped coverage:
    each agent owns a random item multiset; f(S) = min(sum of S's items
    clipped by shared item caps, ...) — built directly as a coverage rank,
    so monotone submodular integer by construction."""
    n_items = int(rng.integers(n, 2 * n + 1))
    item_cap = rng.integers(1, cap_max + 1, size=n_items)
    owns = rng.integers(0, 2, size=(n, n_items)).astype(bool)
    # give every agent at least one item
    for i in range(n):
        if not owns[i].any():
            owns[i, rng.integers(n_items)] = True
    table = {}
    for r in range(n + 1):
        for combo in itertools.combinations(range(n), r):
            joint = np.zeros(n_items)
            for i in combo:
                joint += owns[i]
            table[frozenset(combo)] = float(np.minimum(joint, item_cap).sum())
    # intersect with the per-agent demand box via truncation,
    # f'(S) = min_{T <= S} f(T) + c(S - T), which stays a polymatroid rank
    demand = rng.integers(1, cap_max + 1, size=n)
    truncated = {}
    for s in table:
        members = sorted(s)
        best = float("inf")
        for r in range(len(members) + 1):
            for t in itertools.combinations(members, r):
                rest = sum(demand[i] for i in s - set(t))
                best = min(best, table[frozenset(t)] + rest)
        truncated[s] = float(best)
    return TableOracle(n, truncated)


def random_bids(rng, n, lo=0.5, hi=10.0):
    return [float(b) for b in rng.uniform(lo, hi, size=n)]


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
