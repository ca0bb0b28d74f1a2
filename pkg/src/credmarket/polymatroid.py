"""Rank oracles over capacity networks, non-modularity analysis, topology
generators, the encapsulation quotient, and the token-matroid construction.

The central object is a polymatroid rank function f: 2^E -> R>=0 over an
agent ground set E = {0..n-1}: f(S) is the maximum joint service rate any
subset S of agents can obtain through the capacity network. Four evaluators
are provided (explicit table, tree min-cut, series-parallel composition,
generic max-flow with node capacities); they are interchangeable and are
cross-checked against each other in the test suite.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    FaithfulnessError,
    Level2RegimeError,
    MatroidBoundaryError,
    StructureError,
)

RANK_TOL = 1e-9  # float comparison tolerance for rank values
MEMO_MAX_AGENTS = 32  # bitmask memoisation only below this ground-set size


# --------------------------------------------------------------------------
# Ground set and capacity DAG
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundSet:
    """Ordered agent identifiers 0..n-1."""

    agents: tuple

    def __post_init__(self):
        if len(self.agents) < 1:
            raise ConfigError("ground set must contain at least one agent")
        if list(self.agents) != list(range(len(self.agents))):
            raise ConfigError("agent identifiers must be 0..n-1 in order")

    @property
    def n(self):
        return len(self.agents)


TOPOLOGY_CLASSES = ("single_edge", "series", "parallel", "tree", "sp", "general")


@dataclass
class CapacityDag:
    """Service-dependency DAG with node capacities.

    Flow originates at per-agent leaf nodes and drains to `sink`; every node
    constrains the throughput crossing it to `node_capacity[node]`.
    """

    nodes: list
    node_capacity: dict
    edges: list
    leaves: dict  # agent id -> leaf node id
    sink: str
    topology_class: str
    sp_tree: object = None  # series-parallel grammar when the class is sp

    def __post_init__(self):
        if self.topology_class not in TOPOLOGY_CLASSES:
            raise ConfigError(f"unknown topology class {self.topology_class!r}")
        if any(self.node_capacity.get(v, 0.0) < 0 for v in self.nodes):
            raise ConfigError("node capacities must be nonnegative")
        g = nx.DiGraph(self.edges)
        g.add_nodes_from(self.nodes)
        if not nx.is_directed_acyclic_graph(g):
            raise StructureError("capacity graph contains a cycle")
        for agent, leaf in self.leaves.items():
            if leaf != self.sink and not nx.has_path(g, leaf, self.sink):
                raise StructureError(f"leaf of agent {agent} cannot reach the sink")
        if self.topology_class == "tree":
            self._check_tree(g)
        if self.topology_class == "sp" and self.sp_tree is None:
            if not _reduces_series_parallel(self):
                raise StructureError("graph fails series-parallel recognition")

    def _check_tree(self, g):
        und = g.to_undirected()
        if g.number_of_edges() != len(self.nodes) - 1 or not nx.is_connected(und):
            raise StructureError("tree topology must be a connected tree")
        for v in self.nodes:
            if v != self.sink and g.out_degree(v) != 1:
                raise StructureError("tree nodes must have a unique edge toward the sink")

    @property
    def n_agents(self):
        return len(self.leaves)


def _reduces_series_parallel(dag):
    # Classic two-terminal reduction: join all leaves to a virtual source,
    # then alternately merge parallel edges and contract degree-2 internal
    # vertices. SP iff the multigraph collapses to a single source-sink edge.
    g = nx.MultiGraph()
    g.add_nodes_from(dag.nodes)
    g.add_edges_from((u, v) for u, v in dag.edges)
    src = "__src__"
    for leaf in set(dag.leaves.values()):
        g.add_edge(src, leaf)
    changed = True
    while changed:
        changed = False
        for u, v in list(g.edges()):
            if g.number_of_edges(u, v) > 1:
                while g.number_of_edges(u, v) > 1:
                    g.remove_edge(u, v)
                changed = True
        for v in list(g.nodes()):
            if v in (src, dag.sink) or g.degree(v) != 2:
                continue
            nbrs = [w for w in g.neighbors(v) if w != v]
            if len(nbrs) == 2:
                g.remove_node(v)
                g.add_edge(nbrs[0], nbrs[1])
                changed = True
    return g.number_of_nodes() == 2 and g.number_of_edges(src, dag.sink) == 1


# --------------------------------------------------------------------------
# Series-parallel grammar (agents sit on leaf edges; links are pure capacity)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SPLeaf:
    agent: int
    cap: float


@dataclass(frozen=True)
class SPSeries:
    child: object
    link_cap: float


@dataclass(frozen=True)
class SPParallel:
    children: tuple


def sp_rank(node, subset):
    """series = min with the link, parallel = sum over branches."""
    if isinstance(node, SPLeaf):
        return node.cap if node.agent in subset else 0.0
    if isinstance(node, SPSeries):
        return min(sp_rank(node.child, subset), node.link_cap)
    if isinstance(node, SPParallel):
        return sum(sp_rank(c, subset) for c in node.children)
    raise StructureError(f"not an SP grammar node: {node!r}")


def sp_agents(node):
    if isinstance(node, SPLeaf):
        return [node.agent]
    if isinstance(node, SPSeries):
        return sp_agents(node.child)
    return [a for c in node.children for a in sp_agents(c)]


def _sp_describe(node):
    if isinstance(node, SPLeaf):
        return ["leaf", node.agent, node.cap]
    if isinstance(node, SPSeries):
        return ["series", _sp_describe(node.child), node.link_cap]
    return ["parallel", [_sp_describe(c) for c in node.children]]


def _sp_parse(obj):
    kind = obj[0]
    if kind == "leaf":
        return SPLeaf(int(obj[1]), float(obj[2]))
    if kind == "series":
        return SPSeries(_sp_parse(obj[1]), float(obj[2]))
    if kind == "parallel":
        return SPParallel(tuple(_sp_parse(c) for c in obj[1]))
    raise StructureError(f"bad SP node kind {kind!r}")


def sp_to_dag(root):
    """Materialise the SP grammar as an explicit CapacityDag (for cross-checks)."""
    nodes, caps, edges, leaves = [], {}, [], {}
    counter = itertools.count()

    def fresh(prefix, cap):
        name = f"{prefix}{next(counter)}"
        nodes.append(name)
        caps[name] = cap
        return name

    def build(node):
        # returns the output node of the subnetwork
        if isinstance(node, SPLeaf):
            leaf = fresh("leaf", node.cap)
            leaves[node.agent] = leaf
            return leaf
        if isinstance(node, SPSeries):
            out = build(node.child)
            link = fresh("link", node.link_cap)
            edges.append((out, link))
            return link
        join = fresh("join", math.inf)
        for c in node.children:
            edges.append((build(c), join))
        return join

    top = build(root)
    sink = fresh("sink", math.inf)
    edges.append((top, sink))
    return CapacityDag(nodes, caps, edges, leaves, sink, "sp", sp_tree=root)


def random_sp_instance(n_agents, seed):
    """Random series-parallel network with one leaf edge per agent.

    Integer capacities in 1..4 keep the max-flow cross-check exact.
    """
    rng = np.random.default_rng(seed)

    def build(agents):
        if len(agents) == 1:
            node = SPLeaf(agents[0], int(rng.integers(1, 5)))
        else:
            cut = int(rng.integers(1, len(agents)))
            parts = [build(agents[:cut]), build(agents[cut:])]
            node = SPParallel(tuple(parts))
        if rng.random() < 0.5:
            node = SPSeries(node, int(rng.integers(1, 5)))
        return node

    root = build(list(range(n_agents)))
    return sp_to_dag(root)


# --------------------------------------------------------------------------
# Rank oracles
# --------------------------------------------------------------------------


class RankOracle:
    """Base class: memoised, immutable rank function over GroundSet.

    Rank memoisation is a plain dict keyed by subset bitmask; in CPython the
    GIL makes concurrent reads safe, and oracles are never mutated after
    construction.
    """

    evaluator = None

    def __init__(self, n_agents):
        self.ground = GroundSet(tuple(range(n_agents)))
        self._memo = {} if n_agents <= MEMO_MAX_AGENTS else None

    @property
    def n(self):
        return self.ground.n

    def rank(self, subset):
        s = frozenset(subset)
        for a in s:
            if not isinstance(a, (int, np.integer)) or not 0 <= a < self.n:
                raise DomainError(f"agent id {a!r} is not in the ground set")
        if self._memo is None:
            return self._rank(s)
        key = 0
        for a in s:
            key |= 1 << a
        val = self._memo.get(key)
        if val is None:
            val = self._rank(s)
            self._memo[key] = val
        return val

    def _rank(self, subset):
        raise NotImplementedError

    def describe(self):
        """Canonical JSON-able description used for commitment digests."""
        raise NotImplementedError

    def digest(self):
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def clone_substitute(self, position_agent):
        return SubstituteCloneOracle(self, position_agent)


class TableOracle(RankOracle):
    """Explicit value table over all subsets."""

    evaluator = "explicit_table"

    def __init__(self, n_agents, table):
        super().__init__(n_agents)
        self._table = {}
        for key, val in table.items():
            self._table[frozenset(key)] = float(val)
        missing = [
            s
            for r in range(n_agents + 1)
            for s in itertools.combinations(range(n_agents), r)
            if frozenset(s) not in self._table
        ]
        if missing:
            raise ConfigError(f"table is missing {len(missing)} subsets, e.g. {missing[0]}")

    def _rank(self, subset):
        return self._table[subset]

    def describe(self):
        items = sorted((sorted(k), v) for k, v in self._table.items())
        return {"evaluator": self.evaluator, "table": items}


class TreeCutOracle(RankOracle):
    """Recursive min-cut on a capacity tree rooted at the sink."""

    evaluator = "tree_cut"

    def __init__(self, dag):
        super().__init__(dag.n_agents)
        self.dag = dag
        self._children = {v: [] for v in dag.nodes}
        for u, v in dag.edges:
            self._children[v].append(u)
        self._leaf_owner = {}
        for agent, leaf in dag.leaves.items():
            if leaf in self._leaf_owner:
                raise StructureError("tree evaluator needs one agent per leaf node")
            self._leaf_owner[leaf] = agent

    def _rank(self, subset):
        cap = self.dag.node_capacity

        def value(v):
            kids = self._children[v]
            if not kids:
                owner = self._leaf_owner.get(v)
                return cap[v] if owner in subset else 0.0
            return min(cap[v], sum(value(c) for c in kids))

        return value(self.dag.sink)

    def describe(self):
        return {"evaluator": self.evaluator, "dag": dag_to_obj(self.dag)}


class SPOracle(RankOracle):
    evaluator = "sp_compositional"

    def __init__(self, dag):
        if dag.sp_tree is None:
            raise ConfigError("SP evaluator needs the series-parallel grammar")
        super().__init__(dag.n_agents)
        self.dag = dag
        self.root = dag.sp_tree

    def _rank(self, subset):
        return sp_rank(self.root, subset)

    def describe(self):
        return {"evaluator": self.evaluator, "sp": _sp_describe(self.root)}


class MaxflowOracle(RankOracle):
    """Generic max-flow evaluator; node capacities split into edge capacities."""

    evaluator = "maxflow"

    def __init__(self, dag):
        super().__init__(dag.n_agents)
        self.dag = dag

    def _split_graph(self):
        g = nx.DiGraph()
        for v in self.dag.nodes:
            c = self.dag.node_capacity[v]
            if math.isinf(c):
                g.add_edge((v, "in"), (v, "out"))
            else:
                g.add_edge((v, "in"), (v, "out"), capacity=c)
        for u, v in self.dag.edges:
            g.add_edge((u, "out"), (v, "in"))
        return g

    def _rank(self, subset):
        if not subset:
            return 0.0
        g = self._split_graph()
        for agent in subset:
            g.add_edge("__src__", (self.dag.leaves[agent], "in"))
        value, _ = nx.maximum_flow(g, "__src__", (self.dag.sink, "out"))
        return float(value)

    def describe(self):
        return {"evaluator": self.evaluator, "dag": dag_to_obj(self.dag)}


class LaminarOracle(RankOracle):
    """Two-level tree rank in closed form.

    f(S) = min(root_cap, sum_g min(cap_g, sum_{i in S, group(i)=g} demand_i));
    this is the tree-cut computation on a leaves->groups->root tree, kept in
    closed form because the simulator evaluates it millions of times.
    """

    evaluator = "tree_cut"

    def __init__(self, demands, group_of, group_caps, root_cap=math.inf):
        demands = np.asarray(demands, dtype=float)
        super().__init__(len(demands))
        self.demands = demands
        self.group_of = np.asarray(group_of, dtype=int)
        self.group_caps = np.asarray(group_caps, dtype=float)
        self.root_cap = float(root_cap)

    def _rank(self, subset):
        if not subset:
            return 0.0
        idx = np.fromiter(subset, dtype=int)
        loads = np.bincount(
            self.group_of[idx], weights=self.demands[idx], minlength=len(self.group_caps)
        )
        return float(min(self.root_cap, np.minimum(loads, self.group_caps).sum()))

    def describe(self):
        return {
            "evaluator": self.evaluator,
            "laminar": {
                "demands": self.demands.tolist(),
                "group_of": self.group_of.tolist(),
                "group_caps": self.group_caps.tolist(),
                "root_cap": self.root_cap,
            },
        }

    def to_dag(self):
        nodes, caps, edges, leaves = [], {}, [], {}
        for g, c in enumerate(self.group_caps):
            nodes.append(f"g{g}")
            caps[f"g{g}"] = float(c)
        nodes.append("root")
        caps["root"] = self.root_cap
        for i in range(self.n):
            leaf = f"leaf{i}"
            nodes.append(leaf)
            caps[leaf] = float(self.demands[i])
            leaves[i] = leaf
            edges.append((leaf, f"g{self.group_of[i]}"))
        for g in range(len(self.group_caps)):
            edges.append((f"g{g}", "root"))
        return CapacityDag(nodes, caps, edges, leaves, "root", "tree")


class SubstituteCloneOracle(RankOracle):
    """Extend the ground set with a substitute copy of one agent's position.

    The clone occupies the same capacity slot as `position_agent`: with the
    clone in S the rank is evaluated as if position_agent were present, so
    clone and original together add nothing beyond the original alone. This
    is the phantom-participant model: one more bidder contesting an existing
    slot, never new capacity.
    """

    def __init__(self, base, position_agent):
        if not 0 <= position_agent < base.n:
            raise DomainError(f"agent id {position_agent} is not in the ground set")
        self.base = base
        self.position_agent = position_agent
        self.clone_id = base.n
        self.evaluator = base.evaluator
        super().__init__(base.n + 1)

    def _rank(self, subset):
        real = set(a for a in subset if a != self.clone_id)
        if self.clone_id in subset:
            real.add(self.position_agent)
        return self.base.rank(real)

    def describe(self):
        return {
            "evaluator": "substitute_clone",
            "position_agent": self.position_agent,
            "base": self.base.describe(),
        }


def rank(oracle, subset):
    """f(subset). Unknown agent ids raise DomainError."""
    return oracle.rank(subset)


def make_oracle(dag, evaluator=None):
    """Pick the natural evaluator for a generated topology (overridable)."""
    if evaluator is None:
        if dag.sp_tree is not None:
            evaluator = "sp_compositional"
        elif dag.topology_class in ("single_edge", "series", "parallel", "tree"):
            evaluator = "tree_cut"
        else:
            evaluator = "maxflow"
    if evaluator == "tree_cut":
        return TreeCutOracle(dag)
    if evaluator == "sp_compositional":
        return SPOracle(dag)
    if evaluator == "maxflow":
        return MaxflowOracle(dag)
    raise ConfigError(f"unknown evaluator {evaluator!r}")


# --------------------------------------------------------------------------
# Non-modularity profile
# --------------------------------------------------------------------------


@dataclass
class NonModularityProfile:
    pairs: list  # (i, j, gamma_ij) with gamma_ij > 0 only
    Gamma: float
    sharing_pair_count: int


def pair_gap(oracle, i, j):
    """gamma_ij = f({i}) + f({j}) - f({i,j}) >= 0."""
    return oracle.rank({i}) + oracle.rank({j}) - oracle.rank({i, j})


def nonmodularity_profile(oracle):
    if oracle.n < 2:
        raise DomainError("non-modularity profile needs at least two agents")
    pairs = []
    for i, j in itertools.combinations(range(oracle.n), 2):
        g = pair_gap(oracle, i, j)
        if g > RANK_TOL:
            pairs.append((i, j, g))
    return NonModularityProfile(
        pairs=pairs, Gamma=sum(g for _, _, g in pairs), sharing_pair_count=len(pairs)
    )


# --------------------------------------------------------------------------
# Topology generators (the witness instances of the scaling bounds)
# --------------------------------------------------------------------------


def generate_topology(topology_class, n=None, d=None, k=None, m=None, h=None, beta=None, seed=None):
    """Build the named witness instance as a CapacityDag."""
    cls = "general" if topology_class == "entangled" else topology_class
    if cls == "single_edge":
        n = 2 if n is None else n
        if n < 2:
            raise ConfigError("single_edge needs n >= 2")
        return _chain_dag(n, depth=1, cls="single_edge")
    if cls == "series":
        n = 2 if n is None else n
        if d is None or d < 1:
            raise ConfigError("series needs chain length d >= 1")
        return _chain_dag(n, depth=d, cls="series")
    if cls == "parallel":
        if k is None or k < 2:
            raise ConfigError("parallel needs k >= 2 paths")
        n = k if n is None else n
        if n < k:
            raise ConfigError("parallel needs at least one agent per path")
        return _parallel_dag(n, k)
    if cls == "tree":
        if h is None or h < 1 or (beta or 2) < 2:
            raise ConfigError("tree needs height h >= 1 and branching beta >= 2")
        return _tree_dag(h, beta or 2)
    if cls == "sp":
        n = 2 if n is None else n
        if seed is not None:
            return random_sp_instance(n, seed)
        return _sp_chain_dag(n)
    if cls == "general":
        n = 4 if n is None else n
        if n < 2:
            raise ConfigError("entangled witness needs n >= 2")
        return _entangled_dag(n)
    raise ConfigError(f"unknown topology class {topology_class!r}")


def _chain_dag(n, depth, cls):
    # n unit-capacity agent leaves feeding a shared chain of `depth` unit nodes
    nodes, caps, edges, leaves = [], {}, [], {}
    for i in range(n):
        leaf = f"leaf{i}"
        nodes.append(leaf)
        caps[leaf] = 1.0
        leaves[i] = leaf
        edges.append((leaf, "v1"))
    for r in range(1, depth + 1):
        nodes.append(f"v{r}")
        caps[f"v{r}"] = 1.0
        if r > 1:
            edges.append((f"v{r - 1}", f"v{r}"))
    return CapacityDag(nodes, caps, edges, leaves, f"v{depth}", cls)


def _parallel_dag(n, k):
    # k disjoint unit paths; agents assigned round-robin to paths
    nodes, caps, edges, leaves = [], {}, [], {}
    nodes.append("sink")
    caps["sink"] = math.inf
    for p in range(k):
        path = f"p{p}"
        nodes.append(path)
        caps[path] = 1.0
        edges.append((path, "sink"))
    for i in range(n):
        leaf = f"leaf{i}"
        nodes.append(leaf)
        caps[leaf] = 1.0
        leaves[i] = leaf
        edges.append((leaf, f"p{i % k}"))
    return CapacityDag(nodes, caps, edges, leaves, "sink", "parallel")


def _tree_dag(h, beta):
    # complete beta-ary tree of height h, unit capacities, one agent per leaf
    nodes, caps, edges, leaves = [], {}, [], {}

    def grow(name, depth):
        nodes.append(name)
        caps[name] = 1.0
        if depth == h:
            agent = len(leaves)
            leaves[agent] = name
            return
        for b in range(beta):
            child = f"{name}.{b}"
            grow(child, depth + 1)
            edges.append((child, name))

    grow("r", 0)
    return CapacityDag(nodes, caps, edges, leaves, "r", "tree")


def _sp_chain_dag(n):
    # n unit leaves in parallel followed by a two-link unit chain
    root = SPSeries(
        SPSeries(SPParallel(tuple(SPLeaf(i, 1.0) for i in range(n))), 1.0), 1.0
    )
    return sp_to_dag(root)


def _entangled_dag(n):
    # one unit pair node per agent pair; private access links of capacity n-1
    # keep every pair contest a function of that pair's bids alone
    nodes, caps, edges, leaves = [], {}, [], {}
    nodes.append("sink")
    caps["sink"] = math.inf
    for i in range(n):
        leaf = f"leaf{i}"
        nodes.append(leaf)
        caps[leaf] = float(n - 1)
        leaves[i] = leaf
    for i, j in itertools.combinations(range(n), 2):
        pnode = f"e{i}_{j}"
        nodes.append(pnode)
        caps[pnode] = 1.0
        edges.append((f"leaf{i}", pnode))
        edges.append((f"leaf{j}", pnode))
        edges.append((pnode, "sink"))
    return CapacityDag(nodes, caps, edges, leaves, "sink", "general")


class EntangledTable(TableOracle):
    """Closed-form rank of the fully entangled witness.

    A subset S covers every pair touching S: f(S) = C(n,2) - C(n-|S|,2).
    Cross-checked against the max-flow evaluator on the explicit DAG.
    """

    def __init__(self, n):
        table = {}
        for r in range(n + 1):
            val = math.comb(n, 2) - math.comb(n - r, 2)
            for s in itertools.combinations(range(n), r):
                table[s] = float(val)
        super().__init__(n, table)


def entangled_oracle(n):
    return EntangledTable(n)


# --------------------------------------------------------------------------
# Axiom verification
# --------------------------------------------------------------------------

EXHAUSTIVE_AXIOM_LIMIT = 12


@dataclass
class AxiomVerdict:
    ok: bool
    violations: list = field(default_factory=list)


def verify_axioms(oracle, n_samples=2000, seed=0):
    """Check f(empty)=0, monotonicity, submodularity.

    Exhaustive for n <= 12 (local exchange characterisation); random triple
    sampling beyond that. Violations come back with witness subsets.
    """
    n = oracle.n
    violations = []
    if abs(oracle.rank(())) > RANK_TOL:
        violations.append({"kind": "normalisation", "subset": (), "value": oracle.rank(())})

    def subset_of(mask):
        return frozenset(i for i in range(n) if mask >> i & 1)

    if n <= EXHAUSTIVE_AXIOM_LIMIT:
        vals = [oracle.rank(subset_of(mask)) for mask in range(1 << n)]
        for mask in range(1 << n):
            for i in range(n):
                if mask >> i & 1:
                    continue
                if vals[mask | 1 << i] < vals[mask] - RANK_TOL:
                    violations.append(
                        {"kind": "monotonicity", "subset": tuple(sorted(subset_of(mask))), "element": i}
                    )
                for j in range(i + 1, n):
                    if mask >> j & 1:
                        continue
                    lhs = vals[mask | 1 << i] + vals[mask | 1 << j]
                    rhs = vals[mask | 1 << i | 1 << j] + vals[mask]
                    if lhs < rhs - RANK_TOL:
                        violations.append(
                            {
                                "kind": "submodularity",
                                "subset": tuple(sorted(subset_of(mask))),
                                "pair": (i, j),
                            }
                        )
    else:
        rng = np.random.default_rng(seed)
        for _ in range(n_samples):
            mask = int(rng.integers(0, 1 << min(n, 62)))
            s = frozenset(i for i in range(n) if mask >> i & 1)
            i, j = rng.choice(n, size=2, replace=False)
            i, j = int(i), int(j)
            s = s - {i, j}
            fs = oracle.rank(s)
            fi = oracle.rank(s | {i})
            fj = oracle.rank(s | {j})
            fij = oracle.rank(s | {i, j})
            if fi < fs - RANK_TOL or fj < fs - RANK_TOL:
                violations.append({"kind": "monotonicity", "subset": tuple(sorted(s)), "element": i if fi < fs else j})
            if fi + fj < fij + fs - RANK_TOL:
                violations.append({"kind": "submodularity", "subset": tuple(sorted(s)), "pair": (i, j)})
    return AxiomVerdict(ok=not violations, violations=violations)


# --------------------------------------------------------------------------
# Encapsulation quotient
# --------------------------------------------------------------------------


@dataclass
class QuotientGraph:
    clusters: dict  # cluster id -> list of original nodes
    slice_capacity: dict  # cluster id -> max-flow of its sub-DAG
    quotient: CapacityDag
    leaf_map: dict  # agent -> cluster id


def _subdag_capacity(dag, cluster_nodes):
    """Max-flow through the induced sub-DAG from its entry side to its exit side."""
    inside = set(cluster_nodes)
    g = nx.DiGraph()
    for v in cluster_nodes:
        c = dag.node_capacity[v]
        if math.isinf(c):
            g.add_edge((v, "in"), (v, "out"))
        else:
            g.add_edge((v, "in"), (v, "out"), capacity=c)
    entries, exits = set(), set()
    leaf_nodes = set(dag.leaves.values())
    preds = {v: [] for v in dag.nodes}
    succs = {v: [] for v in dag.nodes}
    for u, v in dag.edges:
        preds[v].append(u)
        succs[u].append(v)
        if u in inside and v in inside:
            g.add_edge((u, "out"), (v, "in"))
    for v in cluster_nodes:
        if v in leaf_nodes or any(p not in inside for p in preds[v]) or not preds[v]:
            entries.add(v)
        if v == dag.sink or any(s not in inside for s in succs[v]):
            exits.add(v)
    if not exits:
        # interior cluster with no outward edge: can only happen for the sink cluster
        exits = {max(cluster_nodes, key=lambda v: len(succs[v]))}
    for v in entries:
        g.add_edge("__in__", (v, "in"))
    for v in exits:
        g.add_edge((v, "out"), "__out__")
    value, _ = nx.maximum_flow(g, "__in__", "__out__")
    return float(value)


def encapsulate(dag, partition, faithfulness_samples=50, seed=0):
    """Contract node clusters into composite services with scalar capacities.

    `partition` maps every node to a cluster id. Each cluster must induce a
    weakly connected sub-DAG. The quotient's rank is verified against the
    original on leaf subsets (exhaustive when there are <= 10 leaves).
    """
    missing = [v for v in dag.nodes if v not in partition]
    if missing:
        raise StructureError(f"partition does not cover nodes: {missing}")
    clusters = {}
    for v in dag.nodes:
        clusters.setdefault(partition[v], []).append(v)
    for cid, members in clusters.items():
        sub = nx.Graph()
        sub.add_nodes_from(members)
        inside = set(members)
        sub.add_edges_from((u, v) for u, v in dag.edges if u in inside and v in inside)
        if not nx.is_connected(sub):
            raise StructureError(f"cluster {cid!r} induces a disconnected sub-DAG")

    slice_cap = {cid: _subdag_capacity(dag, members) for cid, members in clusters.items()}

    qnodes = sorted(clusters, key=str)
    qedges = sorted(
        {(partition[u], partition[v]) for u, v in dag.edges if partition[u] != partition[v]},
        key=str,
    )
    qleaves = {agent: partition[leaf] for agent, leaf in dag.leaves.items()}
    quotient = CapacityDag(
        nodes=list(qnodes),
        node_capacity=dict(slice_cap),
        edges=list(qedges),
        leaves=qleaves,
        sink=partition[dag.sink],
        topology_class="general",
    )

    original = MaxflowOracle(dag)
    mapped = MaxflowOracle(quotient)
    agents = sorted(dag.leaves)
    if len(agents) <= 10:
        test_sets = [
            frozenset(s)
            for r in range(len(agents) + 1)
            for s in itertools.combinations(agents, r)
        ]
    else:
        rng = np.random.default_rng(seed)
        test_sets = [
            frozenset(int(a) for a in rng.choice(agents, size=rng.integers(0, len(agents) + 1), replace=False))
            for _ in range(faithfulness_samples)
        ]
    for s in test_sets:
        ro, rq = original.rank(s), mapped.rank(s)
        if abs(ro - rq) > RANK_TOL:
            raise FaithfulnessError(
                f"quotient rank {rq} != original rank {ro} on {sorted(s)}", witness=tuple(sorted(s))
            )
    return QuotientGraph(clusters=clusters, slice_capacity=slice_cap, quotient=quotient, leaf_map=qleaves)


# --------------------------------------------------------------------------
# Token matroid (direct sum of partition matroids over integrator slots)
# --------------------------------------------------------------------------


class Level1Matroid:
    """Direct sum of partition matroids: c_k unit tokens per integrator.

    A set of unit-demand agents is independent iff they can be assigned to
    eligible integrators without exceeding any token budget (a system of
    distinct representatives over the token ground set).
    """

    def __init__(self, capacities, eligibility):
        caps = []
        for c in capacities:
            if isinstance(c, float) and not c.is_integer():
                raise Level2RegimeError(
                    f"capacity {c} is not an integer: divisible capacity is outside the token-matroid regime"
                )
            if c < 0:
                raise ConfigError("capacities must be nonnegative")
            caps.append(int(c))
        self.capacities = tuple(caps)
        self.eligibility = {a: frozenset(e) for a, e in eligibility.items()}
        for a, elig in self.eligibility.items():
            bad = [k for k in elig if not 0 <= k < len(caps)]
            if bad:
                raise ConfigError(f"agent {a} eligible for unknown integrator {bad[0]}")
        self.agents = tuple(sorted(self.eligibility))
        self.tokens = tuple(
            (k, t) for k, c in enumerate(self.capacities) for t in range(c)
        )

    def matroid_rank(self, subset):
        """Max number of agents in `subset` simultaneously assignable."""
        subset = sorted(set(subset))
        for a in subset:
            if a not in self.eligibility:
                raise DomainError(f"agent {a!r} is not in the matroid ground set")
        if not subset:
            return 0
        g = nx.DiGraph()
        for a in subset:
            g.add_edge("s", ("a", a), capacity=1)
            for k in self.eligibility[a]:
                g.add_edge(("a", a), ("k", k), capacity=1)
        for k, c in enumerate(self.capacities):
            g.add_edge(("k", k), "t", capacity=c)
        if ("t" not in g) or ("s" not in g):
            return 0
        value, _ = nx.maximum_flow(g, "s", "t")
        return int(value)

    def is_independent(self, subset):
        return self.matroid_rank(subset) == len(set(subset))

    def as_rank_oracle(self):
        n = len(self.agents)
        remap = {a: i for i, a in enumerate(self.agents)}
        table = {}
        for r in range(n + 1):
            for s in itertools.combinations(self.agents, r):
                table[tuple(remap[a] for a in s)] = float(self.matroid_rank(s))
        return TableOracle(n, table)

    def describe(self):
        return {
            "capacities": list(self.capacities),
            "eligibility": {str(a): sorted(e) for a, e in self.eligibility.items()},
        }


def matroid_axiom_check(independent, ground):
    """Exhaustive downward-closure + augmentation check of an independence predicate."""
    ground = list(ground)
    n = len(ground)
    fams = []
    for r in range(n + 1):
        for s in itertools.combinations(ground, r):
            if independent(frozenset(s)):
                fams.append(frozenset(s))
    fam = set(fams)
    if frozenset() not in fam:
        return False, {"kind": "empty-set", "witness": ()}
    for s in fam:
        for x in s:
            if s - {x} not in fam:
                return False, {"kind": "downward-closure", "witness": tuple(sorted(s))}
    for a in fam:
        for b in fam:
            if len(a) < len(b):
                if not any(a | {x} in fam for x in b - a):
                    return False, {
                        "kind": "augmentation",
                        "witness": (tuple(sorted(a)), tuple(sorted(b))),
                    }
    return True, None


def level1_matroid(capacities, eligibility, feasibility_oracle=None):
    """Build the token matroid; optionally verify it against true feasibility.

    When `feasibility_oracle` (a RankOracle giving the real downstream
    capacity) is supplied, the direct-sum independence family is compared
    with true routability of unit demands on every subset. A mismatch means
    the encapsulation hypothesis fails (e.g. a shared downstream bottleneck):
    the partition structure admits an augmentation the network cannot carry,
    and the construction is rejected.
    """
    matroid = Level1Matroid(capacities, eligibility)
    if feasibility_oracle is not None:
        agents = matroid.agents
        if len(agents) > EXHAUSTIVE_AXIOM_LIMIT:
            raise ConfigError("feasibility verification is exhaustive; too many agents")
        for r in range(1, len(agents) + 1):
            for s in itertools.combinations(agents, r):
                claimed = matroid.is_independent(s)
                actual = feasibility_oracle.rank(set(s)) >= len(s) - RANK_TOL
                if claimed and not actual:
                    parts = " , ".join("{%s}" % a for a in s[:-1])
                    raise MatroidBoundaryError(
                        "token matroid admits an augmentation the network cannot carry: "
                        f"{parts} -/-> {set(s)} (shared downstream capacity)",
                        witness=tuple(s),
                    )
                if actual and not claimed:
                    raise MatroidBoundaryError(
                        f"network carries {set(s)} but the token matroid rejects it",
                        witness=tuple(s),
                    )
    return matroid


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def dag_to_obj(dag):
    return {
        "class": dag.topology_class,
        "nodes": [{"id": v, "cap": dag.node_capacity[v]} for v in sorted(dag.nodes)],
        "edges": sorted([list(e) for e in dag.edges]),
        "leaves": {str(a): v for a, v in sorted(dag.leaves.items())},
        "sink": dag.sink,
        "sp": _sp_describe(dag.sp_tree) if dag.sp_tree is not None else None,
    }


def dag_to_json(dag):
    return json.dumps(dag_to_obj(dag), sort_keys=True, separators=(",", ":"))


def dag_from_obj(obj):
    sp = _sp_parse(obj["sp"]) if obj.get("sp") else None
    return CapacityDag(
        nodes=[n["id"] for n in obj["nodes"]],
        node_capacity={n["id"]: float(n["cap"]) for n in obj["nodes"]},
        edges=[tuple(e) for e in obj["edges"]],
        leaves={int(a): v for a, v in obj["leaves"].items()},
        sink=obj["sink"],
        topology_class=obj["class"],
        sp_tree=sp,
    )


def dag_from_json(text):
    return dag_from_obj(json.loads(text))
