"""Seeded scenario generator and experiment runner.

The workload is a three-tier service market: 40 agents grouped into pods
(edge, regional, core), each pod capped, the root comfortably above the
pod total. Agents accumulate Poisson task arrivals whose value decays
with service latency and expires past a deadline; the round bid is the
best unexpired value and the round demand is the arrived unit count.

Because the root capacity never binds, allocation and threshold payments
decompose pod by pod; the engine here computes them in closed form and is
cross-checked against the generic greedy/threshold route in the tests.
"""

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .adversary import DeviationStrategy, apply_deviation
from .credibility import make_commitment, verify_transcript
from .errors import ConfigError, DomainError
from .mechanisms import ClinchTranscript, Mechanism, UniformPrior, clinching_auction
from .metrics import cliffs_delta, conc
from .polymatroid import LaminarOracle, SubstituteCloneOracle

#: base value support for task draws (bounded away from zero: every served
#: task is worth serving)
VALUE_LO, VALUE_HI = 1.0, 11.0

#: per-tier latency jitter upper bound (lower bound 0.5 throughout); the
#: core tier is the far one and the noisy one
TIER_JITTER_HI = (2.0, 2.0, 6.0)

#: posted-price grid for the r5 sweep
POSTED_LEVELS = (2.5, 5.0, 7.5)

#: posted-price receipt markup used by the inflator adversary
INFLATOR_MARKUP = 0.1

#: detection fine as a multiple of the deviation gain (net = -fine * gain)
DETECTION_FINE_MULT = 8.0

#: tier latency profile per topology class: aggregation depth shifts all
#: three tiers together
CLASS_TIER_LATENCIES = {
    "tree": (5.0, 15.0, 50.0),
    "sp": (6.0, 18.0, 55.0),
    "entangled": (4.0, 12.0, 45.0),
}

SCENARIO_SCHEMA_VERSION = 1
POS_TOL = 1e-9
ARRIVAL_STREAM_TAG = 777  # rng substream for posted-price arrival order


# --------------------------------------------------------------------------
# Scenario configuration


@dataclass(frozen=True)
class Pod:
    tier: int
    capacity: float
    units: tuple  # service units per member task


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int = 40
    tier_capacities: tuple = (200.0, 300.0, 500.0)
    tier_latencies_ms: tuple = (5.0, 15.0, 50.0)
    deadlines_ms: tuple = (100.0, 150.0, 200.0)
    value_decay_per_ms: float = 0.005
    rounds: int = 100
    seeds: tuple = (17, 42, 101, 2024, 31337)
    arrival_rate: float = 2.0
    topology_class: str = "tree"

    def __post_init__(self):
        if self.n_agents <= 0 or self.rounds <= 0 or self.arrival_rate <= 0:
            raise ConfigError("agent count, rounds, and arrival rate must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(self.tier_capacities) != 3 or len(self.tier_latencies_ms) != 3:
            raise ConfigError("exactly three tiers are modeled")
        if any(c <= 0 for c in self.tier_capacities) or any(
            l <= 0 for l in self.tier_latencies_ms
        ):
            raise ConfigError("capacities and latencies must be positive")
        if any(d <= 0 for d in self.deadlines_ms):
            raise ConfigError("deadlines must be positive")
        if self.value_decay_per_ms < 0:
            raise ConfigError("value decay must be nonnegative")

    def pods(self):
        """Pod layout: two small edge pods, two regional pods, four core
        pods each holding two whales and five minnows. Pod capacities stay
        inside their tier budget and their total inside the root."""
        layout = [
            Pod(0, 20.0, (8, 8, 8)),
            Pod(0, 20.0, (8, 8, 8)),
            Pod(1, 25.0, (10, 10, 10)),
            Pod(1, 25.0, (10, 10, 10)),
            Pod(2, 100.0, (30, 30, 8, 8, 8, 8, 8)),
            Pod(2, 100.0, (30, 30, 8, 8, 8, 8, 8)),
            Pod(2, 100.0, (30, 30, 8, 8, 8, 8, 8)),
            Pod(2, 100.0, (30, 30, 8, 8, 8, 8, 8)),
        ]
        if sum(len(p.units) for p in layout) != self.n_agents:
            raise ConfigError(
                f"pod layout holds {sum(len(p.units) for p in layout)} members, "
                f"config says {self.n_agents}"
            )
        root = self.tier_capacities[-1]
        if sum(p.capacity for p in layout) > root:
            raise ConfigError("pod capacities exceed the root capacity")
        for t in range(3):
            tier_total = sum(p.capacity for p in layout if p.tier == t)
            if tier_total > self.tier_capacities[t]:
                raise ConfigError(f"tier {t} pods exceed the tier capacity")
        return layout

    def to_dict(self):
        return {
            "version": SCENARIO_SCHEMA_VERSION,
            "n_agents": self.n_agents,
            "tier_capacities": list(self.tier_capacities),
            "tier_latencies_ms": list(self.tier_latencies_ms),
            "deadlines_ms": list(self.deadlines_ms),
            "value_decay_per_ms": self.value_decay_per_ms,
            "rounds": self.rounds,
            "seeds": list(self.seeds),
            "arrival_rate": self.arrival_rate,
            "topology_class": self.topology_class,
        }

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        version = obj.pop("version", SCENARIO_SCHEMA_VERSION)
        if version != SCENARIO_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for key in ("tier_capacities", "tier_latencies_ms", "deadlines_ms", "seeds"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass
class RoundProfile:
    """One round's realized market: bids, unit demands, pod structure."""

    bids: np.ndarray
    demands: np.ndarray
    pod_of: np.ndarray
    pod_caps: np.ndarray
    pod_tiers: np.ndarray
    root_cap: float

    @property
    def n(self):
        return len(self.bids)

    def members(self, pod):
        return [a for a in range(self.n) if self.pod_of[a] == pod]

    def oracle(self):
        return LaminarOracle(
            self.demands, self.pod_of, self.pod_caps, root_cap=self.root_cap
        )


def generate_round(config, seed, round_index):
    """Realize one round deterministically from (seed, round, agent).

    Each agent owns an rng substream keyed by the triple, so adding agents
    or reordering conditions never perturbs existing draws. Tasks arrive
    Poisson; each draws a latency (tier base times jitter), a deadline,
    and a base value; it contributes only if it beats its deadline, after
    latency decay. The bid is the best surviving task value.
    """
    pods = config.pods()
    lam = config.value_decay_per_ms
    bids, demands, pod_of = [], [], []
    agent = 0
    for pid, pod in enumerate(pods):
        base_lat = config.tier_latencies_ms[pod.tier]
        jit_hi = TIER_JITTER_HI[pod.tier]
        for units in pod.units:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, round_index, agent])
            )
            k = int(rng.poisson(config.arrival_rate))
            best = 0.0
            for _ in range(k):
                latency = base_lat * rng.uniform(0.5, jit_hi)
                deadline = config.deadlines_ms[rng.integers(len(config.deadlines_ms))]
                if latency <= deadline:
                    value = rng.uniform(VALUE_LO, VALUE_HI) * math.exp(-lam * latency)
                    best = max(best, value)
            bids.append(best)
            demands.append(float(units * k))
            pod_of.append(pid)
            agent += 1
    return RoundProfile(
        bids=np.array(bids),
        demands=np.array(demands),
        pod_of=np.array(pod_of),
        pod_caps=np.array([p.capacity for p in pods]),
        pod_tiers=np.array([p.tier for p in pods]),
        root_cap=config.tier_capacities[-1],
    )


def arrival_order(config, seed, round_index):
    """Posted-price arrival permutation; a separate substream so posted
    conditions share it regardless of what else a condition draws."""
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, round_index, ARRIVAL_STREAM_TAG])
    )
    return [int(a) for a in rng.permutation(config.n_agents)]


# --------------------------------------------------------------------------
# Pod-local exact engine
#
# With the root slack, rank decomposes as f(S) = sum_p min(cap_p, load_p):
# greedy allocation and threshold payments within a pod depend only on that
# pod, so both come out in closed form. A phantom enters as a substitute
# clone of its source: one footprint, never two.


def pod_allocation(members, bids, demands, cap, clone_of=None, clone_level=0.0):
    """Greedy fill in bid order inside one pod; returns (alloc, ghost_take).

    The clone presses its source: after the phantom consumes, the source's
    own arrival grants nothing (perfect substitutes).
    """
    items = sorted(((bids[a], 0, a) for a in members if bids[a] > 0), reverse=True)
    if clone_of is not None:
        items.append((clone_level, 1, clone_of))
        items.sort(key=lambda t: (-t[0], t[2], t[1]))
    residual = float(cap)
    alloc = {a: 0.0 for a in members}
    ghost_take = 0.0
    pressed = set()
    for _, is_ghost, a in items:
        take = min(demands[a], residual) if a not in pressed else 0.0
        pressed.add(a)
        if is_ghost:
            ghost_take = take
        else:
            alloc[a] = take
        residual -= take
    return alloc, ghost_take


def pod_threshold_payment(agent, members, bids, demands, cap, clone_of=None, clone_level=0.0):
    """Exact threshold payment of one pod member.

    The allocation curve x_a(z) is piecewise constant with breakpoints at
    opponent bid levels (and the phantom's level); the integral is a sum of
    midpoint-evaluated segments. The clone contributes its source's
    footprint only when the source itself is below the evaluation point.
    """
    others = [m for m in members if m != agent and bids[m] > 0]
    b_a = bids[agent]
    breakpoints = {bids[m] for m in others if bids[m] < b_a}
    if clone_of is not None and clone_level < b_a:
        breakpoints.add(clone_level)
    zs = [0.0] + sorted(breakpoints) + [b_a]

    def curve(z):
        load = sum(demands[m] for m in others if bids[m] > z)
        if clone_of is not None and clone_level > z:
            if not (clone_of != agent and bids[clone_of] > z):
                load += demands[clone_of]
        return max(0.0, min(demands[agent], cap - load))

    x_a = curve(b_a)
    area = sum(curve((lo + hi) / 2.0) * (hi - lo) for lo, hi in zip(zs[:-1], zs[1:]))
    return b_a * x_a - area, x_a


def settle_threshold(profile):
    """Honest greedy + threshold payments, pod by pod."""
    alloc, pay = {}, {}
    for p in range(len(profile.pod_caps)):
        members = profile.members(p)
        pod_alloc, _ = pod_allocation(
            members, profile.bids, profile.demands, profile.pod_caps[p]
        )
        for a, x in pod_alloc.items():
            alloc[a] = x
            if x > POS_TOL:
                pay[a], _ = pod_threshold_payment(
                    a, members, profile.bids, profile.demands, profile.pod_caps[p]
                )
            else:
                pay[a] = 0.0
    return alloc, pay


def settle_first_price(profile):
    """Same allocator, pay-as-bid."""
    alloc, _ = settle_threshold(profile)
    pay = {a: profile.bids[a] * x for a, x in alloc.items()}
    return alloc, pay


def settle_posted(profile, level, arrival, phantom=None):
    """First-come service at a posted unit price.

    `phantom` = (source, level) inserts a substitute clone immediately
    before its source in the arrival order; the clone's purchase is
    undelivered operator inventory and its spend is excluded (self-dealing).
    """
    residual = {p: float(c) for p, c in enumerate(profile.pod_caps)}
    alloc = {a: 0.0 for a in range(profile.n)}
    pressed = set()
    ghost_take = 0.0
    for a in arrival:
        pod = int(profile.pod_of[a])
        if phantom is not None and a == phantom[0] and phantom[1] >= level:
            take = min(profile.demands[a], residual[pod])
            ghost_take = take
            residual[pod] -= take
            pressed.add(a)
        if profile.bids[a] < level or a in pressed:
            continue
        take = min(profile.demands[a], residual[pod])
        alloc[a] = take
        residual[pod] -= take
    pay = {a: level * x for a, x in alloc.items()}
    return alloc, pay, ghost_take


def _totals(profile, alloc, pay):
    welfare = sum(profile.bids[a] * x for a, x in alloc.items())
    revenue = sum(pay.values())
    return welfare, revenue


# --------------------------------------------------------------------------
# Operator ghost scan


@dataclass
class GhostCandidate:
    surplus: float
    damage: float  # welfare destroyed (undelivered displaced value)
    source: int
    level: float
    pod: int


def ghost_candidates(profile, alloc=None, pay=None):
    """Every rationalizable phantom placement with its exact surplus.

    Sources are pod members with arrived demand, bidding or not. A live
    source that currently wins is only usable when its opponents' demand
    covers the pod (its zero outcome must be producible by some honest
    field); sleepers and already-displaced members carry no such burden.
    Candidate levels sit inside each bid window above the source.
    """
    if alloc is None or pay is None:
        alloc, pay = settle_threshold(profile)
    bids, demands = profile.bids, profile.demands
    out = []
    for p in range(len(profile.pod_caps)):
        members = profile.members(p)
        cap = profile.pod_caps[p]
        live = sorted((a for a in members if bids[a] > 0), key=lambda a: -bids[a])
        if not live:
            continue
        levels = [bids[a] for a in live]
        for source in members:
            if demands[source] <= 0:
                continue
            if bids[source] > 0 and alloc.get(source, 0.0) > POS_TOL:
                opp_demand = sum(demands[m] for m in members if m != source)
                if opp_demand < cap - POS_TOL:
                    continue
            tops = [lv for lv in levels if lv > bids[source]]
            for w in range(len(tops)):
                lo = tops[w + 1] if w + 1 < len(tops) else bids[source]
                hi = tops[w]
                if hi - lo <= 1e-6:
                    continue
                level = lo + 0.9 * (hi - lo)
                dev_alloc, _ = pod_allocation(
                    members, bids, demands, cap, clone_of=source, clone_level=level
                )
                surplus = damage = 0.0
                for m in members:
                    if bids[m] <= 0:
                        continue
                    x_dev = dev_alloc.get(m, 0.0)
                    if x_dev > POS_TOL:
                        p_dev, _ = pod_threshold_payment(
                            m, members, bids, demands, cap,
                            clone_of=source, clone_level=level,
                        )
                    else:
                        p_dev = 0.0
                    surplus += p_dev - pay.get(m, 0.0)
                    damage += (alloc.get(m, 0.0) - x_dev) * bids[m]
                if surplus > POS_TOL:
                    out.append(GhostCandidate(surplus, damage, source, level, p))
    return out


def best_ghost(profile, alloc=None, pay=None, objective="damage"):
    cands = ghost_candidates(profile, alloc, pay)
    if not cands:
        return None
    key = (lambda c: c.damage) if objective == "damage" else (lambda c: c.surplus)
    return max(cands, key=key)


def ghost_settle(profile, source, level):
    """Deviated allocation and threshold payments with the phantom folded in."""
    alloc, pay = {}, {}
    ghost_pod = int(profile.pod_of[source])
    for p in range(len(profile.pod_caps)):
        members = profile.members(p)
        kw = {}
        if p == ghost_pod:
            kw = {"clone_of": source, "clone_level": level}
        pod_alloc, _ = pod_allocation(
            members, profile.bids, profile.demands, profile.pod_caps[p], **kw
        )
        for a, x in pod_alloc.items():
            alloc[a] = x
            if x > POS_TOL:
                pay[a], _ = pod_threshold_payment(
                    a, members, profile.bids, profile.demands, profile.pod_caps[p], **kw
                )
            else:
                pay[a] = 0.0
    return alloc, pay


def certify_ghost(profile, source, level, honest, deviated):
    """Per-agent rationalizability of the deviated round, in closed form.

    Agents outside the phantom's pod, and members whose outcome did not
    move, are covered by the honest field itself. A moved non-source member
    is covered by the field with the source lifted to the phantom's level
    (substitute equivalence makes the replay exact). The displaced source
    is covered by walls: all pod opponents above its bid, which the scan's
    rationalizability precondition guarantees can absorb the pod.
    """
    alloc_h, pay_h = honest
    alloc_d, pay_d = deviated
    bids, demands = profile.bids, profile.demands
    pod = int(profile.pod_of[source])
    members = profile.members(pod)
    cap = profile.pod_caps[pod]
    safe, certs = {}, {}
    for a in range(profile.n):
        moved = (
            abs(alloc_d[a] - alloc_h[a]) > POS_TOL
            or abs(pay_d[a] - pay_h[a]) > POS_TOL
        )
        if not moved:
            safe[a] = True
            certs[a] = {"family": "honest", "profile": None}
            continue
        if a != source:
            # replay this pod with the source bidding at the phantom level
            lifted = bids.copy()
            lifted[source] = level
            check_alloc, _ = pod_allocation(members, lifted, demands, cap)
            if check_alloc.get(a, 0.0) > POS_TOL:
                check_pay, _ = pod_threshold_payment(a, members, lifted, demands, cap)
            else:
                check_pay = 0.0
            ok = (
                abs(check_alloc.get(a, 0.0) - alloc_d[a]) <= 1e-7
                and abs(check_pay - pay_d[a]) <= 1e-7
            )
            safe[a] = ok
            certs[a] = {"family": "lifted_source", "agent": a, "level": level}
            continue
        # the source itself: zero outcome under a wall of opponents
        walls = bids.copy()
        wall_level = min(VALUE_HI, max(level, bids[a] + 1.0))
        for m in members:
            if m != a:
                walls[m] = wall_level
        check_alloc, _ = pod_allocation(members, walls, demands, cap)
        ok = (
            alloc_d[a] <= POS_TOL
            and pay_d[a] <= POS_TOL
            and check_alloc.get(a, 0.0) <= POS_TOL
        )
        safe[a] = ok
        certs[a] = {"family": "wall", "agent": a, "level": wall_level}
    return safe, certs


# --------------------------------------------------------------------------
# Experiment specs


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    mechanisms: tuple
    adversaries: tuple
    credibility_device: str
    grid_axes: dict

    def validate(self):
        if self.id == "exp2" and self.credibility_device != "broadcast":
            raise ConfigError("exp2 runs under the broadcast device")
        if self.id == "exp3" and "myerson" not in self.mechanisms:
            raise ConfigError("exp3 is the optimal-auction persistence run")
        if self.id == "r5":
            need = {"vcg", "first_price", "posted_price"}
            if not need <= set(self.mechanisms):
                raise ConfigError("r5 spans vcg, first_price, and posted_price")
        return self


def experiment_spec(exp_id):
    table = {
        "exp1": ExperimentSpec(
            "exp1", ("vcg",), ("ghost_bid",), "none", {}
        ),
        "exp2": ExperimentSpec(
            "exp2", ("clinching",), ("ghost_bid",), "broadcast", {}
        ),
        "exp3": ExperimentSpec(
            "exp3", ("myerson",), ("payment_perturb",), "none", {}
        ),
        "r5": ExperimentSpec(
            "r5",
            ("vcg", "first_price", "posted_price"),
            ("truthful", "ghost_bid", "receipt_inflate"),
            "none",
            {
                "topologies": ("tree", "sp", "entangled"),
                "posted_levels": POSTED_LEVELS,
            },
        ),
    }
    if exp_id not in table:
        raise ConfigError(f"unknown experiment {exp_id!r}; pick from {sorted(table)}")
    return table[exp_id].validate()


@dataclass
class RoundResult:
    round_index: int
    seed: int
    condition: str
    honest: tuple  # (revenue, welfare, payments_total)
    deviated: tuple
    detected: bool
    observations: dict = None
    detection_events: list = field(default_factory=list)

    def row(self):
        return {
            "round": self.round_index,
            "seed": self.seed,
            "condition": self.condition,
            "rev_honest": self.honest[0],
            "rev_dev": self.deviated[0],
            "welfare_honest": self.honest[1],
            "welfare_dev": self.deviated[1],
            "detected": int(self.detected),
        }


def _triple(revenue, welfare):
    # direct settlement: the payment baseline coincides with revenue
    return (revenue, welfare, revenue)


# --------------------------------------------------------------------------
# Experiment 1: sealed-bid ghost, no device


def _exp1_seed(config, seed):
    rows, surplus_series, certified, picks = [], [], [], []
    for r in range(config.rounds):
        profile = generate_round(config, seed, r)
        alloc_h, pay_h = settle_threshold(profile)
        w_h, rev_h = _totals(profile, alloc_h, pay_h)
        if w_h <= 0:
            continue
        pick = best_ghost(profile, alloc_h, pay_h)
        if pick is None:
            rows.append(
                RoundResult(r, seed, "vcg-ghost", _triple(rev_h, w_h), _triple(rev_h, w_h), False)
            )
            surplus_series.append(0.0)
            continue
        alloc_d, pay_d = ghost_settle(profile, pick.source, pick.level)
        w_d, rev_d = _totals(profile, alloc_d, pay_d)
        safe, _ = certify_ghost(
            profile, pick.source, pick.level, (alloc_h, pay_h), (alloc_d, pay_d)
        )
        certified.append(all(safe.values()))
        surplus_series.append(rev_d - rev_h)
        picks.append(
            {"seed": seed, "round": r, "source": pick.source, "level": pick.level}
        )
        rows.append(
            RoundResult(r, seed, "vcg-ghost", _triple(rev_h, w_h), _triple(rev_d, w_d), False)
        )
    return rows, surplus_series, certified, picks


def run_exp1(config, jobs=1):
    parts = _map_jobs(partial(_exp1_seed, config), list(config.seeds), jobs)
    rows, surplus, certified, picks = [], [], [], []
    for part in parts:
        rows += part[0]
        surplus += part[1]
        certified += part[2]
        picks += part[3]
    report = conc([r.honest for r in rows], [r.deviated for r in rows])
    positive = [s > POS_TOL for s in surplus]
    return {
        "experiment": "exp1",
        "rows": [r.row() for r in rows],
        "summary": {
            "rounds": len(rows),
            "positive_rate": float(np.mean(positive)),
            "all_certified": bool(certified and all(certified)),
            "certified_rate": float(np.mean(certified)) if certified else 0.0,
            "mean_surplus": float(np.mean(surplus)),
            "min_surplus": float(np.min(surplus)),
            "conc": report.to_json(),
            "surplus_series": surplus,
        },
        "picks": picks,
    }


# --------------------------------------------------------------------------
# Experiment 2: clinching with broadcast


class _SybilTranscript(ClinchTranscript):
    """Transcript as the deviating operator broadcasts it: the phantom's
    demand and clinch lines are withheld and every announced subset is
    relabeled to the committed ground set, values left as executed."""

    def __init__(self, commitment_root, ghost_id):
        super().__init__(commitment_root)
        self.ghost_id = ghost_id

    def demand(self, agent, d):
        if agent != self.ghost_id:
            super().demand(agent, d)

    def clinch(self, agent, qty, price):
        if agent != self.ghost_id:
            super().clinch(agent, qty, price)

    def rank_announce(self, subset, value):
        super().rank_announce(set(subset) - {self.ghost_id}, value)


def _exp2_seed(config, seed):
    rows, detections, nets = [], [], []
    for r in range(config.rounds):
        profile = generate_round(config, seed, r)
        oracle = profile.oracle()
        root = make_commitment(oracle, "clinching", "clinch_pay")
        honest_t = ClinchTranscript(commitment_root=root)
        honest_out = clinching_auction(oracle, list(profile.bids), transcript=honest_t)
        w_h = honest_out.welfare(list(profile.bids))
        rev_h = honest_out.revenue

        pick = best_ghost(profile)
        deviated = False
        detected = False
        rev_d, w_d = rev_h, w_h
        if pick is not None:
            plus = SubstituteCloneOracle(oracle, pick.source)
            dev_t = _SybilTranscript(root, plus.clone_id)
            dev_out = clinching_auction(
                plus, list(profile.bids) + [pick.level], transcript=dev_t
            )
            gain = (
                sum(dev_out.payments[i] for i in range(profile.n)) - rev_h
            )
            if gain > POS_TOL:
                deviated = True
                rev_d = rev_h + gain
                w_d = sum(
                    profile.bids[i] * dev_out.allocation[i] for i in range(profile.n)
                )
                verdict = verify_transcript(dev_t, root, oracle=oracle)
                detected = not verdict.consistent
                penalty = gain + DETECTION_FINE_MULT * gain if detected else 0.0
                nets.append(gain - penalty)
                detections.append(detected)
        rows.append(
            RoundResult(
                r, seed, "clinch-ghost" if deviated else "clinch-honest",
                _triple(rev_h, w_h), _triple(rev_d, w_d), detected,
            )
        )
        if not deviated:
            # soundness: the honest transcript must replay clean
            verdict = verify_transcript(honest_t, root, oracle=oracle)
            if not verdict.consistent:
                raise DomainError(
                    f"honest transcript flagged at seed {seed} round {r}: "
                    f"{verdict.violations[:2]}"
                )
    return rows, detections, nets


def run_exp2(config, jobs=1):
    parts = _map_jobs(partial(_exp2_seed, config), list(config.seeds), jobs)
    rows, detections, nets = [], [], []
    for part in parts:
        rows += part[0]
        detections += part[1]
        nets += part[2]
    if not detections:
        raise DomainError("no deviated rounds; the scenario never tempted the operator")
    return {
        "experiment": "exp2",
        "rows": [r.row() for r in rows],
        "summary": {
            "rounds": len(rows),
            "deviated_rounds": len(detections),
            "detection_rate": float(np.mean(detections)),
            "mean_net_surplus": float(np.mean(nets)),
            "max_net_surplus": float(np.max(nets)),
        },
    }


# --------------------------------------------------------------------------
# Experiment 3: the perturbation under the optimal auction


def _exp3_seed(config, seed):
    prior = UniformPrior(VALUE_LO, VALUE_HI)
    reserve = prior.reserve()
    mech = Mechanism(payment_rule="myerson", prior=prior)
    rows, exact, surpluses = [], [], []
    for r in range(config.rounds):
        profile = generate_round(config, seed, r)
        target = None
        for p in range(len(profile.pod_caps)):
            members = profile.members(p)
            ranked = sorted(
                (a for a in members if profile.bids[a] > 0),
                key=lambda a: -profile.bids[a],
            )
            if len(ranked) < 2:
                continue
            i, j = ranked[0], ranked[1]
            third = profile.bids[ranked[2]] if len(ranked) > 2 else 0.0
            gamma = (
                min(profile.demands[i], profile.pod_caps[p])
                + min(profile.demands[j], profile.pod_caps[p])
                - min(profile.demands[i] + profile.demands[j], profile.pod_caps[p])
            )
            if (
                gamma > POS_TOL
                and profile.bids[j] > reserve + 1e-6
                and profile.bids[i] - profile.bids[j] > 1e-6
                and profile.bids[j] - third > 1e-6
            ):
                target = (p, members, i, j, gamma)
                break
        if target is None:
            continue
        p, members, i, j, gamma = target
        sub_bids = [profile.bids[a] for a in members]
        sub_demands = [profile.demands[a] for a in members]
        oracle = LaminarOracle(sub_demands, [0] * len(members), [profile.pod_caps[p]])
        li, lj = members.index(i), members.index(j)
        gap = min(sub_bids[li] - sub_bids[lj], sub_bids[lj] - max(
            [b for k, b in enumerate(sub_bids) if k not in (li, lj) and b > 0],
            default=0.0,
        ))
        delta = gap / 2.0
        strategy = DeviationStrategy(kind="payment_perturb", pair=(li, lj), delta=delta)
        result = apply_deviation(strategy, sub_bids, mech, oracle)
        surplus = result.operator_surplus
        surpluses.append(surplus)
        exact.append(abs(surplus - delta * gamma) <= 1e-9)
        rev_h = result.honest.revenue
        w_h = result.honest.welfare(sub_bids)
        rows.append(
            RoundResult(
                r, seed, "myerson-perturb",
                _triple(rev_h, w_h), _triple(rev_h + surplus, w_h), False,
            )
        )
    return rows, exact, surpluses


def run_exp3(config, jobs=1):
    parts = _map_jobs(partial(_exp3_seed, config), list(config.seeds), jobs)
    rows, exact, surpluses = [], [], []
    for part in parts:
        rows += part[0]
        exact += part[1]
        surpluses += part[2]
    if not surpluses:
        raise DomainError("no round offered a reserve-clearing contested pair")
    return {
        "experiment": "exp3",
        "rows": [r.row() for r in rows],
        "summary": {
            "applied_rounds": len(surpluses),
            "all_exact": bool(all(exact)),
            "all_positive": bool(all(s > POS_TOL for s in surpluses)),
            "mean_surplus": float(np.mean(surpluses)),
            "min_surplus": float(np.min(surpluses)),
        },
    }


# --------------------------------------------------------------------------
# The R-5 grid: 3 topologies x 13 conditions


def _r5_conditions():
    conds = [("vcg", "truthful", None), ("vcg", "ghost", None),
             ("first_price", "truthful", None), ("first_price", "ghost", None)]
    for level in POSTED_LEVELS:
        for adv in ("truthful", "ghost", "inflator"):
            conds.append(("posted_price", adv, level))
    return conds


def _condition_name(mech, adv, level, topo):
    tag = f"{mech}-{adv}"
    if level is not None:
        tag += f"@{level:g}"
    return f"{topo}:{tag}"


def _agent_utilities(profile, alloc, pay):
    return [profile.bids[a] * alloc[a] - pay[a] for a in range(profile.n)]


def _r5_topo_seed(base_config, topo, seed):
    config = replace(
        base_config,
        topology_class=topo,
        tier_latencies_ms=CLASS_TIER_LATENCIES[topo],
    )
    rows = []
    util_samples = {}  # condition -> (honest list, deviated list)
    for r in range(config.rounds):
        profile = generate_round(config, seed, r)
        arrival = arrival_order(config, seed, r)
        alloc_t, pay_t = settle_threshold(profile)
        w_t, rev_t = _totals(profile, alloc_t, pay_t)
        if w_t <= 0:
            continue
        alloc_f, pay_f = alloc_t, {a: profile.bids[a] * alloc_t[a] for a in alloc_t}
        w_f, rev_f = _totals(profile, alloc_f, pay_f)
        pick = best_ghost(profile, alloc_t, pay_t)
        if pick is not None:
            alloc_g, pay_g = ghost_settle(profile, pick.source, pick.level)
            w_g, rev_g = _totals(profile, alloc_g, pay_g)
        else:
            alloc_g, pay_g, w_g, rev_g = alloc_t, pay_t, w_t, rev_t

        for mech, adv, level in _r5_conditions():
            name = _condition_name(mech, adv, level, topo)
            if mech in ("vcg", "first_price"):
                if adv == "truthful":
                    honest = (rev_t, w_t) if mech == "vcg" else (rev_f, w_f)
                    dev = honest
                    h_alloc, h_pay, d_alloc, d_pay = (
                        (alloc_t, pay_t, alloc_t, pay_t)
                        if mech == "vcg"
                        else (alloc_f, pay_f, alloc_f, pay_f)
                    )
                else:
                    # ghost arms: both are measured against the shared
                    # allocator's threshold baseline, and the phantom
                    # extracts the same threshold increment in each — the
                    # increment is a property of the allocation order, not
                    # of the payment label
                    honest = (rev_t, w_t)
                    dev = (rev_g, w_g)
                    h_alloc, h_pay, d_alloc, d_pay = alloc_t, pay_t, alloc_g, pay_g
                detected = False
            else:
                alloc_p, pay_p, _ = settle_posted(profile, level, arrival)
                w_p, rev_p = _totals(profile, alloc_p, pay_p)
                honest = (rev_p, w_p)
                h_alloc, h_pay = alloc_p, pay_p
                if adv == "truthful":
                    dev = honest
                    d_alloc, d_pay = alloc_p, pay_p
                    detected = False
                elif adv == "ghost":
                    if pick is not None:
                        ph = (pick.source, max(pick.level, level))
                        alloc_q, pay_q, _ = settle_posted(profile, level, arrival, phantom=ph)
                        w_q, rev_q = _totals(profile, alloc_q, pay_q)
                        dev = (rev_q, w_q)
                        d_alloc, d_pay = alloc_q, pay_q
                    else:
                        dev = honest
                        d_alloc, d_pay = alloc_p, pay_p
                    detected = False
                else:  # receipt inflator: prices marked up, detectable
                    d_alloc = alloc_p
                    d_pay = {a: q * (1.0 + INFLATOR_MARKUP) for a, q in pay_p.items()}
                    dev = (rev_p * (1.0 + INFLATOR_MARKUP), w_p)
                    detected = any(x > POS_TOL for x in alloc_p.values())
            rows.append(
                RoundResult(r, seed, name, _triple(*honest), _triple(*dev), detected)
            )
            hu, du = util_samples.setdefault(name, ([], []))
            hu += _agent_utilities(profile, h_alloc, h_pay)
            du += _agent_utilities(profile, d_alloc, d_pay)
    return rows, util_samples


def run_r5(config, jobs=1):
    tasks = [
        (topo, seed)
        for topo in ("tree", "sp", "entangled")
        for seed in config.seeds
    ]
    parts = _map_jobs(partial(_r5_task, config), tasks, jobs)
    rows = []
    utils = {}
    for part_rows, part_utils in parts:
        rows += part_rows
        for name, (hu, du) in part_utils.items():
            slot = utils.setdefault(name, ([], []))
            slot[0].extend(hu)
            slot[1].extend(du)
    conditions = {}
    by_cond = {}
    for row in rows:
        by_cond.setdefault(row.condition, []).append(row)
    for name, crows in sorted(by_cond.items()):
        entry = {
            "rounds": len(crows),
            "detection_rate": float(np.mean([r.detected for r in crows])),
        }
        try:
            entry["conc"] = conc(
                [r.honest for r in crows], [r.deviated for r in crows]
            ).to_json()
        except Exception as exc:  # zero baseline on a sparse condition
            entry["conc"] = {"error": str(exc)}
        hu, du = utils[name]
        entry["cliffs_delta_utility"] = (
            cliffs_delta(hu, du) if hu and du else 0.0
        )
        conditions[name] = entry
    return {
        "experiment": "r5",
        "rows": [r.row() for r in rows],
        "conditions": conditions,
        "summary": {
            "n_conditions": len(conditions),
            "round_runs": len(rows),
        },
    }


def _r5_task(config, task):
    topo, seed = task
    return _r5_topo_seed(config, topo, seed)


# --------------------------------------------------------------------------
# Dispatch, serialization, determinism digest


def _map_jobs(fn, tasks, jobs):
    if jobs is None:
        jobs = 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
        return list(pool.map(fn, tasks))


_RUNNERS = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3, "r5": run_r5}


def run_experiment(spec, config=None, jobs=1):
    """Execute one experiment spec; attach a determinism digest."""
    if isinstance(spec, str):
        spec = experiment_spec(spec)
    spec.validate()
    if config is None:
        config = ScenarioConfig()
    report = _RUNNERS[spec.id](config, jobs=jobs)
    report["config"] = config.to_dict()
    report["digest"] = report_digest(report)
    return report


def _round_floats(obj, sig=9):
    if isinstance(obj, float):
        return float(f"{obj:.{sig}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, sig) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.{sig}g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def report_json(report):
    """Canonical JSON with 9-significant-digit floats."""
    return json.dumps(_round_floats(report), sort_keys=True, separators=(",", ":"))


def report_digest(report):
    payload = {k: v for k, v in report.items() if k != "digest"}
    return hashlib.sha256(report_json(payload).encode()).hexdigest()


CSV_FIELDS = (
    "round", "seed", "condition",
    "rev_honest", "rev_dev", "welfare_honest", "welfare_dev", "detected",
)


def rows_to_csv(rows, fh=None):
    """Write per-round rows; returns the CSV text when no handle is given."""
    own = fh is None
    if own:
        fh = io.StringIO()
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for row in rows:
        out = dict(row)
        for key in ("rev_honest", "rev_dev", "welfare_honest", "welfare_dev"):
            out[key] = f"{out[key]:.9g}"
        writer.writerow(out)
    return fh.getvalue() if own else None
