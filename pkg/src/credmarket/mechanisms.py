"""Allocation and payment rules over a rank oracle.

All mechanisms share one allocator: priority-order greedy with marginal-rank
quantities (the polymatroid greedy, optimal for the welfare LP). Payment
rules differ:

  vcg          threshold payments from the exact allocation-curve integral
  myerson      same, after a virtual-value reparameterisation with a reserve
  first_price  pay-as-bid
  posted_price fixed unit price, seeded random arrival order

plus an ascending-clock clinching auction that reproduces the threshold
payments to within one clock step for unit-slope demand.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    NonMonotoneAllocationError,
    UnsupportedPriorError,
)

PAYMENT_RULES = ("vcg", "myerson", "first_price", "posted_price")
CLOCK_STEP = 0.01


@dataclass(frozen=True)
class UniformPrior:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ConfigError("uniform prior needs 0 <= lo < hi")

    def virtual_value(self, v):
        # phi(v) = v - (hi - v) = 2v - hi for Uniform[lo, hi]
        return 2.0 * v - self.hi

    def reserve(self):
        return max(self.lo, self.hi / 2.0)


@dataclass
class MarketOutcome:
    allocation: dict  # agent -> quantity
    payments: dict  # agent -> payment
    order: list  # priority order actually used
    rule: str
    meta: dict = field(default_factory=dict)

    @property
    def revenue(self):
        return sum(self.payments.values())

    def welfare(self, values):
        return sum(self.allocation[a] * values[a] for a in self.allocation)


def _validate_bids(oracle, bids):
    if len(bids) != oracle.n:
        raise DomainError(f"expected {oracle.n} bids, got {len(bids)}")
    if any(b < 0 for b in bids):
        raise DomainError("bids must be nonnegative")
    return [float(b) for b in bids]


def priority_order(bids, priority=None):
    """Descending priority, lower agent id first on exact ties."""
    keys = bids if priority is None else priority
    return sorted(range(len(bids)), key=lambda i: (-keys[i], i))


def edmonds_greedy(oracle, bids, priority=None, active=None):
    """Marginal-rank allocation in priority order.

    x_i = f(S + i) - f(S) where S is the set of higher-priority agents.
    Agents outside `active` (when given) are skipped with x_i = 0, as are
    agents bidding 0: service requires a positive bid, so an agent whose
    tasks all expired consumes nothing.
    """
    bids = _validate_bids(oracle, bids)
    order = priority_order(bids, priority)
    alloc = {i: 0.0 for i in range(oracle.n)}
    taken = set()
    base = 0.0
    for i in order:
        if active is not None and i not in active:
            continue
        if bids[i] <= 0.0:
            continue
        taken.add(i)
        new = oracle.rank(taken)
        alloc[i] = new - base
        base = new
    return alloc, order


def _allocation_curve(oracle, bids, i, priority_of, breakpoints, active=None, lower=0.0):
    """x_i(z) evaluated at the midpoint of each segment between breakpoints.

    `priority_of(j, b_j)` maps an agent's bid to priority space; breakpoints
    are the bid levels where agent i's priority crosses an opponent's.
    Returns (segment start, segment end, x on segment) triples covering
    [lower, b_i]; the curve is identically zero below `lower`.
    """
    pts = sorted({p for p in breakpoints if p > lower})
    cuts = [lower] + pts + [bids[i]]
    cuts = sorted({c for c in cuts if lower <= c <= bids[i]})
    if bids[i] not in cuts:
        cuts.append(bids[i])
    segments = []
    last_x = None
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        z = (lo + hi) / 2.0
        trial = list(bids)
        trial[i] = z
        prio = [priority_of(j, trial[j]) for j in range(len(bids))]
        alloc, _ = edmonds_greedy(oracle, trial, priority=prio, active=active)
        x = alloc[i]
        if last_x is not None and x < last_x - 1e-9:
            raise NonMonotoneAllocationError(
                f"allocation of agent {i} fell from {last_x} to {x} as its bid rose past {lo}"
            )
        last_x = x
        segments.append((lo, hi, x))
    return segments


def archer_tardos_payment(
    oracle, bids, i, priority_of=None, breakpoints=None, active=None, eligible_from=0.0
):
    """Threshold payment p_i = b_i x_i(b_i) - integral_0^{b_i} x_i(z) dz.

    The integrand is piecewise constant: x_i(z) only changes where agent i's
    priority crosses an opponent's level, so the integral is evaluated
    exactly as a finite sum of segment areas (no quadrature). `eligible_from`
    zeroes the curve below a participation threshold (reserve prices).
    """
    bids = _validate_bids(oracle, bids)
    if priority_of is None:
        priority_of = lambda j, b: b
    if breakpoints is None:
        breakpoints = [bids[j] for j in range(len(bids)) if j != i]
    if bids[i] <= eligible_from:
        return 0.0
    segments = _allocation_curve(
        oracle, bids, i, priority_of, breakpoints, active, lower=eligible_from
    )
    prio = [priority_of(j, bids[j]) for j in range(len(bids))]
    alloc, _ = edmonds_greedy(oracle, bids, priority=prio, active=active)
    integral = sum((hi - lo) * x for lo, hi, x in segments)
    return bids[i] * alloc[i] - integral


def vcg_outcome(oracle, bids):
    """Greedy allocation with exact threshold payments (bid = priority)."""
    bids = _validate_bids(oracle, bids)
    alloc, order = edmonds_greedy(oracle, bids)
    pay = {
        i: archer_tardos_payment(oracle, bids, i) if alloc[i] > 0 else 0.0
        for i in range(oracle.n)
    }
    return MarketOutcome(allocation=alloc, payments=pay, order=order, rule="vcg")


def vcg_externality_payment(oracle, bids, i):
    """Classic externality form, used as an independent cross-check."""
    bids = _validate_bids(oracle, bids)
    others = set(range(oracle.n)) - {i}
    alloc_wo, _ = edmonds_greedy(oracle, bids, active=others)
    alloc, _ = edmonds_greedy(oracle, bids)
    welfare_wo = sum(alloc_wo[j] * bids[j] for j in others)
    welfare_others = sum(alloc[j] * bids[j] for j in others)
    return welfare_wo - welfare_others


def myerson_outcome(oracle, bids, prior):
    """Virtual-welfare greedy with reserve; payments in bid space.

    Only bounded uniform priors are supported: their virtual value is
    strictly increasing so no ironing is needed.
    """
    if not isinstance(prior, UniformPrior):
        raise UnsupportedPriorError(
            f"only UniformPrior is supported, got {type(prior).__name__}"
        )
    bids = _validate_bids(oracle, bids)
    reserve = prior.reserve()
    active = {i for i in range(oracle.n) if bids[i] >= reserve}

    def priority_of(j, b):
        return prior.virtual_value(b)

    prio = [priority_of(j, bids[j]) for j in range(oracle.n)]
    alloc, order = edmonds_greedy(oracle, bids, priority=prio, active=active)

    def pay(i):
        if alloc[i] <= 0:
            return 0.0
        # bid levels where i's virtual value crosses an opponent's; the curve
        # is zero below the reserve, where i itself is ineligible
        pts = []
        for j in range(oracle.n):
            if j != i and j in active:
                pts.append((prior.virtual_value(bids[j]) + prior.hi) / 2.0)
        return archer_tardos_payment(
            oracle,
            bids,
            i,
            priority_of=priority_of,
            breakpoints=pts,
            active=active,
            eligible_from=reserve,
        )

    payments = {i: pay(i) for i in range(oracle.n)}
    return MarketOutcome(
        allocation=alloc,
        payments=payments,
        order=order,
        rule="myerson",
        meta={"reserve": reserve},
    )


def first_price_outcome(oracle, bids):
    bids = _validate_bids(oracle, bids)
    alloc, order = edmonds_greedy(oracle, bids)
    pay = {i: bids[i] * alloc[i] for i in range(oracle.n)}
    return MarketOutcome(allocation=alloc, payments=pay, order=order, rule="first_price")


def posted_price_outcome(oracle, bids, posted_price, seed):
    """Accept agents with b_i >= posted price in seeded random arrival order."""
    bids = _validate_bids(oracle, bids)
    if posted_price < 0:
        raise ConfigError("posted price must be nonnegative")
    rng = np.random.default_rng(seed)
    arrival = list(rng.permutation(oracle.n))
    alloc = {i: 0.0 for i in range(oracle.n)}
    taken = set()
    base = 0.0
    for i in arrival:
        if bids[i] < posted_price:
            continue
        taken.add(i)
        new = oracle.rank(taken)
        alloc[i] = new - base
        base = new
    pay = {i: posted_price * alloc[i] for i in range(oracle.n)}
    return MarketOutcome(
        allocation=alloc,
        payments=pay,
        order=[int(a) for a in arrival],
        rule="posted_price",
        meta={"posted_price": float(posted_price), "seed": int(seed)},
    )


@dataclass
class Mechanism:
    """Bundled mechanism description used by the simulator and the commit stage."""

    payment_rule: str
    prior: UniformPrior = None
    posted_price: float = None

    def __post_init__(self):
        if self.payment_rule not in PAYMENT_RULES:
            raise ConfigError(f"unknown payment rule {self.payment_rule!r}")
        if self.payment_rule == "myerson" and self.prior is None:
            raise ConfigError("myerson needs a prior")
        if self.payment_rule == "posted_price" and self.posted_price is None:
            raise ConfigError("posted_price needs a price level")

    def describe(self):
        return {
            "allocation": "priority_greedy",
            "payment_rule": self.payment_rule,
            "prior": [self.prior.lo, self.prior.hi] if self.prior else None,
            "posted_price": self.posted_price,
        }


def run_mechanism(oracle, bids, mechanism, seed=0):
    rule = mechanism.payment_rule
    if rule == "vcg":
        return vcg_outcome(oracle, bids)
    if rule == "myerson":
        return myerson_outcome(oracle, bids, mechanism.prior)
    if rule == "first_price":
        return first_price_outcome(oracle, bids)
    return posted_price_outcome(oracle, bids, mechanism.posted_price, seed)


# --------------------------------------------------------------------------
# Ascending-clock clinching auction with an audit transcript
# --------------------------------------------------------------------------


def _digest(obj):
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def rank_auth_tag(commitment_root, subset, value):
    return _digest({"root": commitment_root, "subset": sorted(subset), "value": value})


@dataclass
class ClinchTranscript:
    """Event log of one clinching run.

    Events (dicts with an "event" key):
      price_step    {"price": p}
      demand        {"agent": i, "demand": d}           -- agent-attested
      rank_announce {"subset": [...], "value": f(S), "auth_tag": tag}
      clinch        {"agent": i, "qty": q, "price": p}  -- operator-controlled
    Demands are treated as integrity-protected (signed by agents);
    rank announcements carry a tag bound to the committed oracle digest;
    clinch lines are where a dishonest operator can lie.
    """

    commitment_root: str
    events: list = field(default_factory=list)

    def price_step(self, p):
        self.events.append({"event": "price_step", "price": p})

    def demand(self, agent, d):
        self.events.append({"event": "demand", "agent": agent, "demand": d})

    def rank_announce(self, subset, value):
        self.events.append(
            {
                "event": "rank_announce",
                "subset": sorted(subset),
                "value": value,
                "auth_tag": rank_auth_tag(self.commitment_root, subset, value),
            }
        )

    def clinch(self, agent, qty, price):
        self.events.append({"event": "clinch", "agent": agent, "qty": qty, "price": price})

    def to_json(self):
        return json.dumps(
            {"commitment_root": self.commitment_root, "events": self.events},
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text):
        from .errors import StructureError

        try:
            obj = json.loads(text)
            t = cls(commitment_root=obj["commitment_root"])
            t.events = list(obj["events"])
            for e in t.events:
                e["event"]
        except (KeyError, TypeError, ValueError) as exc:
            raise StructureError(f"malformed transcript: {exc}") from exc
        return t


def clinching_auction(oracle, values, step=CLOCK_STEP, transcript=None):
    """Ascending clock with flat unit demands d_i(p) = f({i}) while p < v_i.

    The clock conceptually rises in increments of `step`; between demand
    changes nothing else moves, so the loop fast-forwards to the next exit
    price (first clock multiple at or above an active value). Supply to
    each active agent is s_i = f(D) - f(D - i), which is non-decreasing as
    others drop out, so cumulative clinches never have to be revoked.
    """
    n = oracle.n
    values = [float(v) for v in values]
    if len(values) != n:
        raise DomainError(f"expected {n} values, got {len(values)}")
    if step <= 0:
        raise ConfigError("clock step must be positive")
    demand = {i: oracle.rank({i}) for i in range(n)}
    if transcript is not None:
        for i in range(n):
            # opening report is the demand at price 0: zero-value agents
            # are out before the clock moves, and auditors replaying the
            # log reconstruct the active set from these lines
            transcript.demand(i, demand[i] if values[i] > 0 else 0.0)

    clinched = {i: 0.0 for i in range(n)}
    paid = {i: 0.0 for i in range(n)}
    active = {i for i in range(n) if values[i] > 0 and demand[i] > 0}

    def announce(subset):
        val = oracle.rank(subset)
        if transcript is not None:
            transcript.rank_announce(subset, val)
        return val

    def clinch_round(price):
        # each active agent clinches up to the slack its opponents leave
        f_active = announce(active)
        for i in sorted(active):
            f_without = announce(active - {i})
            supply = f_active - f_without
            take = max(0.0, min(demand[i], supply) - clinched[i])
            if take > 1e-12:
                clinched[i] += take
                paid[i] += take * price
                if transcript is not None:
                    transcript.clinch(i, take, price)

    price = 0.0
    if transcript is not None:
        transcript.price_step(price)
    while active:
        f_active = oracle.rank(active)
        total_demand = sum(demand[i] for i in active)
        clinch_round(price)
        if total_demand <= f_active + 1e-12:
            # market cleared: remaining quantities go out at the current price
            for i in sorted(active):
                rest = demand[i] - clinched[i]
                if rest > 1e-12:
                    clinched[i] += rest
                    paid[i] += rest * price
                    if transcript is not None:
                        transcript.clinch(i, rest, price)
            break
        # fast-forward to the next exit: first clock multiple >= min active value
        exit_value = min(values[i] for i in active)
        price = math.ceil(exit_value / step - 1e-12) * step
        if transcript is not None:
            transcript.price_step(price)
        leavers = {i for i in active if values[i] <= price + 1e-12}
        for i in sorted(leavers):
            if transcript is not None:
                transcript.demand(i, 0.0)
        active -= leavers
    return MarketOutcome(
        allocation=clinched,
        payments=paid,
        order=sorted(range(n), key=lambda i: (-values[i], i)),
        rule="clinching",
        meta={"step": step},
    )
