"""Operator deviations and the agent-side undetectability checker.

The operator runs the allocation; each agent sees only its own bid,
allocation, and payment. That information gap is what this module probes:

* ``DeviationStrategy`` enumerates the operator moves (phantom bids,
  targeted payment nudges, capacity misreports, posted-price markups,
  discriminatory priority).
* ``construct_perturbation`` builds the canonical profitable nudge: raise
  one losing bid inside its Walrasian window so a winner's threshold
  payment climbs by exactly delta * gamma_ij.
* ``apply_deviation`` executes a strategy against a bid profile and returns
  both worlds plus, per agent, a counterfactual bid profile ("certificate")
  under which honest execution reproduces what that agent saw.
* ``check_safe_deviation`` is the agent-side tool: given only one agent's
  observation, decide whether ANY legitimate opponent profile explains it.

Certificates may extend the ground set by one substitute entrant (a new
bidder contesting an existing slot); the sealed-bid information set does
not reveal how many opponents showed up, so rationalizing profiles are not
confined to the original dimension.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    NoDeviationError,
    NoWindowError,
)
from .mechanisms import (
    MarketOutcome,
    archer_tardos_payment,
    edmonds_greedy,
    run_mechanism,
)
from .polymatroid import RANK_TOL, RankOracle, SubstituteCloneOracle, pair_gap

STRATEGY_KINDS = (
    "identity",
    "ghost_bid",
    "payment_perturb",
    "capacity_misreport",
    "posted_price_inflate",
    "discriminate",
)

#: default phantom amplitude: the extraction target per round is
#: epsilon_scale * (max realized value); the phantom's level itself is
#: placed by the operator, see `apply_deviation` / `best_ghost_deviation`.
GHOST_EPSILON_SCALE = 1.1

MATCH_TOL = 1e-9


@dataclass
class DeviationStrategy:
    """One operator move. Only the fields of the chosen kind are read."""

    kind: str
    pair: tuple = None  # payment_perturb: (winner i, nudged loser j)
    delta: float = None  # payment_perturb: bid nudge, 0 < delta < window
    epsilon_scale: float = GHOST_EPSILON_SCALE  # ghost_bid
    level: float = None  # ghost_bid: explicit phantom bid (overrides scale)
    source: int = None  # ghost_bid: whose slot the phantom contests
    shrink_factor: float = None  # capacity_misreport
    markup: float = None  # posted_price_inflate
    favored_set: frozenset = None  # discriminate

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown deviation kind {self.kind!r}")
        if self.kind == "payment_perturb":
            if self.pair is None or len(self.pair) != 2:
                raise ConfigError("payment_perturb needs a (winner, loser) pair")
            if self.delta is None or self.delta <= 0:
                raise ConfigError("payment_perturb needs delta > 0")
        if self.kind == "ghost_bid":
            if self.epsilon_scale is None or self.epsilon_scale <= 0:
                raise ConfigError("ghost_bid needs epsilon_scale > 0")
        if self.kind == "capacity_misreport":
            if not (self.shrink_factor and 0 < self.shrink_factor < 1):
                raise ConfigError("capacity_misreport needs shrink_factor in (0, 1)")
        if self.kind == "posted_price_inflate":
            if self.markup is None or self.markup <= 0:
                raise ConfigError("posted_price_inflate needs markup > 0")
        if self.kind == "discriminate":
            if not self.favored_set:
                raise ConfigError("discriminate needs a nonempty favored set")
            self.favored_set = frozenset(self.favored_set)

    def to_json(self):
        out = {"kind": self.kind}
        if self.kind == "payment_perturb":
            out["pair"] = list(self.pair)
            out["delta"] = self.delta
        elif self.kind == "ghost_bid":
            out["epsilon_scale"] = self.epsilon_scale
            if self.level is not None:
                out["level"] = self.level
            if self.source is not None:
                out["source"] = self.source
        elif self.kind == "capacity_misreport":
            out["shrink_factor"] = self.shrink_factor
        elif self.kind == "posted_price_inflate":
            out["markup"] = self.markup
        elif self.kind == "discriminate":
            out["favored_set"] = sorted(self.favored_set)
        return out

    @classmethod
    def from_json(cls, blob):
        blob = dict(blob)
        if "pair" in blob:
            blob["pair"] = tuple(blob["pair"])
        if "favored_set" in blob:
            blob["favored_set"] = frozenset(blob["favored_set"])
        return cls(**blob)


@dataclass
class AgentObservation:
    """Exactly the sealed-bid information set of one agent, nothing else."""

    agent: int
    own_bid: float
    own_allocation: float
    own_payment: float

    @classmethod
    def from_outcome(cls, outcome, bids, agent):
        return cls(
            agent=agent,
            own_bid=float(bids[agent]),
            own_allocation=float(outcome.allocation[agent]),
            own_payment=float(outcome.payments[agent]),
        )

    def to_json(self):
        return {
            "agent": self.agent,
            "own_bid": self.own_bid,
            "own_allocation": self.own_allocation,
            "own_payment": self.own_payment,
        }


@dataclass
class Certificate:
    """A rationalizing counterfactual: honest execution of `profile` (plus
    an optional substitute entrant) reproduces the agent's observation."""

    agent: int
    profile: list
    entrant: dict = None  # {"source": agent id, "level": bid} or None

    def replay(self, mechanism, oracle, seed=0):
        """Honest-run the certificate world; return (x_agent, p_agent)."""
        if self.entrant is not None:
            oracle = SubstituteCloneOracle(oracle, self.entrant["source"])
            profile = list(self.profile) + [self.entrant["level"]]
        else:
            profile = list(self.profile)
        out = run_mechanism(oracle, profile, mechanism, seed=seed)
        return out.allocation[self.agent], out.payments[self.agent]

    def matches(self, observation, mechanism, oracle, seed=0, tol=1e-7):
        if abs(self.profile[self.agent] - observation.own_bid) > tol:
            return False
        x, p = self.replay(mechanism, oracle, seed=seed)
        return (
            abs(x - observation.own_allocation) <= tol
            and abs(p - observation.own_payment) <= tol
        )

    def to_json(self):
        return {
            "agent": self.agent,
            "profile": [float(b) for b in self.profile],
            "entrant": self.entrant,
        }


@dataclass
class DeviationResult:
    """Honest vs deviated execution plus per-agent rationalizability."""

    strategy: DeviationStrategy
    bids: list
    honest: MarketOutcome
    deviated: MarketOutcome
    undetectable: dict  # agent -> bool
    certificates: dict  # agent -> Certificate or None
    ghost: dict = None  # {"source", "level", "undelivered"} for ghost_bid

    @property
    def operator_surplus(self):
        return self.deviated.revenue - self.honest.revenue

    def observation(self, agent):
        return AgentObservation.from_outcome(self.deviated, self.bids, agent)

    def verify_certificates(self, mechanism, oracle, seed=0, tol=1e-7):
        """Replay every certificate; True per agent iff it reproduces the
        deviated observation exactly under honest execution."""
        verdict = {}
        for i, cert in self.certificates.items():
            if cert is None:
                verdict[i] = False
                continue
            verdict[i] = cert.matches(
                self.observation(i), mechanism, oracle, seed=seed, tol=tol
            )
        return verdict

    def to_json(self):
        def outcome_json(out):
            return {
                "allocation": {str(k): v for k, v in out.allocation.items()},
                "payments": {str(k): v for k, v in out.payments.items()},
                "rule": out.rule,
            }

        return {
            "strategy": self.strategy.to_json(),
            "bids": [float(b) for b in self.bids],
            "honest": outcome_json(self.honest),
            "deviated": outcome_json(self.deviated),
            "operator_surplus": self.operator_surplus,
            "undetectable": {str(k): bool(v) for k, v in self.undetectable.items()},
            "certificates": {
                str(k): (c.to_json() if c is not None else None)
                for k, c in self.certificates.items()
            },
            "ghost": self.ghost,
        }


def walrasian_gap(bids, pair):
    """Largest symmetric nudge preserving the priority order around `pair`.

    For winner i and runner-up j this is min(b_i - b_j, b_j - max rest):
    any raise of b_j below the gap moves nobody across anybody. Zero bids
    are ignored (non-bidders are never served, so never crossed). Raises
    NoWindowError when the profile sits on a boundary (ties) or the pair
    is not strictly ordered above the field.
    """
    i, j = pair
    if i == j:
        raise DomainError("pair must name two distinct agents")
    b_i, b_j = float(bids[i]), float(bids[j])
    if not b_i > b_j > 0:
        raise NoWindowError(
            f"need b_{i} > b_{j} > 0, got ({b_i}, {b_j}); no perturbation window"
        )
    rest = [float(b) for k, b in enumerate(bids) if k not in (i, j) and b > 0]
    gap = b_i - b_j
    if rest:
        gap = min(gap, b_j - max(rest))
    if gap <= 0:
        raise NoWindowError(
            f"pair ({i}, {j}) is not strictly above the field; window is empty"
        )
    return gap


def construct_perturbation(bids, oracle, epsilon_target=None):
    """Build the canonical profitable payment perturbation.

    Sorts the profile, takes the top two bidders (the only pair that can
    own a Walrasian window), checks that they actually share capacity
    (gamma > 0), and returns a payment_perturb strategy with delta at the
    window midpoint — or delta = epsilon_target / gamma when a specific
    revenue increment is requested. The resulting payment increase is
    exactly delta * gamma.

    Cost: one sort plus O(1) rank calls, so O(n log n + T_f).
    """
    n = len(bids)
    if n < 2:
        raise NoWindowError("need at least two bidders")
    order = sorted(range(n), key=lambda k: (-bids[k], k))
    i, j = order[0], order[1]
    gap = walrasian_gap(bids, (i, j))  # NoWindowError on ties/boundaries
    gamma = pair_gap(oracle, i, j)
    if gamma <= RANK_TOL:
        raise NoDeviationError(
            f"top pair ({i}, {j}) shares no capacity (gamma = {gamma}); "
            "payment perturbation has nothing to lever"
        )
    delta = gap / 2.0
    if epsilon_target is not None:
        if epsilon_target <= 0:
            raise ConfigError("epsilon_target must be positive")
        delta = min(delta, epsilon_target / gamma)
    return DeviationStrategy(kind="payment_perturb", pair=(i, j), delta=delta)


class _ScaledOracle(RankOracle):
    """Capacity misreport: every rank scaled by a factor in (0, 1)."""

    def __init__(self, base, factor):
        self.base = base
        self.factor = float(factor)
        self.evaluator = "scaled"
        super().__init__(base.n)

    def _rank(self, subset):
        return self.factor * self.base.rank(subset)

    def describe(self):
        return {"evaluator": "scaled", "factor": self.factor, "base": self.base.describe()}


def _auto_ghost_source(bids, level):
    """Whose slot does a phantom at `level` contest: the highest bidder
    strictly below it, else the top bidder."""
    below = [k for k, b in enumerate(bids) if 0 < b < level]
    if below:
        return max(below, key=lambda k: (bids[k], -k))
    live = [k for k, b in enumerate(bids) if b > 0]
    if not live:
        raise NoDeviationError("no live bids for a phantom to contest")
    return max(live, key=lambda k: (bids[k], -k))


def _posted_allocation(oracle, bids, posted_price, arrival):
    """Posted-price pass over an explicit arrival order."""
    alloc = {i: 0.0 for i in range(oracle.n)}
    taken = set()
    base = 0.0
    for i in arrival:
        if bids[i] < posted_price or bids[i] <= 0:
            continue
        taken.add(i)
        new = oracle.rank(taken)
        alloc[i] = new - base
        base = new
    return alloc


def _ghost_posted_outcomes(oracle, bids, mechanism, seed, source, level):
    """Posted-price world with the phantom arriving just ahead of its source."""
    n = oracle.n
    rng = np.random.default_rng(seed)
    arrival = list(rng.permutation(n))  # same stream as the honest run
    plus = SubstituteCloneOracle(oracle, source)
    clone_id = plus.clone_id
    dev_arrival = []
    for i in arrival:
        if i == source:
            dev_arrival.append(clone_id)
        dev_arrival.append(i)
    bids_plus = list(bids) + [level]
    alloc = _posted_allocation(plus, bids_plus, mechanism.posted_price, dev_arrival)
    pay = {i: mechanism.posted_price * alloc[i] for i in range(n)}
    out = MarketOutcome(
        allocation={i: alloc[i] for i in range(n)},
        payments=pay,
        order=[i for i in dev_arrival if i != clone_id],
        rule="posted_price",
        meta={"posted_price": mechanism.posted_price},
    )
    return out, alloc[clone_id]


def _unchanged(honest, deviated, i, tol=MATCH_TOL):
    return (
        abs(honest.allocation[i] - deviated.allocation[i]) <= tol
        and abs(honest.payments[i] - deviated.payments[i]) <= tol
    )


def _ghost_certificates(oracle, bids, mechanism, seed, honest, deviated, source, level):
    """Per-agent rationalizations of a ghost world.

    For everyone except the source, the deviated world is literally the
    honest run of the profile with the source's bid raised to the phantom
    level (the substitute clone presses the same capacity slot). The source
    itself, when displaced, is explained either by opponents filling its
    slot (fixed ground set) or by a substitute entrant outbidding it.
    """
    n = len(bids)
    raised = list(bids)
    raised[source] = level
    certs, safe = {}, {}
    for i in range(n):
        if _unchanged(honest, deviated, i):
            cert = Certificate(agent=i, profile=list(bids))
        elif i != source:
            cert = Certificate(agent=i, profile=raised)
        else:
            cert = None
            top = max(max(bids), level)
            fill = [top if k != source else bids[source] for k in range(n)]
            cand = Certificate(agent=source, profile=fill)
            obs = AgentObservation.from_outcome(deviated, bids, source)
            if cand.matches(obs, mechanism, oracle, seed=seed):
                cert = cand
            elif level > bids[source]:
                cand = Certificate(
                    agent=source,
                    profile=list(bids),
                    entrant={"source": source, "level": level},
                )
                if cand.matches(obs, mechanism, oracle, seed=seed):
                    cert = cand
        if cert is not None:
            obs = AgentObservation.from_outcome(deviated, bids, i)
            if not cert.matches(obs, mechanism, oracle, seed=seed):
                cert = None
        certs[i] = cert
        safe[i] = cert is not None
    return certs, safe


def apply_deviation(strategy, bids, mechanism, oracle, seed=0):
    """Execute an operator strategy; return both worlds plus certificates.

    Ghost bids insert one phantom (substitute clone of `source`, bidding
    `level`, default epsilon_scale * max bid) and rerun the mechanism; real
    agents are charged the resulting payments while the phantom's
    allocation goes undelivered. Payment perturbation recomputes the
    winner's threshold under the nudged counterfactual; the allocation is
    untouched. Misreports scale the oracle; markups scale posted payments;
    discrimination reorders priority.
    """
    bids = [float(b) for b in bids]
    n = oracle.n
    if len(bids) != n:
        raise DomainError(f"expected {n} bids, got {len(bids)}")
    rule = mechanism.payment_rule
    if strategy.kind == "posted_price_inflate" and rule != "posted_price":
        raise ConfigError("posted_price_inflate only applies to posted-price")
    if strategy.kind == "discriminate" and rule not in ("vcg", "first_price"):
        raise ConfigError("discriminate is implemented for vcg/first_price only")

    honest = run_mechanism(oracle, bids, mechanism, seed=seed)
    agents = range(n)

    if strategy.kind == "identity":
        certs = {i: Certificate(agent=i, profile=list(bids)) for i in agents}
        return DeviationResult(
            strategy=strategy,
            bids=bids,
            honest=honest,
            deviated=honest,
            undetectable={i: True for i in agents},
            certificates=certs,
        )

    if strategy.kind == "payment_perturb":
        i, j = strategy.pair
        gap = walrasian_gap(bids, (i, j))
        if not strategy.delta < gap:
            raise DomainError(
                f"delta {strategy.delta} is outside the open window (0, {gap})"
            )
        perturbed = list(bids)
        perturbed[j] += strategy.delta
        shadow = run_mechanism(oracle, perturbed, mechanism, seed=seed)
        if abs(shadow.allocation[i] - honest.allocation[i]) > 1e-9:
            raise DomainError(
                "perturbation moved the winner's allocation; window logic is off"
            )
        payments = dict(honest.payments)
        payments[i] = shadow.payments[i]
        deviated = MarketOutcome(
            allocation=dict(honest.allocation),
            payments=payments,
            order=list(honest.order),
            rule=honest.rule,
            meta={"perturbed_agent": j, "delta": strategy.delta},
        )
        certs, safe = {}, {}
        for k in agents:
            profile = perturbed if k == i else list(bids)
            cert = Certificate(agent=k, profile=list(profile))
            obs = AgentObservation.from_outcome(deviated, bids, k)
            ok = cert.matches(obs, mechanism, oracle, seed=seed)
            certs[k] = cert if ok else None
            safe[k] = ok
        return DeviationResult(
            strategy=strategy,
            bids=bids,
            honest=honest,
            deviated=deviated,
            undetectable=safe,
            certificates=certs,
        )

    if strategy.kind == "ghost_bid":
        level = strategy.level
        if level is None:
            level = strategy.epsilon_scale * max(bids)
        source = strategy.source
        if source is None:
            source = _auto_ghost_source(bids, level)
        if not 0 <= source < n:
            raise DomainError(f"ghost source {source} is not in the ground set")
        if rule == "posted_price":
            deviated, undelivered = _ghost_posted_outcomes(
                oracle, bids, mechanism, seed, source, level
            )
        else:
            plus = SubstituteCloneOracle(oracle, source)
            out_plus = run_mechanism(
                plus, list(bids) + [level], mechanism, seed=seed
            )
            deviated = MarketOutcome(
                allocation={i: out_plus.allocation[i] for i in agents},
                payments={i: out_plus.payments[i] for i in agents},
                order=[i for i in out_plus.order if i != plus.clone_id],
                rule=out_plus.rule,
                meta={"ghost_level": level, "ghost_source": source},
            )
            undelivered = out_plus.allocation[plus.clone_id]
        certs, safe = _ghost_certificates(
            oracle, bids, mechanism, seed, honest, deviated, source, level
        )
        return DeviationResult(
            strategy=strategy,
            bids=bids,
            honest=honest,
            deviated=deviated,
            undetectable=safe,
            certificates=certs,
            ghost={"source": source, "level": level, "undelivered": undelivered},
        )

    if strategy.kind == "capacity_misreport":
        shrunk = _ScaledOracle(oracle, strategy.shrink_factor)
        dev = run_mechanism(shrunk, bids, mechanism, seed=seed)
        deviated = MarketOutcome(
            allocation=dict(dev.allocation),
            payments=dict(dev.payments),
            order=list(dev.order),
            rule=dev.rule,
            meta={"shrink_factor": strategy.shrink_factor},
        )
        certs, safe = {}, {}
        for i in agents:
            obs = AgentObservation.from_outcome(deviated, bids, i)
            ok, cert = check_safe_deviation(
                obs, mechanism, oracle, prior=None, search_budget=64, seed=seed
            )
            certs[i] = cert if ok else None
            safe[i] = ok
        return DeviationResult(
            strategy=strategy,
            bids=bids,
            honest=honest,
            deviated=deviated,
            undetectable=safe,
            certificates=certs,
        )

    if strategy.kind == "posted_price_inflate":
        factor = 1.0 + strategy.markup
        payments = {i: honest.payments[i] * factor for i in agents}
        deviated = MarketOutcome(
            allocation=dict(honest.allocation),
            payments=payments,
            order=list(honest.order),
            rule=honest.rule,
            meta={"markup": strategy.markup},
        )
        certs, safe = {}, {}
        for i in agents:
            if deviated.allocation[i] <= 0:
                cert = Certificate(agent=i, profile=list(bids))
                certs[i], safe[i] = cert, True
            else:
                # charged agents see a unit price above the posted one; no
                # honest execution can produce that
                certs[i], safe[i] = None, False
        return DeviationResult(
            strategy=strategy,
            bids=bids,
            honest=honest,
            deviated=deviated,
            undetectable=safe,
            certificates=certs,
        )

    # discriminate: favored agents outrank everyone regardless of bid
    favored = strategy.favored_set
    lift = 2.0 * max(bids) + 1.0
    prio = [bids[k] + (lift if k in favored else 0.0) for k in agents]
    alloc, order = edmonds_greedy(oracle, bids, priority=prio)
    if rule == "first_price":
        payments = {i: bids[i] * alloc[i] for i in agents}
    else:
        def priority_of(k, b):
            return b + (lift if k in favored else 0.0)

        payments = {}
        for i in agents:
            same_class = [bids[k] for k in agents if k != i and (k in favored) == (i in favored)]
            payments[i] = (
                archer_tardos_payment(
                    oracle, bids, i, priority_of=priority_of, breakpoints=same_class
                )
                if alloc[i] > 0
                else 0.0
            )
    deviated = MarketOutcome(
        allocation=alloc,
        payments=payments,
        order=order,
        rule=rule,
        meta={"favored": sorted(favored)},
    )
    certs, safe = {}, {}
    for i in agents:
        obs = AgentObservation.from_outcome(deviated, bids, i)
        ok, cert = check_safe_deviation(
            obs, mechanism, oracle, prior=None, search_budget=64, seed=seed
        )
        certs[i] = cert if ok else None
        safe[i] = ok
    return DeviationResult(
        strategy=strategy,
        bids=bids,
        honest=honest,
        deviated=deviated,
        undetectable=safe,
        certificates=certs,
    )


# --------------------------------------------------------------------------
# Agent-side safety checker


def _support_cap(prior, bids):
    """Upper end of the rationalizable bid range.

    Latency decay maps base values below the prior ceiling, so realized
    bids live in [0, hi]; without a prior fall back to the observed range.
    """
    if prior is not None:
        return prior.hi
    return max(bids) if bids else 1.0


def check_safe_deviation(
    observation, mechanism, oracle, prior, search_budget=2000, seed=0, hint=None
):
    """Can ANY honest execution explain this agent's observation?

    Returns (safe, certificate). `certificate` is a Certificate when safe;
    otherwise a dict with a "flag" key: "ir" / "price" (provably no honest
    execution exists) or "budget" (search exhausted — inconclusive, never
    treated as proof of detectability).

    The analytic fast path for greedy mechanisms solves for a single
    opponent bid level beta making the threshold integral match, optionally
    under one capacity-consuming opponent (or substitute entrant) parked
    above the agent; a seeded grid search over opponent profiles spends
    whatever budget remains.
    """
    i = observation.agent
    b = observation.own_bid
    x = observation.own_allocation
    p = observation.own_payment
    n = oracle.n
    tol = 1e-7
    rule = mechanism.payment_rule

    if x < -tol or p < -tol:
        return False, {"flag": "ir"}
    if p > b * x + tol:
        return False, {"flag": "ir"}
    if x > oracle.rank({i}) + tol:
        return False, {"flag": "capacity"}
    if rule == "posted_price" and x > 0:
        unit = mechanism.posted_price
        if abs(p - unit * x) > tol:
            # honest posted-price charges exactly the posted unit price
            return False, {"flag": "price"}
    if rule == "first_price" and x > 0 and abs(p - b * x) > tol:
        return False, {"flag": "price"}

    budget = int(search_budget)
    spent = 0
    hi_cap = _support_cap(prior, [b])

    def try_cert(profile, entrant=None):
        nonlocal spent
        if spent >= budget:
            return None
        spent += 1
        cert = Certificate(agent=i, profile=list(profile), entrant=entrant)
        if cert.matches(observation, mechanism, oracle, seed=seed, tol=tol):
            return cert
        return None

    candidates = []
    if hint is not None:
        profile = list(hint)
        profile[i] = b
        candidates.append((profile, None))

    zeros = [0.0] * n
    solo = list(zeros)
    solo[i] = b
    candidates.append((solo, None))

    ceiling = max(hi_cap, b)
    walls = [ceiling if k != i else b for k in range(n)]
    candidates.append((walls, None))
    if ceiling > b:
        candidates.append((solo, {"source": i, "level": ceiling}))

    for profile, entrant in candidates:
        cert = try_cert(profile, entrant)
        if cert is not None:
            return True, cert

    # single-opponent solve: one opponent j parked above (optional), one
    # opponent k at the beta making the threshold integral come out to p
    if rule in ("vcg", "myerson", "first_price") and b > 0:
        opponents = [j for j in range(n) if j != i]

        def marginal_after(group):
            return max(0.0, oracle.rank(set(group) | {i}) - oracle.rank(set(group)))

        shades = [(None, None)]  # nobody parked above
        shades += [((j,), None) for j in opponents]
        shades += [((j, k), None) for j in opponents for k in opponents if j < k]
        shades += [((j,), ("entrant", j)) for j in opponents + [i]]
        for above, ent in shades:
            if spent >= budget:
                break
            if ent is not None:
                _, src = ent
                ghost_rank = SubstituteCloneOracle(oracle, src)
                x_top = max(
                    0.0,
                    ghost_rank.rank({ghost_rank.clone_id, i})
                    - ghost_rank.rank({ghost_rank.clone_id}),
                )
            elif above is None:
                x_top = marginal_after(())
            else:
                x_top = marginal_after(above)
            if abs(x_top - x) > tol:
                continue
            base_profile = list(zeros)
            base_profile[i] = b
            entrant = None
            if ent is not None:
                entrant = {"source": ent[1], "level": ceiling}
            elif above:
                for j in above:
                    base_profile[j] = ceiling
            if rule == "first_price" or p <= tol:
                cert = try_cert(base_profile, entrant)
                if cert is not None:
                    return True, cert
                continue
            group = list(above) if (above and ent is None) else []
            for k in opponents:
                if k in group:
                    continue
                x_lo = marginal_after(group + [k])
                if x_lo >= x - tol:
                    continue
                beta = p / (x - x_lo)
                if not (tol < beta < b and beta <= hi_cap):
                    continue
                profile = list(base_profile)
                profile[k] = beta
                cert = try_cert(profile, entrant)
                if cert is not None:
                    return True, cert

    # seeded grid fallback over opponent profiles
    rng = np.random.default_rng(
        abs(hash((round(b, 9), round(x, 9), round(p, 9), i))) % (2**32)
    )
    while spent < budget:
        profile = list(rng.uniform(0.0, hi_cap, size=n))
        profile[i] = b
        cert = try_cert(profile)
        if cert is not None:
            return True, cert
    return False, {"flag": "budget"}


def best_ghost_deviation(bids, oracle, mechanism, seed=0, objective="damage"):
    """Operator-side scan for the most damaging profitable phantom.

    Enumerates (source, window) placements — every agent with capacity, and
    every gap between consecutive bid levels of agents entangled with it —
    evaluates each candidate exactly by rerunning the mechanism with the
    substitute clone, and keeps profitable ones (surplus > 0). Objective
    "damage" picks the max welfare destruction among those; "surplus" picks
    the max revenue gain. Returns (strategy, result) or None.
    """
    n = oracle.n
    bids = [float(b) for b in bids]
    top = max(bids) if bids else 0.0
    if top <= 0:
        return None
    best = None
    seen = set()
    for s in range(n):
        if oracle.rank({s}) <= RANK_TOL:
            continue
        rivals = [
            bids[k]
            for k in range(n)
            if k != s and bids[k] > max(bids[s], 0.0) and pair_gap(oracle, s, k) > RANK_TOL
        ]
        levels = sorted(set(rivals))
        floor = max(bids[s], 0.0)
        windows = []
        lo = floor
        for lv in levels:
            if lv > lo + RANK_TOL:
                windows.append((lo, lv))
            lo = lv
        windows.append((lo, max(lo, top) * GHOST_EPSILON_SCALE))
        for w_lo, w_hi in windows:
            if w_hi - w_lo <= RANK_TOL:
                continue
            level = w_lo + 0.9 * (w_hi - w_lo)
            key = (s, round(level, 12))
            if key in seen:
                continue
            seen.add(key)
            strategy = DeviationStrategy(kind="ghost_bid", source=s, level=level)
            result = apply_deviation(strategy, bids, mechanism, oracle, seed=seed)
            surplus = result.operator_surplus
            if surplus <= RANK_TOL:
                continue
            damage = result.honest.welfare(bids) - result.deviated.welfare(bids)
            score = damage if objective == "damage" else surplus
            if best is None or score > best[0]:
                best = (score, strategy, result)
    if best is None:
        return None
    return best[1], best[2]
