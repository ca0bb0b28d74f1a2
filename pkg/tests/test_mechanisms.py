"""Allocation and payment rules against independent references."""

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from credmarket.errors import ConfigError, DomainError, StructureError, UnsupportedPriorError
from credmarket.mechanisms import (
    ClinchTranscript,
    MarketOutcome,
    Mechanism,
    UniformPrior,
    archer_tardos_payment,
    clinching_auction,
    edmonds_greedy,
    rank_auth_tag,
    run_mechanism,
    vcg_externality_payment,
    vcg_outcome,
)
from credmarket.polymatroid import LaminarOracle, Level1Matroid, TableOracle

from conftest import (
    bruteforce_welfare,
    quadrature_payment,
    random_bids,
    random_table_oracle,
    vcg_externality,
)

WORKED = TableOracle(2, {(): 0.0, (0,): 2.0, (1,): 2.0, (0, 1): 3.0})


def all_subsets(n):
    for r in range(n + 1):
        yield from (frozenset(c) for c in itertools.combinations(range(n), r))


# --------------------------------------------------------------------------
# Greedy allocation


def test_greedy_welfare_matches_bruteforce(rng):
    for _ in range(15):
        n = int(rng.integers(2, 5))
        oracle = random_table_oracle(rng, n, cap_max=3)
        bids = random_bids(rng, n)
        alloc, _ = edmonds_greedy(oracle, bids)
        welfare = sum(bids[i] * alloc[i] for i in alloc)
        assert welfare == pytest.approx(bruteforce_welfare(oracle, bids), abs=1e-9)


def test_greedy_allocation_feasible(rng):
    for _ in range(10):
        n = int(rng.integers(2, 6))
        oracle = random_table_oracle(rng, n)
        bids = random_bids(rng, n)
        alloc, _ = edmonds_greedy(oracle, bids)
        for s in all_subsets(n):
            assert sum(alloc[i] for i in s) <= oracle.rank(s) + 1e-9


def test_zero_bids_receive_no_service():
    alloc, _ = edmonds_greedy(WORKED, [10.0, 0.0])
    assert alloc[1] == 0.0
    # and the winner is unaffected by the dead bid
    assert alloc[0] == pytest.approx(2.0)


def test_negative_bid_rejected():
    with pytest.raises(DomainError):
        edmonds_greedy(WORKED, [10.0, -1.0])


# --------------------------------------------------------------------------
# Threshold payments vs quadrature and externality


def test_worked_example_exact():
    out = vcg_outcome(WORKED, [10.0, 5.0])
    assert out.allocation[0] == pytest.approx(2.0, abs=1e-12)
    assert out.allocation[1] == pytest.approx(1.0, abs=1e-12)
    assert out.payments[0] == pytest.approx(5.0, abs=1e-9)


def test_threshold_matches_quadrature_and_externality(rng):
    for _ in range(12):
        n = int(rng.integers(2, 6))
        oracle = random_table_oracle(rng, n)
        bids = random_bids(rng, n)
        out = vcg_outcome(oracle, bids)
        for i in range(n):
            if out.allocation[i] <= 0:
                continue
            assert out.payments[i] == pytest.approx(
                quadrature_payment(oracle, bids, i), abs=1e-6 * bids[i]
            )
            assert out.payments[i] == pytest.approx(
                vcg_externality(oracle, bids, i), abs=1e-9
            )
            assert out.payments[i] == pytest.approx(
                vcg_externality_payment(oracle, bids, i), abs=1e-9
            )


@given(seed=st.integers(0, 10_000))
@settings(max_examples=80, deadline=None)
def test_payment_individual_rationality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    oracle = random_table_oracle(rng, n)
    bids = random_bids(rng, n)
    out = vcg_outcome(oracle, bids)
    for i in range(n):
        assert -1e-9 <= out.payments[i] <= bids[i] * out.allocation[i] + 1e-9


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_truthful_dominance_under_threshold_payments(seed):
    # fixed opponents: no misreport beats truthful utility
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    oracle = random_table_oracle(rng, n)
    values = random_bids(rng, n)
    i = int(rng.integers(n))
    honest = vcg_outcome(oracle, values)
    u_truth = values[i] * honest.allocation[i] - honest.payments[i]
    for shade in (0.25, 0.5, 0.8, 1.2, 1.6):
        probe = list(values)
        probe[i] = values[i] * shade
        out = run_mechanism(oracle, probe, Mechanism(payment_rule="vcg"))
        u = values[i] * out.allocation[i] - out.payments[i]
        assert u <= u_truth + 1e-7


# --------------------------------------------------------------------------
# Rule-specific behavior


def test_first_price_pays_bid():
    out = run_mechanism(WORKED, [10.0, 5.0], Mechanism(payment_rule="first_price"))
    assert out.payments[0] == pytest.approx(10.0 * out.allocation[0])
    assert out.payments[1] == pytest.approx(5.0 * out.allocation[1])


def test_posted_price_charges_exactly_the_level():
    mech = Mechanism(payment_rule="posted_price", posted_price=4.0)
    out = run_mechanism(WORKED, [10.0, 3.0], mech, seed=3)
    assert out.allocation[1] == 0.0  # bid below the level
    assert out.payments[0] == pytest.approx(4.0 * out.allocation[0])


def test_posted_price_arrival_is_seeded():
    oracle = LaminarOracle([1.0, 1.0, 1.0], [0, 0, 0], [1.0])
    mech = Mechanism(payment_rule="posted_price", posted_price=1.0)
    a = run_mechanism(oracle, [2.0, 2.0, 2.0], mech, seed=5)
    b = run_mechanism(oracle, [2.0, 2.0, 2.0], mech, seed=5)
    assert a.allocation == b.allocation


def test_myerson_reserve_excludes_low_bids():
    prior = UniformPrior(1.0, 11.0)
    mech = Mechanism(payment_rule="myerson", prior=prior)
    out = run_mechanism(WORKED, [10.0, 4.0], mech)
    assert out.meta["reserve"] == pytest.approx(5.5)
    assert out.allocation[1] == 0.0
    assert out.allocation[0] == pytest.approx(2.0)
    # alone above reserve: pays the reserve on its whole quantity
    assert out.payments[0] == pytest.approx(5.5 * 2.0, abs=1e-9)


def test_myerson_rejects_non_uniform_prior():
    from credmarket.mechanisms import myerson_outcome

    with pytest.raises(UnsupportedPriorError):
        myerson_outcome(WORKED, [10.0, 5.0], prior="lognormal")


def test_mechanism_validation():
    with pytest.raises(ConfigError):
        Mechanism(payment_rule="second_price")
    with pytest.raises(ConfigError):
        Mechanism(payment_rule="myerson")
    with pytest.raises(ConfigError):
        Mechanism(payment_rule="posted_price")
    with pytest.raises(ConfigError):
        UniformPrior(5.0, 5.0)


# --------------------------------------------------------------------------
# Clinching


def test_clinching_close_to_vcg_on_token_matroids(rng):
    for _ in range(10):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, 3))
        caps = [int(c) for c in rng.integers(1, 3, size=k)]
        elig = {
            a: set(
                int(x)
                for x in rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False)
            )
            for a in range(n)
        }
        oracle = Level1Matroid(caps, elig).as_rank_oracle()
        values = random_bids(rng, n)
        clinch = clinching_auction(oracle, values, step=0.01)
        vcg = vcg_outcome(oracle, values)
        for i in range(n):
            assert clinch.allocation[i] == pytest.approx(vcg.allocation[i], abs=1e-9)
            assert abs(clinch.payments[i] - vcg.payments[i]) <= (
                clinch.allocation[i] * 0.01 + 1e-9
            )


def test_clinching_revenue_is_payment_sum():
    oracle = WORKED
    out = clinching_auction(oracle, [10.0, 5.0])
    assert out.revenue == pytest.approx(sum(out.payments.values()))
    assert out.rule == "clinching"


def test_clinching_rejects_bad_step():
    with pytest.raises(ConfigError):
        clinching_auction(WORKED, [10.0, 5.0], step=0.0)


def test_transcript_roundtrip_and_malformed():
    t = ClinchTranscript(commitment_root="r00t")
    clinching_auction(WORKED, [10.0, 5.0], transcript=t)
    kinds = {e["event"] for e in t.events}
    assert {"price_step", "demand", "rank_announce", "clinch"} <= kinds
    back = ClinchTranscript.from_json(t.to_json())
    assert back.events == t.events
    with pytest.raises(StructureError):
        ClinchTranscript.from_json('{"events": [{}]}')
    with pytest.raises(StructureError):
        ClinchTranscript.from_json("not json")


def test_rank_auth_tag_binds_root_subset_value():
    base = rank_auth_tag("root", {0, 1}, 3.0)
    assert rank_auth_tag("root", {1, 0}, 3.0) == base
    assert rank_auth_tag("other", {0, 1}, 3.0) != base
    assert rank_auth_tag("root", {0, 1}, 3.5) != base
    assert rank_auth_tag("root", {0, 2}, 3.0) != base


def test_outcome_accessors():
    out = MarketOutcome(
        allocation={0: 2.0, 1: 1.0}, payments={0: 5.0, 1: 0.0}, order=[0, 1], rule="vcg"
    )
    assert out.revenue == pytest.approx(5.0)
    assert out.welfare([10.0, 5.0]) == pytest.approx(25.0)
