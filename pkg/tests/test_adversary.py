"""Operator deviations: profitability, exactness, per-agent rationalizability."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from credmarket.adversary import (
    AgentObservation,
    Certificate,
    DeviationStrategy,
    apply_deviation,
    check_safe_deviation,
    construct_perturbation,
    walrasian_gap,
)
from credmarket.errors import (
    ConfigError,
    DomainError,
    NoDeviationError,
    NoWindowError,
)
from credmarket.mechanisms import Mechanism, UniformPrior
from credmarket.polymatroid import LaminarOracle, TableOracle, pair_gap

from conftest import random_bids, random_table_oracle

WORKED = TableOracle(2, {(): 0.0, (0,): 2.0, (1,): 2.0, (0, 1): 3.0})
VCG = Mechanism(payment_rule="vcg")


# --------------------------------------------------------------------------
# Perturbation construction


def test_worked_example_perturbation():
    strategy = construct_perturbation([10.0, 5.0], WORKED, epsilon_target=1.0)
    assert strategy.pair == (0, 1)
    assert strategy.delta == pytest.approx(1.0)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, WORKED)
    assert result.honest.payments[0] == pytest.approx(5.0, abs=1e-9)
    assert result.deviated.payments[0] == pytest.approx(6.0, abs=1e-9)
    assert result.operator_surplus == pytest.approx(1.0, abs=1e-9)


def test_perturbation_surplus_is_delta_times_gamma(rng):
    hits = 0
    for _ in range(40):
        n = int(rng.integers(2, 6))
        demands = rng.integers(1, 4, size=n).astype(float)
        cap = float(max(1, int(demands.sum()) - int(rng.integers(1, 4))))
        oracle = LaminarOracle(demands, [0] * n, [cap])
        bids = random_bids(rng, n)
        try:
            strategy = construct_perturbation(bids, oracle)
        except (NoWindowError, NoDeviationError):
            continue
        i, j = strategy.pair
        gamma = pair_gap(oracle, i, j)
        result = apply_deviation(strategy, bids, VCG, oracle)
        assert result.operator_surplus == pytest.approx(
            strategy.delta * gamma, abs=1e-9
        )
        assert result.deviated.allocation == result.honest.allocation
        hits += 1
    assert hits >= 10  # the generator must actually exercise the arm


def test_perturbation_certificates_all_safe():
    strategy = construct_perturbation([10.0, 5.0], WORKED)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, WORKED)
    assert all(result.undetectable.values())
    assert result.verify_certificates(VCG, WORKED)


def test_no_window_on_ties():
    with pytest.raises(NoWindowError):
        construct_perturbation([5.0, 5.0], WORKED)
    with pytest.raises(NoWindowError):
        construct_perturbation([5.0], TableOracle(1, {(): 0.0, (0,): 1.0}))


def test_no_deviation_when_pair_is_modular():
    modular = TableOracle(2, {(): 0.0, (0,): 1.0, (1,): 1.0, (0, 1): 2.0})
    with pytest.raises(NoDeviationError):
        construct_perturbation([10.0, 5.0], modular)


def test_delta_outside_window_rejected():
    strategy = DeviationStrategy(kind="payment_perturb", pair=(0, 1), delta=6.0)
    with pytest.raises(DomainError):
        apply_deviation(strategy, [10.0, 5.0], VCG, WORKED)


def test_walrasian_gap_basics():
    assert walrasian_gap([10.0, 5.0], (0, 1)) == pytest.approx(5.0)
    with pytest.raises(NoWindowError):
        walrasian_gap([5.0, 5.0], (0, 1))


# --------------------------------------------------------------------------
# Ghost bids


def test_ghost_bid_profitable_and_certified():
    # two agents sharing one unit behind a common bottleneck
    oracle = LaminarOracle([1.0, 1.0], [0, 0], [1.0])
    strategy = DeviationStrategy(kind="ghost_bid", source=1, level=8.0)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, oracle)
    # honest second price 5; phantom lifts the winner's threshold to 8
    assert result.honest.payments[0] == pytest.approx(5.0, abs=1e-9)
    assert result.deviated.payments[0] == pytest.approx(8.0, abs=1e-9)
    assert result.operator_surplus == pytest.approx(3.0, abs=1e-9)
    assert result.ghost["source"] == 1
    assert result.ghost["undelivered"] == pytest.approx(0.0, abs=1e-9)
    assert all(result.undetectable.values())
    assert result.verify_certificates(VCG, oracle)


def test_ghost_bid_displacement_goes_undelivered():
    oracle = LaminarOracle([1.0, 1.0], [0, 0], [2.0])
    strategy = DeviationStrategy(kind="ghost_bid", source=1, level=7.0)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, oracle)
    # the phantom displaces the source's own unit: undelivered capacity
    assert result.deviated.allocation[1] == pytest.approx(0.0, abs=1e-9)
    assert result.ghost["undelivered"] == pytest.approx(1.0, abs=1e-9)
    welfare_h = result.honest.welfare([10.0, 5.0])
    welfare_d = result.deviated.welfare([10.0, 5.0])
    assert welfare_d < welfare_h


def test_ghost_deviated_outcome_holds_real_agents_only():
    oracle = LaminarOracle([1.0, 1.0, 1.0], [0, 0, 1], [2.0, 1.0])
    strategy = DeviationStrategy(kind="ghost_bid", source=0, level=4.0)
    result = apply_deviation(strategy, [6.0, 5.0, 3.0], VCG, oracle)
    assert set(result.deviated.allocation) == {0, 1, 2}
    assert set(result.deviated.payments) == {0, 1, 2}


# --------------------------------------------------------------------------
# Detectable strategies


def test_posted_inflator_is_detectable():
    mech = Mechanism(payment_rule="posted_price", posted_price=4.0)
    strategy = DeviationStrategy(kind="posted_price_inflate", markup=0.1)
    result = apply_deviation(strategy, [10.0, 5.0], mech, WORKED)
    served = [i for i, x in result.deviated.allocation.items() if x > 0]
    assert served
    assert not any(result.undetectable[i] for i in served)
    assert result.operator_surplus == pytest.approx(
        0.1 * result.honest.revenue, abs=1e-9
    )


def test_inflator_requires_posted_rule():
    strategy = DeviationStrategy(kind="posted_price_inflate", markup=0.1)
    with pytest.raises(ConfigError):
        apply_deviation(strategy, [10.0, 5.0], VCG, WORKED)


def test_capacity_misreport_squeezes_and_flags():
    oracle = LaminarOracle([2.0, 2.0], [0, 0], [4.0])
    strategy = DeviationStrategy(kind="capacity_misreport", shrink_factor=0.5)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, oracle)
    assert result.deviated.allocation[1] < result.honest.allocation[1]


# --------------------------------------------------------------------------
# Agent-side safety checker


def test_checker_flags_ir_violation():
    obs = AgentObservation(agent=0, own_bid=5.0, own_allocation=1.0, own_payment=6.0)
    safe, cert = check_safe_deviation(obs, VCG, WORKED, prior=None)
    assert not safe and cert["flag"] == "ir"


def test_checker_flags_posted_price_mismatch():
    mech = Mechanism(payment_rule="posted_price", posted_price=4.0)
    obs = AgentObservation(agent=0, own_bid=5.0, own_allocation=1.0, own_payment=4.4)
    safe, cert = check_safe_deviation(obs, mech, WORKED, prior=None)
    assert not safe and cert["flag"] == "price"


def test_checker_certifies_honest_observation():
    out = apply_deviation(
        DeviationStrategy(kind="identity"), [10.0, 5.0], VCG, WORKED
    ).honest
    obs = AgentObservation.from_outcome(out, [10.0, 5.0], 0)
    safe, cert = check_safe_deviation(
        obs, VCG, WORKED, prior=UniformPrior(1.0, 11.0), hint=[10.0, 5.0]
    )
    assert safe
    assert cert.matches(obs, VCG, WORKED)


def test_checker_uses_hint_for_ghost_world():
    oracle = LaminarOracle([1.0, 1.0], [0, 0], [1.0])
    strategy = DeviationStrategy(kind="ghost_bid", source=1, level=8.0)
    result = apply_deviation(strategy, [10.0, 5.0], VCG, oracle)
    obs = result.observation(0)
    hint = [10.0, 8.0]  # source lifted to the phantom level
    safe, cert = check_safe_deviation(
        obs, VCG, oracle, prior=UniformPrior(1.0, 11.0), hint=hint
    )
    assert safe


@given(seed=st.integers(0, 5_000))
@settings(max_examples=40, deadline=None)
def test_certificate_replay_is_exact(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    oracle = random_table_oracle(rng, n)
    bids = random_bids(rng, n)
    result = apply_deviation(DeviationStrategy(kind="identity"), bids, VCG, oracle)
    for i in range(n):
        cert = result.certificates[i]
        obs = result.observation(i)
        assert cert.matches(obs, VCG, oracle)


def test_strategy_validation():
    with pytest.raises(ConfigError):
        DeviationStrategy(kind="mind_control")
    with pytest.raises(ConfigError):
        DeviationStrategy(kind="payment_perturb", pair=(0,), delta=1.0)
    with pytest.raises(ConfigError):
        DeviationStrategy(kind="payment_perturb", pair=(0, 1), delta=0.0)
    with pytest.raises(ConfigError):
        DeviationStrategy(kind="capacity_misreport", shrink_factor=1.5)
    with pytest.raises(ConfigError):
        DeviationStrategy(kind="discriminate", favored_set=frozenset())
