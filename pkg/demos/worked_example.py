"""The two-agent shared-pipe market, end to end.

Two agents each have 2 units of private capacity into a shared 3-unit
root. The high bidder takes its full 2 units, the low bidder squeezes 1
unit through, and the high bidder's threshold payment is 5. An operator
who quietly adds delta to the reported exit price of the runner-up lifts
that payment by exactly delta * gamma while every number each agent can
see stays consistent with some honest market.
"""

from credmarket import (
    DeviationStrategy,
    Mechanism,
    TableOracle,
    apply_deviation,
    edmonds_greedy,
    pair_gap,
    vcg_outcome,
)

oracle = TableOracle(2, {(): 0.0, (0,): 2.0, (1,): 2.0, (0, 1): 3.0})
bids = [10.0, 5.0]


def main():
    alloc, order = edmonds_greedy(oracle, bids)
    print(f"bids          {bids}")
    print(f"greedy order  {order}")
    print(f"allocation    {alloc[0]:.0f} and {alloc[1]:.0f} units")

    honest = vcg_outcome(oracle, bids)
    print(f"payments      p0 = {honest.payments[0]:.2f}, p1 = {honest.payments[1]:.2f}")

    gamma = pair_gap(oracle, 0, 1)
    print(f"\npair (0,1) shares gamma = {gamma:.0f} unit of capacity")

    for delta in (0.5, 1.0, 2.0):
        strategy = DeviationStrategy(kind="payment_perturb", pair=(0, 1), delta=delta)
        result = apply_deviation(strategy, bids, Mechanism(payment_rule="vcg"), oracle)
        print(
            f"delta = {delta:.1f}: p0 rises {honest.payments[0]:.2f} -> "
            f"{result.deviated.payments[0]:.2f}  (surplus {result.operator_surplus:.2f}"
            f" = delta * gamma), allocation unchanged = "
            f"{result.deviated.allocation == honest.allocation}"
        )

    print("\nagent 0 cannot tell: a rival truly bidding b1 + delta would produce")
    print("exactly the outcome it observed, so the deviation is safe for the operator.")


if __name__ == "__main__":
    main()
