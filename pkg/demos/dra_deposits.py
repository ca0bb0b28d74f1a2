"""Deposits turn deviation profits into losses.

A deferred-revelation run: the operator commits to greedy allocation with
threshold payments on a token matroid, bidders escrow their bids, and the
operator escrows a deposit sized at n times the value ceiling. After
execution anyone can recompute the committed rule from the revealed bids;
a mismatched posting forfeits the whole deposit. The honest operator
keeps its stake, the perturbing operator ends strictly underwater.
"""

from credmarket import DeviationStrategy, UniformPrior, level1_matroid, run_dra

# two single-token integrators; agents 0 and 1 both need the first one,
# so the loser's bid prices the winner and a perturbation there has bite
MATROID = level1_matroid([1, 1], {0: {0}, 1: {0}, 2: {1}, 3: {0, 1}})
BIDS = [9.0, 7.0, 4.0, 2.0]
PRIORS = UniformPrior(1.0, 11.0)


def report(label, outcome, state):
    meta = outcome.meta
    print(f"{label}:")
    print(f"  posted payments  { {a: round(p, 2) for a, p in outcome.payments.items()} }")
    print(f"  phase            {state.phase}")
    print(f"  operator deposit {state.deposits['operator']:.1f} escrowed,"
          f" slashed {state.slashed_total:.1f}")
    print(f"  operator gain    {meta['operator_gain']:+.2f},"
          f" net after slash {meta['operator_net']:+.2f}\n")


def main():
    print(f"bids {BIDS}; committed rule: greedy + threshold on the token matroid\n")

    outcome, state = run_dra(BIDS, MATROID, PRIORS)
    report("honest execution", outcome, state)

    strategy = DeviationStrategy(kind="payment_perturb", pair=(0, 1), delta=0.5)
    outcome, state = run_dra(BIDS, MATROID, PRIORS, operator_strategy=strategy)
    report("payment perturbation (delta = 0.5)", outcome, state)

    print("the recomputation is mechanical, so any posted outcome that is not")
    print("the committed one is caught; with the deposit above total bidder")
    print("value, no deviation can net positive.")


if __name__ == "__main__":
    main()
