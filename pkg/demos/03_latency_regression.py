"""Learning the cost of verification: iteration time is affine in tree size.

Feeds noisy simulated iteration times into the cost model and watches the
weighted least-squares line converge to the clock's true coefficients, then
shows staleness weighting discounting old observations after a regime change.
"""

from treedecode import CostModel, LatencyModel

import numpy as np


def main():
    truth = (3.0, 0.2)
    clock = LatencyModel(c0_base=truth[0], c1_base=truth[1], noise=0.05, seed=1)
    sizes = [1, 2, 4, 8, 16, 32, 64]
    cost = CostModel(sizes, alpha=0.3, staleness_decay=0.0)

    rng = np.random.default_rng(0)
    print(f"true line: t = {truth[0]} + {truth[1]} * size, noise +-0.05\n")
    print(f"{'obs':>4} {'beta0':>8} {'beta1':>8}")
    now = 0
    for round_ in range(1, 7):
        for _ in range(5):
            now += 1
            s = int(rng.choice(sizes))
            cost.observe(s, clock.iteration_time(s), now=now)
        try:
            b0, b1 = cost.fit(now=now)
            print(f"{now:>4} {b0:>8.4f} {b1:>8.4f}")
        except Exception as exc:  # first rounds may lack two distinct sizes
            print(f"{now:>4} (no fit yet: {exc})")

    print(f"\nestimates from the fitted line:")
    for s in (3, 24, 48):
        print(f"  T_est({s}) = {cost.estimate(s):.3f}  (true {truth[0] + truth[1] * s:.3f})")

    # Regime change: the clock slows down. With staleness decay, old points
    # fade and the line tracks the new truth instead of averaging regimes.
    slow = LatencyModel(c0_base=6.0, c1_base=0.5, noise=0.05, seed=2)
    adaptive = CostModel(sizes, alpha=0.5, staleness_decay=0.15)
    now = 0
    for clk in (clock, slow):
        for _ in range(30):
            now += 1
            s = int(rng.choice(sizes))
            adaptive.observe(s, clk.iteration_time(s), now=now)
    b0, b1 = adaptive.fit(now=now)
    print(f"\nafter a mid-run slowdown to t = 6.0 + 0.5 * size:")
    print(f"  staleness-weighted fit: ({b0:.3f}, {b1:.3f}) -- tracking the slow regime")
    print("  (weights decay as exp(-decay * age); see CostModel.diagnostics)")


if __name__ == "__main__":
    main()
