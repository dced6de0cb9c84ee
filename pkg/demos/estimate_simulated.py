"""Estimate every path effect on one simulated sample and compare with the truth.

Run with ``python demos/estimate_simulated.py [n] [seed]``.
"""

import sys

from recanting_twins import estimate, simulate_observed, test_intermediate_confounding
from recanting_twins.cli import format_table
from recanting_twins.identification import PATHS
from recanting_twins.nuisance import LearnerSpec
from recanting_twins.simulation import SETTINGS, truth_by_enumeration


def main(n=5000, seed=1):
    cfg = SETTINGS["default"]
    data = simulate_observed(cfg, n, seed=seed)

    # Fixed interaction GLMs keep the demo quick; drop `spec` to use CV selection.
    est = estimate(data, q=5, spec=LearnerSpec(family="interactions", selection="fixed"),
                   seed=seed)
    print(format_table(est))

    z, p = test_intermediate_confounding(est)
    print(f"\nno intermediate confounding: z = {z:.2f}, p = {p:.3g}")

    truth = truth_by_enumeration(cfg, 400_000, seed=0)
    print(f"\n{'path':<6}{'truth':>10}{'estimate':>10}{'covered':>9}")
    for path in PATHS:
        inf = est.path(path)
        print(f"{path:<6}{truth.value(path):>10.4f}{inf.estimate:>10.4f}"
              f"{str(inf.covers(truth.value(path))):>9}")


if __name__ == "__main__":
    main(*(int(v) for v in sys.argv[1:3]))
