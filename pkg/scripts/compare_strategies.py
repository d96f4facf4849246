"""Paired comparison of evolutionary and random search on one scenario.

    python scripts/compare_strategies.py --scenario violating --pairs 20 --budget 500
"""

import argparse
import time

import numpy as np

from riskloop.dsl import load_model
from riskloop.falsify import falsify
from riskloop.scenario import bundled_path, bundled_scenario, load_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default=str(bundled_path("sorting_cell.rkml")))
    p.add_argument("--scenario", default="violating", help="bundled name or path to a scenario JSON")
    p.add_argument("--situation", default="close interaction")
    p.add_argument("--event", default="insufficient distance")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--budget", type=int, default=500)
    args = p.parse_args()

    model = load_model(args.model)
    scenario = bundled_scenario(args.scenario) if args.scenario.isidentifier() else load_scenario(args.scenario)
    rows = []
    t0 = time.perf_counter()
    for seed in range(args.pairs):
        ea = falsify(model, args.situation, args.event, args.budget, "evolutionary", seed, scenario)
        rnd = falsify(model, args.situation, args.event, args.budget, "random", seed, scenario)
        rows.append((seed, ea.best.objective, rnd.best.objective, ea.violation_rate, rnd.violation_rate))
        print(f"seed {seed:3d}  evolutionary {ea.best.objective:+.4f} ({ea.violation_rate:.2f} violating)  "
              f"random {rnd.best.objective:+.4f} ({rnd.violation_rate:.2f} violating)")
    arr = np.array(rows)
    wins = int(np.sum(arr[:, 1] <= arr[:, 2]))
    print(f"\nevolutionary best <= random best in {wins}/{args.pairs} pairs")
    print(f"mean best objective: evolutionary {arr[:, 1].mean():+.4f}, random {arr[:, 2].mean():+.4f}")
    print(f"mean share of violating samples: evolutionary {arr[:, 3].mean():.3f}, random {arr[:, 4].mean():.3f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
