"""Violation rate of the default cell as a function of luminance.

Human and robot speeds are drawn uniformly; luminance is fixed per row.
"""

import argparse

import numpy as np

from riskloop.scenario import bundled_scenario
from riskloop.sim import EnvConfig, detection_probability, simulate_batch


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="cell")
    p.add_argument("--n", type=int, default=2000, help="episodes per luminance level")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    scenario = bundled_scenario(args.scenario)
    rng = np.random.default_rng(args.seed)
    print(f"{'lux':>7}  {'p(detect)':>9}  {'violation rate':>14}  {'mean min margin':>15}")
    for lux in np.geomspace(*scenario.bounds["luminance"], 8):
        h = rng.uniform(*scenario.bounds["human_speed"], args.n)
        v = rng.uniform(*scenario.bounds["robot_speed"], args.n)
        seeds = rng.integers(0, 2**32, args.n)
        configs = [EnvConfig({"human_speed": a, "robot_speed": b, "luminance": float(lux)}, int(s))
                   for a, b, s in zip(h, v, seeds)]
        out = simulate_batch(configs, scenario)
        rate = np.mean([s.violated for s in out])
        margin = np.mean([s.min_margin for s in out])
        print(f"{lux:7.1f}  {detection_probability(lux, scenario.perception):9.3f}  {rate:14.3f}  {margin:15.3f}")


if __name__ == "__main__":
    main()
