"""One full pass of the assurance loop on the bundled model, printed step by step.

Falsify the safety event, estimate its violation rate, turn the violating
configurations into credible intervals and a likelihood, write it back into
the model, and compare goal satisfaction before and after.
"""

import argparse

from riskloop.analysis import analyze
from riskloop.dsl import load_model
from riskloop.falsify import conditional_violation_prob, falsify
from riskloop.infill import apply_feedback, derive_evidence
from riskloop.scenario import bundled_path, bundled_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="violating")
    p.add_argument("--budget", type=int, default=500)
    p.add_argument("--mc-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.9)
    args = p.parse_args()

    model = load_model(bundled_path("sorting_cell.rkml"))
    scenario = bundled_scenario(args.scenario)
    situation, event = "close interaction", "insufficient distance"

    result = falsify(model, situation, event, args.budget, "evolutionary", args.seed, scenario)
    best = result.best
    print(f"search: {len(result.violations)}/{result.budget_used} violating, best objective {best.objective:+.4f} at")
    for name, value in best.values.items():
        print(f"    {name} = {value:.3f}")

    rate = conditional_violation_prob(result.space, model, situation, event, args.mc_samples, args.seed + 1, scenario)
    evidence, _ = derive_evidence(result, rate, args.alpha)
    print(f"\nuniform violation rate {rate:.4f}")
    if evidence.intervals is not None:
        ci = evidence.intervals
        print(f"{ci.alpha:.0%} highest-density region covers {ci.volume_fraction:.3f} of the search space")
        for name, spans in ci.intervals.items():
            print(f"    {name}: " + ", ".join(f"[{lo:.3g}, {hi:.3g}]" for lo, hi in spans))
    print("sensitivity: " + ", ".join(f"{n} {s:.2f}" for n, s in evidence.sensitivity))
    print(f"likelihood {model.event(event).likelihood} -> {evidence.likelihood:.4f}")

    before = analyze(model)
    after = analyze(apply_feedback(model, event, evidence), evidence=(evidence.source,))
    print("\ngoal satisfaction")
    for g in model.goals:
        print(f"    {g.name:<26} {before.satisfaction(g.name):.3f} -> {after.satisfaction(g.name):.3f}")


if __name__ == "__main__":
    main()
