"""Regenerate tests/data/reference_seed0.json.

The committed reference pins the seed-0 benchmark numbers that the acceptance
tests assert against: the pilot table, the best static coefficient, and the
midpoint-merge accuracies. Run from the repository root after any intentional
change to the generator, the trainer, or the frozen role configs:

    python3 tools/freeze_reference.py
"""
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dawin import databench, harness
from dawin.merge import static_eval
from dawin.util import atomic_write

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "reference_seed0.json")


def main():
    suite = databench.generate(0, databench.SuiteSpec())
    experts = harness.build_experts(suite, with_tasks=False)
    pilot = harness.run_pilot(suite, experts)

    half = {}
    for dom in suite.test_domains:
        result = static_eval(experts.arch, experts.theta0, experts.theta1, 0.5, dom)
        half[dom.name] = float((result.preds == dom.y).mean())

    reference = {
        "suite_seed": 0,
        "best_static_lam": pilot.config["best_static_lam"],
        "pilot_rows": [
            {k: row[k] for k in ("strategy", "domain", "accuracy")} for row in pilot.rows
        ],
        "pilot_ood_average": pilot.ood_average,
        "static_half_accuracy": half,
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    atomic_write(OUT, json.dumps(reference, indent=2, sort_keys=True) + "\n")
    print(f"wrote {os.path.normpath(OUT)}")
    for strategy, acc in sorted(pilot.ood_average.items()):
        print(f"  ood avg {strategy:13s} {acc:.4f}")


if __name__ == "__main__":
    main()
