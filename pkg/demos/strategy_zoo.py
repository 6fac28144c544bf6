#!/usr/bin/env python3
"""Every merging/selection/ensembling strategy on one table.

Covers the static family (endpoints, fixed coefficient, sweep winner, soups),
the dynamic family (per-sample, clustered, selection, output ensemble), and
the hindsight oracles. Equivalent CLI:

    dawin eval --suite <dir> --strategy zs --strategy ft ... --out zoo.json
"""
import os

from dawin import databench, harness

KINDS = [
    "zs",
    "ft",
    "static",
    "wise_sweep",
    "uniform_soup",
    "greedy_soup",
    "dawin_sample",
    "dawin_clustered",
    "dcs",
    "doe",
    "oracle_domain",
    "oracle_sample",
]


def main():
    suite = databench.generate(0, databench.SuiteSpec())
    experts = harness.build_experts(suite, with_tasks=False)
    report = harness.run_main(suite, KINDS, experts=experts)

    domains = [d.name for d in suite.test_domains]
    acc = {(r["strategy"], r["domain"]): r for r in report.rows}
    width = max(len(k) for k in KINDS)
    print(f"{'strategy':<{width}}  " + "  ".join(f"{d:>10}" for d in domains)
          + f"  {'OOD avg':>8}  {'merges':>6}")
    for kind in KINDS:
        cells = "  ".join(f"{acc[(kind, d)]['accuracy']:>10.4f}" for d in domains)
        merges = acc[(kind, domains[0])]["merge_count"]
        print(f"{kind:<{width}}  {cells}  {report.ood_average[kind]:>8.4f}  {merges:>6}")

    out = os.path.join(harness.report_root(), "strategy_zoo.json")
    harness.emit_report(report, out)
    csv = os.path.join(harness.report_root(), "strategy_zoo.csv")
    harness.emit_report(report, csv, format="csv")
    print(f"\nreports written to {out} and {csv}")


if __name__ == "__main__":
    main()
