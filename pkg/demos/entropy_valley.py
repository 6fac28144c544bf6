#!/usr/bin/env python3
"""Entropy valley: mean prediction entropy along the interpolation path.

For each test domain, sweep the static coefficient over the grid and record
the merged model's mean prediction entropy. The curve dipping below both
endpoints is the valley; the dawin_sample point shows how far per-sample
coefficients descend into it.
"""
import numpy as np

from dawin import databench, harness
from dawin.classifier import forward_batch
from dawin.expertise import entropy
from dawin.merge import DEFAULT_GRID, dawin_sample_eval, static_eval

suite = databench.generate(0, databench.SuiteSpec())
experts = harness.build_experts(suite, with_tasks=False)
arch, t0, t1 = experts.arch, experts.theta0, experts.theta1

for dom in suite.test_domains:
    h_zs = float(entropy(forward_batch(arch, t0, dom.x)).mean())
    h_ft = float(entropy(forward_batch(arch, t1, dom.x)).mean())
    curve = [
        float(entropy(static_eval(arch, t0, t1, g, dom).probs).mean())
        for g in DEFAULT_GRID
    ]
    h_dw = float(entropy(dawin_sample_eval(arch, t0, t1, dom).probs).mean())

    lo, hi = min(curve + [h_zs, h_ft, h_dw]), max(curve + [h_zs, h_ft, h_dw])
    span = hi - lo or 1.0
    bars = "".join("▁▂▃▄▅▆▇█"[int(7 * (c - lo) / span)] for c in curve)
    best = int(np.argmin(curve))
    print(f"{dom.name}")
    print(f"  endpoints  zs {h_zs:.4f}   ft {h_ft:.4f}")
    print(f"  static     {bars}   min {curve[best]:.4f} at lam={DEFAULT_GRID[best]}")
    marker = "below the static minimum" if h_dw <= curve[best] else "above the static minimum"
    print(f"  dawin      {h_dw:.4f}  ({marker})")
    print()
