#!/usr/bin/env python3
"""Why entropy works as an expertise proxy: the correlation analysis.

Splits every test domain by the joint correctness of the two endpoint models
(TrueTrue / TrueFalse / FalseTrue / FalseFalse), then correlates the entropy
ratio H0/(H0+H1) with the cross-entropy ratio X0/(X0+X1) inside each split.
A strong positive TrueTrue correlation means the label-free ratio tracks the
oracle one exactly where both models are usable.

Also prints the domain-level offset terms so the adjustment is visible.
"""
import numpy as np

from dawin import databench, harness
from dawin.classifier import forward_batch
from dawin.expertise import (
    coeff_pair,
    coeff_pair_offset,
    entropy,
    ratio_correlation,
    split_masks,
    xentropy,
)

suite = databench.generate(0, databench.SuiteSpec())
experts = harness.build_experts(suite, with_tasks=False)
arch, t0, t1 = experts.arch, experts.theta0, experts.theta1

SPLITS = ("TrueTrue", "TrueFalse", "FalseTrue", "FalseFalse")

print(f"{'domain':<12} {'split sizes (TT/TF/FT/FF)':<28} {'TrueTrue r':>10}")
for dom in suite.test_domains:
    p0 = forward_batch(arch, t0, dom.x)
    p1 = forward_batch(arch, t1, dom.x)
    h0, h1 = entropy(p0), entropy(p1)
    l0 = np.minimum(xentropy(p0, dom.y), harness.XENT_CLIP)
    l1 = np.minimum(xentropy(p1, dom.y), harness.XENT_CLIP)
    preds0, preds1 = p0.argmax(axis=1), p1.argmax(axis=1)

    masks = split_masks(preds0, preds1, dom.y)
    sizes = "/".join(str(int(masks[s].sum())) for s in SPLITS)
    corr = ratio_correlation(h0, h1, l0, l1, preds0, preds1, dom.y)
    tt = corr["TrueTrue"]
    tt_txt = "--" if tt is None else f"{tt:10.4f}"
    print(f"{dom.name:<12} {sizes:<28} {tt_txt:>10}")

print("\noffset adjustment on id_test:")
dom = suite.id_test
p0 = forward_batch(arch, t0, dom.x)
p1 = forward_batch(arch, t1, dom.x)
h0, h1 = entropy(p0), entropy(p1)
plain = np.asarray(coeff_pair(h0, h1))
adjusted, off = coeff_pair_offset(h0, h1)
print(f"  O = {off.o:.4f}  T = {off.t:.4f}")
print(f"  plain    coefficients: mean {plain.mean():.4f} std {plain.std():.4f}")
print(f"  adjusted coefficients: mean {adjusted.mean():.4f} std {adjusted.std():.4f}")
print(f"  max shift {np.abs(plain - adjusted).max():.4f}")
