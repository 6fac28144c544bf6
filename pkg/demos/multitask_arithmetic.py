#!/usr/bin/env python3
"""Dynamic task arithmetic on the four-task suite.

Each task expert is fine-tuned from the shared generalist, giving task
vectors tau_j = theta_j - theta_0. Static task arithmetic adds them all at a
fixed scale; the dynamic rule reweights them per sample by the softmax of
negative expert entropies, so the right expert dominates on its own task.

Pipeline:
1. train the generalist + one expert per task
2. mean coefficient matrix (rows = task test sets, columns = experts)
3. per-task accuracy: static vs dynamic (K=1 compressed and exact per-sample)
"""
import numpy as np

from dawin import databench, harness
from dawin.classifier import forward_batch
from dawin.expertise import coeff_multi, entropy
from dawin.merge import accuracy, dawin_task_arith_eval, model_eval
from dawin.params import combine_task_vectors

LAMBDA0 = 0.3

suite = databench.generate(0, databench.SuiteSpec())
experts = harness.build_experts(suite)  # includes the task experts
arch, t0 = experts.arch, experts.theta0
params = experts.task_params()
taus = experts.task_vectors()
m = len(params)

print("mean coefficient matrix (row = task test set, column = expert):")
matrix = np.empty((m, m))
for i, split in enumerate(suite.mtl_tasks):
    ents = np.stack([entropy(forward_batch(arch, p, split.test.x)) for p in params], axis=1)
    matrix[i] = coeff_multi(ents).mean(axis=0)
    cells = "  ".join(f"{v:.3f}" for v in matrix[i])
    star = "*" if matrix[i].argmax() == i else " "
    print(f"  {split.test.name:<14} {cells} {star}")
diag_ok = all(matrix[i].argmax() == i for i in range(m))
print(f"  diagonal dominance: {'yes' if diag_ok else 'no'}")

static_theta = combine_task_vectors(t0, LAMBDA0, np.ones(m), taus)

print(f"\nper-task accuracy at lambda0={LAMBDA0}:")
print(f"  {'task':<14} {'static':>8} {'dyn K=1':>8} {'dyn exact':>10}")
rows = []
for split in suite.mtl_tasks:
    acc_static = accuracy(model_eval(arch, static_theta, split.test, "static"), split.test.y)
    acc_k1 = accuracy(
        dawin_task_arith_eval(arch, t0, params, taus, split.test, lambda0=LAMBDA0, k=1),
        split.test.y,
    )
    acc_exact = accuracy(
        dawin_task_arith_eval(arch, t0, params, taus, split.test, lambda0=LAMBDA0, k=None),
        split.test.y,
    )
    rows.append((acc_static, acc_k1, acc_exact))
    print(f"  {split.test.name:<14} {acc_static:>8.4f} {acc_k1:>8.4f} {acc_exact:>10.4f}")

means = np.mean(rows, axis=0)
print(f"  {'average':<14} {means[0]:>8.4f} {means[1]:>8.4f} {means[2]:>10.4f}")
