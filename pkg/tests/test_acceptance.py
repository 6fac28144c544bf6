"""Acceptance gate: each criterion runs at its stated tolerance and prints one
verdict line, echoed again after the run via the conftest summary hook."""
import json
import time

import numpy as np
import pytest
from scipy.special import expit

import conftest

from dawin import harness
from dawin.classifier import forward_batch
from dawin.databench import generate, SuiteSpec
from dawin.harness import XENT_CLIP
from dawin.expertise import (
    Split,
    coeff_multi,
    coeff_pair,
    entropy,
    pearson_r,
    ratio_correlation,
    xentropy,
)
from dawin.merge import (
    DEFAULT_GRID,
    MergeOptions,
    accuracy,
    dawin_clustered_eval,
    dawin_sample_eval,
    dawin_task_arith_eval,
    model_eval,
    static_eval,
)
from dawin.mixture import em_fit, mixture_from_dict, mixture_to_dict
from dawin.params import checkpoint_id, combine_task_vectors, load_checkpoint, save_checkpoint


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    line = f"{tag} criterion {name}{suffix}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(f"ACCEPTANCE {line}")


# ----- 1: coefficient algebra ----------------------------------------------------


def test_criterion_1_eq1_algebra():
    rng = np.random.default_rng(0)
    n = 100_000
    start = time.perf_counter()
    h = rng.uniform(0.0, 20.0, size=(n, 2))
    shift = rng.uniform(0.0, 5.0, size=n)
    lam = np.asarray(coeff_pair(h[:, 0], h[:, 1]))
    pair_dev = np.maximum.reduce(
        [
            np.abs(lam + np.asarray(coeff_pair(h[:, 1], h[:, 0])) - 1.0),
            np.abs(np.asarray(coeff_pair(h[:, 0] + shift, h[:, 1] + shift)) - lam),
            np.abs(lam - expit(h[:, 0] - h[:, 1])),
            np.maximum(-lam, lam - 1.0),
        ]
    )
    hm = rng.uniform(0.0, 20.0, size=(n, 4))
    rows = coeff_multi(hm)
    rows_shift = coeff_multi(hm + rng.uniform(0.0, 5.0, size=n)[:, None])
    multi_dev = max(
        float(np.abs(rows.sum(axis=1) - 1.0).max()),
        float(-rows.min()),
        float(np.abs(rows_shift - rows).max()),
        float(np.abs(coeff_multi(h)[:, 1] - lam).max()),
    )
    elapsed = time.perf_counter() - start
    worst = max(float(pair_dev.max()), multi_dev)
    ok = worst <= 1e-12 and elapsed < 1.0
    _verdict("1 eq1-algebra", ok, f"max dev {worst:.3g}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 1.0


# ----- 2: expert dominance --------------------------------------------------------


def test_criterion_2_lemma_dominance(suite0, experts0):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    per_m = 25_000
    checked = violations = 0
    for m in (2, 3, 4, 5):
        ents = rng.uniform(0.0, 4.0, size=(per_m, m))
        sizes = rng.integers(1, m, size=per_m)
        sets = [tuple(np.argsort(ents[i])[: sizes[i]]) for i in range(per_m)]
        c, v = harness._lemma1_violations(ents, sets)
        checked += c
        violations += v
    assert checked == 4 * per_m  # planted expert sets always meet the precondition

    arch, t0, t1 = experts0.arch, experts0.theta0, experts0.theta1
    bench_checked = bench_violations = 0
    for dom in suite0.test_domains:
        probs = [forward_batch(arch, t0, dom.x), forward_batch(arch, t1, dom.x)]
        ents = np.stack([entropy(p) for p in probs], axis=1)
        c, v = harness._lemma1_violations(ents, harness._correct_expert_sets(probs, dom.y))
        bench_checked += c
        bench_violations += v
    params = experts0.task_params()
    for split in suite0.mtl_tasks:
        probs = [forward_batch(arch, p, split.test.x) for p in params]
        ents = np.stack([entropy(p) for p in probs], axis=1)
        c, v = harness._lemma1_violations(ents, harness._correct_expert_sets(probs, split.test.y))
        bench_checked += c
        bench_violations += v
    elapsed = time.perf_counter() - start
    ok = violations == 0 and bench_violations == 0 and elapsed < 5.0
    _verdict(
        "2 lemma-dominance",
        ok,
        f"synthetic {checked} bench {bench_checked} violations "
        f"{violations + bench_violations}, {elapsed:.2f}s",
    )
    assert violations == 0
    assert bench_violations == 0
    assert bench_checked > 1000
    assert elapsed < 5.0


# ----- 3: mixture estimation ------------------------------------------------------


def test_criterion_3a_em_monotone():
    rng = np.random.default_rng(2)
    worst_drop = 0.0
    for _ in range(50):
        parts = []
        for _ in range(int(rng.integers(1, 4))):
            a, b = rng.uniform(0.8, 12.0, size=2)
            parts.append(rng.beta(a, b, size=int(rng.integers(150, 400))))
        values = np.clip(np.concatenate(parts), 1e-4, 1.0 - 1e-4)
        model = em_fit(values, k=int(rng.integers(1, 5)), seed=int(rng.integers(2**31)))
        diffs = np.diff(model.loglik_trace)
        if diffs.size:
            worst_drop = min(worst_drop, float(diffs.min()))
    ok = worst_drop >= -1e-9
    _verdict("3a em-monotone", ok, f"worst step {worst_drop:.3g}")
    assert worst_drop >= -1e-9


def test_criterion_3b_em_recovery():
    rng = np.random.default_rng(3)
    n = 20_000
    low = rng.beta(2.0, 20.0, size=n)
    high = rng.beta(20.0, 2.0, size=n)
    values = np.where(rng.random(n) < 0.4, low, high)
    model = em_fit(values, k=2, seed=0)
    comps = sorted(model.components, key=lambda c: c.mean)
    weight_dev = max(abs(comps[0].pi - 0.4), abs(comps[1].pi - 0.6))
    mean_dev = max(abs(comps[0].mean - 2.0 / 22.0), abs(comps[1].mean - 20.0 / 22.0))
    ok = weight_dev <= 0.05 and mean_dev <= 0.02
    _verdict("3b em-recovery", ok, f"weight dev {weight_dev:.4f}, mean dev {mean_dev:.4f}")
    assert weight_dev <= 0.05
    assert mean_dev <= 0.02


def test_criterion_3c_em_50k_runtime():
    rng = np.random.default_rng(4)
    n = 50_000
    values = np.concatenate(
        [
            rng.beta(2.0, 14.0, size=n // 2),
            rng.beta(6.0, 6.0, size=n // 4),
            rng.beta(16.0, 3.0, size=n - n // 2 - n // 4),
        ]
    )
    start = time.perf_counter()
    model = em_fit(values, k=3, seed=0)
    elapsed = time.perf_counter() - start
    ok = elapsed <= 60.0 and len(model.components) == 3
    _verdict("3c em-50k-runtime", ok, f"{elapsed:.2f}s")
    assert elapsed <= 60.0


# ----- 4: pilot ordering ----------------------------------------------------------


def test_criterion_4_pilot_ordering(pilot0, reference0):
    ood = pilot0.ood_average
    slacks = (
        ood["oracle_sample"] - ood["oracle_domain"],
        ood["oracle_domain"] - ood["static_best"],
        ood["static_best"] - max(ood["zs"], ood["ft"]),
    )
    margin = ood["oracle_sample"] - ood["static_best"]
    frozen = pilot0.ood_average == reference0["pilot_ood_average"]
    ok = min(slacks) >= 0.0 and margin >= 0.01 and frozen
    _verdict(
        "4 pilot-ordering",
        ok,
        f"slacks {slacks[0]:.4f}/{slacks[1]:.4f}/{slacks[2]:.4f}, "
        f"oracle-sample margin {margin:.4f}",
    )
    assert min(slacks) >= 0.0
    assert margin >= 0.01
    assert frozen, "pilot drifted from the frozen seed-0 reference"


# ----- 5: clustered approximation ---------------------------------------------------


def test_criterion_5_clustered_gap(suite0, experts0):
    arch, t0, t1 = experts0.arch, experts0.theta0, experts0.theta1
    worst = 0.0
    counts_ok = True
    for dom in suite0.test_domains:
        exact = accuracy(dawin_sample_eval(arch, t0, t1, dom), dom.y)
        clustered = dawin_clustered_eval(arch, t0, t1, dom, k=3)
        counts_ok = counts_ok and clustered.merge_count == 3
        worst = max(worst, abs(accuracy(clustered, dom.y) - exact))
    ok = worst <= 0.01 and counts_ok
    _verdict("5 clustered-gap", ok, f"worst |gap| {worst:.4f}, merge counts {'=3' if counts_ok else 'off'}")
    assert counts_ok
    assert worst <= 0.01


# ----- 6: entropy valley ----------------------------------------------------------

VALLEY_DOMAINS = ("id_test", "ood_rot30", "ood_rot60", "ood_noise1", "ood_scale")


@pytest.mark.parametrize("name", VALLEY_DOMAINS)
def test_criterion_6_entropy_valley(suite0, experts0, name):
    arch, t0, t1 = experts0.arch, experts0.theta0, experts0.theta1
    dom = suite0.domains()[name]
    h_zs = float(entropy(forward_batch(arch, t0, dom.x)).mean())
    h_ft = float(entropy(forward_batch(arch, t1, dom.x)).mean())
    floor = min(h_zs, h_ft)
    curve = {
        g: float(entropy(static_eval(arch, t0, t1, g, dom).probs).mean())
        for g in DEFAULT_GRID
    }
    h_dw = float(entropy(dawin_sample_eval(arch, t0, t1, dom).probs).mean())
    # a witness coefficient must sit below both endpoints yet above dawin
    shortfall = min(max(curve[g] - floor, h_dw - curve[g]) for g in DEFAULT_GRID)
    ok = shortfall <= 0.0
    _verdict(f"6 entropy-valley[{name}]", ok, f"best shortfall {shortfall:+.4f}")
    assert ok, (
        f"{name}: no grid coefficient is simultaneously below both endpoint "
        f"mean entropies and above dawin_sample (closest miss {shortfall:+.4f})"
    )


# ----- 7: correlation machinery ------------------------------------------------------


def _two_pass_pearson(x, y):
    # deliberately naive reference: explicit mean pass then moment pass
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


def test_criterion_7_correlation(suite0, experts0):
    rng = np.random.default_rng(6)
    machinery_dev = 0.0
    for _ in range(5):
        x = rng.normal(size=4000)
        y = 0.4 * x + rng.normal(size=4000)
        machinery_dev = max(machinery_dev, abs(pearson_r(x, y) - _two_pass_pearson(x, y)))

    arch, t0, t1 = experts0.arch, experts0.theta0, experts0.theta1
    parts = {key: [] for key in ("h0", "h1", "l0", "l1", "p0", "p1", "y")}
    for dom in suite0.test_domains:
        p0 = forward_batch(arch, t0, dom.x)
        p1 = forward_batch(arch, t1, dom.x)
        parts["h0"].append(entropy(p0))
        parts["h1"].append(entropy(p1))
        parts["l0"].append(np.minimum(xentropy(p0, dom.y), XENT_CLIP))
        parts["l1"].append(np.minimum(xentropy(p1, dom.y), XENT_CLIP))
        parts["p0"].append(p0.argmax(axis=1))
        parts["p1"].append(p1.argmax(axis=1))
        parts["y"].append(dom.y)
    cat = {key: np.concatenate(vals) for key, vals in parts.items()}
    corr = ratio_correlation(
        cat["h0"], cat["h1"], cat["l0"], cat["l1"], cat["p0"], cat["p1"], cat["y"]
    )
    tt = corr[Split.TRUE_TRUE.value]
    ok = machinery_dev <= 1e-10 and tt is not None and tt > 0.0
    _verdict("7 correlation", ok, f"machinery dev {machinery_dev:.2e}, TrueTrue r {tt:.4f}")
    assert machinery_dev <= 1e-10
    assert tt > 0.0


# ----- 8: multi-task coefficients -----------------------------------------------------


def test_criterion_8_mtl_dominance(suite0, experts0):
    arch, t0 = experts0.arch, experts0.theta0
    params = experts0.task_params()
    taus = experts0.task_vectors()
    m = len(params)
    assert m == len(suite0.mtl_tasks) == 4

    matrix = np.empty((m, m))
    for i, split in enumerate(suite0.mtl_tasks):
        ents = np.stack(
            [entropy(forward_batch(arch, p, split.test.x)) for p in params], axis=1
        )
        matrix[i] = coeff_multi(ents).mean(axis=0)
    off_diag = sum(int(matrix[i].argmax() != i) for i in range(m))

    static_theta = combine_task_vectors(t0, 0.3, np.ones(m), taus)
    acc_static = float(
        np.mean(
            [
                accuracy(model_eval(arch, static_theta, s.test, "task_arith"), s.test.y)
                for s in suite0.mtl_tasks
            ]
        )
    )
    acc_dyn = float(
        np.mean(
            [
                accuracy(
                    dawin_task_arith_eval(arch, t0, params, taus, s.test, lambda0=0.3, k=1),
                    s.test.y,
                )
                for s in suite0.mtl_tasks
            ]
        )
    )
    ok = off_diag == 0 and acc_dyn >= acc_static
    _verdict(
        "8 mtl-dominance",
        ok,
        f"diagonal {m - off_diag}/{m}, dynamic {acc_dyn:.4f} vs static {acc_static:.4f}",
    )
    assert off_diag == 0, f"coefficient matrix rows favoring a foreign expert: {off_diag}"
    assert acc_dyn >= acc_static


# ----- 9: batch-size robustness -----------------------------------------------------


def test_criterion_9_batch_robustness(suite0, experts0):
    arch, t0, t1 = experts0.arch, experts0.theta0, experts0.theta1
    averages = []
    for bs in (32, 64, 128, 256, 512, 1024, 2048, None):
        accs = [
            accuracy(dawin_sample_eval(arch, t0, t1, dom, MergeOptions(batch_size=bs)), dom.y)
            for dom in suite0.ood_tests
        ]
        averages.append(float(np.mean(accs)))
    spread = max(averages) - min(averages)
    ok = spread <= 0.01
    _verdict("9 batch-robustness", ok, f"OOD-average spread {spread:.4f}")
    assert spread <= 0.01


# ----- 10: determinism and serialization ------------------------------------------------


def test_criterion_10_determinism(suite0, experts0, pilot0, tmp_path):
    fresh_suite = generate(0, SuiteSpec())
    fresh_experts = harness.build_experts(fresh_suite, with_tasks=False)
    fresh_pilot = harness.run_pilot(fresh_suite, fresh_experts)
    same_pilot = harness.report_signature(fresh_pilot) == harness.report_signature(pilot0)

    path = tmp_path / "ft.ckpt"
    save_checkpoint(experts0.finetune, path)
    loaded = load_checkpoint(path)
    same_ckpt = (
        np.array_equal(loaded.payload.values, experts0.finetune.payload.values)
        and checkpoint_id(loaded) == checkpoint_id(experts0.finetune)
        and loaded.meta == experts0.finetune.meta
    )

    rng = np.random.default_rng(8)
    model = em_fit(rng.beta(3.0, 5.0, size=2000), k=2, seed=0)
    again = mixture_from_dict(json.loads(json.dumps(mixture_to_dict(model))))
    same_mix = mixture_to_dict(again) == mixture_to_dict(model) and all(
        (a.a, a.b, a.pi) == (b.a, b.b, b.pi)
        for a, b in zip(model.components, again.components)
    )
    ok = same_pilot and same_ckpt and same_mix
    _verdict(
        "10 determinism",
        ok,
        f"pilot {'bit-identical' if same_pilot else 'DRIFTED'}, "
        f"checkpoint {'lossless' if same_ckpt else 'LOSSY'}, "
        f"mixture {'lossless' if same_mix else 'LOSSY'}",
    )
    assert same_pilot
    assert same_ckpt
    assert same_mix
