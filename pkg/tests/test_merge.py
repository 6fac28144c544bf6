import numpy as np
import pytest

from dawin.classifier import MlpArchitecture, forward_batch, init_params
from dawin.databench import Domain
from dawin.merge import (
    DEFAULT_GRID,
    MergeOptions,
    MergeStrategy,
    STRATEGY_KINDS,
    dawin_clustered_eval,
    dawin_sample_eval,
    dawin_task_arith_eval,
    dcs_eval,
    doe_eval,
    greedy_soup,
    model_eval,
    oracle_domain_search,
    oracle_sample_eval,
    save_predictions,
    static_eval,
    uniform_soup,
    wise_sweep,
)
from dawin.params import ParamVector, make_task_vector

ARCH = MlpArchitecture(input_dim=5, hidden_widths=(12,), class_count=10)


def rand_theta(seed):
    rng = np.random.default_rng(seed)
    return ParamVector(init_params(ARCH, rng) + 0.3 * rng.normal(size=ARCH.param_count),
                       ARCH.layout_id)


def rand_domain(seed, n=80, name="dom"):
    rng = np.random.default_rng(seed)
    return Domain(name, rng.normal(size=(n, 5)), rng.integers(0, 10, size=n),
                  {"kind": "identity"})


T0 = rand_theta(0)
T1 = rand_theta(1)
DOM = rand_domain(2)


def test_static_endpoints_match_raw_models():
    zs = model_eval(ARCH, T0, DOM, "zs")
    ft = model_eval(ARCH, T1, DOM, "ft")
    assert np.array_equal(static_eval(ARCH, T0, T1, 0.0, DOM).preds, zs.preds)
    assert np.array_equal(static_eval(ARCH, T0, T1, 1.0, DOM).preds, ft.preds)


def test_wise_sweep_grid_contract():
    out = wise_sweep(ARCH, T0, T1, DOM, (), DEFAULT_GRID)
    assert len(out.rows) == 9
    # best row by exhaustive re-scan
    best = max(out.rows, key=lambda r: r["id_val_acc"])
    assert out.rows[[r["lam"] for r in out.rows].index(out.best_lam)]["id_val_acc"] == best["id_val_acc"]


def test_wise_sweep_binary_grid_compares_raw_models():
    out = wise_sweep(ARCH, T0, T1, DOM, (), (0.0, 1.0))
    accs = {r["lam"]: r["id_val_acc"] for r in out.rows}
    zs = model_eval(ARCH, T0, DOM, "zs")
    ft = model_eval(ARCH, T1, DOM, "ft")
    assert accs[0.0] == (zs.preds == DOM.y).mean()
    assert accs[1.0] == (ft.preds == DOM.y).mean()


def test_wise_sweep_tie_breaks_toward_smaller_lambda():
    out = wise_sweep(ARCH, T0, T0, DOM, (), DEFAULT_GRID)  # all rows tie
    assert out.best_lam == DEFAULT_GRID[0]


def test_uniform_soup_closed_forms():
    same = uniform_soup([T0, T0])
    assert np.array_equal(same.values, T0.values)
    a = ParamVector(np.array([0.0, 2.0]), "pair")
    b = ParamVector(np.array([2.0, 0.0]), "pair")
    assert np.array_equal(uniform_soup([a, b]).values, [1.0, 1.0])


def test_greedy_soup_never_hurts_id_val():
    models = [rand_theta(s) for s in range(4)]
    soup, kept = greedy_soup(ARCH, models, DOM)
    def acc(theta):
        probs = forward_batch(ARCH, theta, DOM.x)
        return (probs.argmax(axis=1) == DOM.y).mean()
    assert acc(soup) >= max(acc(m) for m in models)
    assert len(kept) >= 1


def test_dawin_sample_identical_models_give_half():
    out = dawin_sample_eval(ARCH, T0, T0, DOM, MergeOptions(offset_adjust=False))
    np.testing.assert_allclose(out.chosen, 0.5, atol=1e-12)
    assert np.array_equal(out.preds, model_eval(ARCH, T0, DOM, "zs").preds)


def test_dawin_sample_one_hot_versus_uniform_coefficient():
    from dawin.expertise import coeff_pair

    # entropies 0 (one-hot confident) vs ln C (uniform): lam = C/(C+1)
    c = 10
    lam = coeff_pair(np.log(c), 0.0)
    assert abs(lam - c / (c + 1.0)) < 1e-12


def test_dawin_sample_merge_count_and_chosen_range():
    out = dawin_sample_eval(ARCH, T0, T1, DOM)
    assert out.merge_count == DOM.n_samples
    assert np.all((out.chosen > 0.0) & (out.chosen < 1.0))


def test_dawin_clustered_k1_equals_static_at_mean_coefficient():
    opts = MergeOptions(offset_adjust=False)
    per_sample = dawin_sample_eval(ARCH, T0, T1, DOM, opts)
    clustered = dawin_clustered_eval(ARCH, T0, T1, DOM, k=1, options=opts)
    assert clustered.merge_count == 1
    static = static_eval(ARCH, T0, T1, float(clustered.chosen[0]), DOM)
    assert np.array_equal(clustered.preds, static.preds)
    # the K=1 component mean tracks the sample-coefficient mean
    assert abs(clustered.chosen[0] - per_sample.chosen.mean()) < 0.05


def test_dawin_clustered_merge_count_is_k():
    for k in (2, 3):
        out = dawin_clustered_eval(ARCH, T0, T1, DOM, k=k)
        assert out.merge_count == k
        assert out.extras["k"] == k


def test_dawin_clustered_tiny_slice_approaches_per_sample():
    dom = rand_domain(11, n=200)
    opts = MergeOptions(offset_adjust=False)
    per_sample = dawin_sample_eval(ARCH, T0, T1, dom, opts)
    heavy = dawin_clustered_eval(ARCH, T0, T1, dom, k=12, options=opts)
    gap = abs((per_sample.preds == dom.y).mean() - (heavy.preds == dom.y).mean())
    assert gap <= 0.01


def test_task_arith_identical_entropies_spread_uniformly():
    taus = [make_task_vector(rand_theta(s), T0) for s in (3, 4, 5)]
    out = dawin_task_arith_eval(ARCH, T0, [T1, T1, T1], taus, DOM, k=None)
    np.testing.assert_allclose(out.chosen, 1.0 / 3.0, atol=1e-12)


def test_task_arith_lambda0_zero_is_pretrained():
    experts = [rand_theta(s) for s in (3, 4)]
    taus = [make_task_vector(e, T0) for e in experts]
    out = dawin_task_arith_eval(ARCH, T0, experts, taus, DOM, lambda0=0.0, k=None)
    assert np.array_equal(out.preds, model_eval(ARCH, T0, DOM, "zs").preds)


def test_task_arith_k1_single_merge():
    experts = [rand_theta(s) for s in (3, 4, 5)]
    taus = [make_task_vector(e, T0) for e in experts]
    out = dawin_task_arith_eval(ARCH, T0, experts, taus, DOM, k=1)
    assert out.merge_count == 1
    assert out.chosen.shape == (DOM.n_samples, 3)


def test_dcs_selects_lower_entropy_model():
    from dawin.expertise import entropy

    out = dcs_eval(ARCH, [T0, T1], DOM)
    p0 = forward_batch(ARCH, T0, DOM.x)
    p1 = forward_batch(ARCH, T1, DOM.x)
    expected = np.where(entropy(p0) <= entropy(p1), p0.argmax(1), p1.argmax(1))
    assert np.array_equal(out.preds, expected)
    assert out.merge_count == 0


def test_dcs_identical_models():
    out = dcs_eval(ARCH, [T0, T0], DOM)
    assert np.array_equal(out.preds, model_eval(ARCH, T0, DOM, "zs").preds)


def test_doe_equal_inputs_pass_through():
    out = doe_eval(ARCH, [T0, T0], DOM)
    np.testing.assert_allclose(out.probs, forward_batch(ARCH, T0, DOM.x), atol=1e-12)


def test_doe_outputs_are_convex_combinations():
    out = doe_eval(ARCH, [T0, T1], DOM)
    p0 = forward_batch(ARCH, T0, DOM.x)
    p1 = forward_batch(ARCH, T1, DOM.x)
    lo = np.minimum(p0, p1) - 1e-12
    hi = np.maximum(p0, p1) + 1e-12
    assert np.all((out.probs >= lo) & (out.probs <= hi))
    np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-9)


def test_doe_one_hot_model_dominates():
    from dawin.expertise import coeff_pair

    # weights from entropies 0 vs ln C push the average toward the one-hot row
    c = 4
    lam_onehot = coeff_pair(np.log(c), 0.0)
    onehot = np.zeros(c)
    onehot[2] = 1.0
    uniform = np.full(c, 1.0 / c)
    blended = (1 - lam_onehot) * uniform + lam_onehot * onehot
    assert blended.argmax() == 2


def test_oracle_sample_closed_forms(suite0, experts0):
    out = oracle_sample_eval(experts0.arch, experts0.theta0, experts0.theta1, suite0.id_test)
    assert out.merge_count == suite0.id_test.n_samples
    assert np.all((out.chosen >= 0.0) & (out.chosen <= 1.0))


def test_oracle_domain_reports_grid_table():
    out = oracle_domain_search(ARCH, T0, T1, DOM, (0.0, 1.0))
    accs = [row["accuracy"] for row in out.extras["table"]]
    zs = (model_eval(ARCH, T0, DOM, "zs").preds == DOM.y).mean()
    ft = (model_eval(ARCH, T1, DOM, "ft").preds == DOM.y).mean()
    assert accs == [zs, ft]
    assert (out.preds == DOM.y).mean() == max(accs)


def test_oracle_domain_max_of_table():
    out = oracle_domain_search(ARCH, T0, T1, DOM)
    best = max(row["accuracy"] for row in out.extras["table"])
    assert (out.preds == DOM.y).mean() == best


def test_strategy_kinds_inventory():
    assert "dawin_sample" in STRATEGY_KINDS
    assert "dawin_clustered" in STRATEGY_KINDS
    assert "dawin_task_arith" in STRATEGY_KINDS
    with pytest.raises(ValueError):
        MergeStrategy(kind="nope")


def test_save_predictions_csv(tmp_path):
    out = static_eval(ARCH, T0, T1, 0.5, DOM)
    path = tmp_path / "preds.csv"
    save_predictions(out, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "sample_index,argmax,chosen_lambda_json,strategy"
    assert len(lines) == DOM.n_samples + 1


def test_batch_size_chunking_matches_full_batch():
    full = dawin_sample_eval(ARCH, T0, T1, DOM, MergeOptions(offset_adjust=False))
    chunked = dawin_sample_eval(
        ARCH, T0, T1, DOM, MergeOptions(offset_adjust=False, batch_size=16)
    )
    # without domain statistics the per-sample rule is batch-size independent
    np.testing.assert_allclose(chunked.chosen, full.chosen, atol=1e-12)
    assert np.array_equal(chunked.preds, full.preds)


def test_benchmark_lambda_distribution_is_nondegenerate(suite0, experts0):
    out = dawin_sample_eval(experts0.arch, experts0.theta0, experts0.theta1, suite0.id_test)
    assert float(out.chosen.std()) > 0.01


def test_static_half_matches_frozen_reference(suite0, experts0, reference0):
    for dom in suite0.test_domains:
        out = static_eval(experts0.arch, experts0.theta0, experts0.theta1, 0.5, dom)
        got = (out.preds == dom.y).mean()
        assert got == pytest.approx(reference0["static_half_accuracy"][dom.name], abs=1e-12)
