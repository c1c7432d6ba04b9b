import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import null_space

from conftest import random_dataset
from regcontrast import (
    Dataset,
    DesignSpec,
    GeneratorConfig,
    Method,
    WeightVector,
    generate_synthetic_example,
    minvar_exact_balance_weights,
    mri_weights,
    uri_weights,
    weight_variance,
)
from regcontrast.core import group_means
from regcontrast.errors import InfeasibleError, ValidationError


def ols_tau(d: Dataset, y):
    D = np.column_stack([np.ones(d.n), d.X, d.treated.astype(float)])
    return np.linalg.lstsq(D, y, rcond=None)[0][-1]


def contrast(d: Dataset, w, y):
    t = d.treated
    return w[t] @ y[t] / d.n_treated - w[~t] @ y[~t] / d.n_control


def basis_weights_uri(d: Dataset):
    """Weights read off by refitting OLS on each canonical basis outcome."""
    w = np.empty(d.n)
    for k in range(d.n):
        tau = ols_tau(d, np.eye(d.n)[k])
        w[k] = tau * (d.n_treated if d.treated[k] else -d.n_control)
    return w


def basis_weights_mri(d: Dataset):
    c = ~d.treated
    Xc = np.column_stack([np.ones(c.sum()), d.X[c]])
    x0 = np.concatenate([[1.0], d.X[d.treated].mean(axis=0)])
    w = np.ones(d.n)
    idx = np.flatnonzero(c)
    for k in range(idx.size):
        beta = np.linalg.lstsq(Xc, np.eye(idx.size)[k], rcond=None)[0]
        w[idx[k]] = d.n_control * (x0 @ beta)
    return w


def small(treated, X, y=None):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    return Dataset([f"i{k}" for k in range(n)], treated, X, np.zeros(n) if y is None else y)


# --- URI ------------------------------------------------------------------


def test_uri_balanced_design_gives_unit_weights():
    d = small([1, 1, 0, 0], [[-1.0], [1.0], [-2.0], [2.0]])
    np.testing.assert_allclose(uri_weights(d).weights, 1.0, atol=1e-12)


def test_uri_four_unit_basis_oracle():
    d = small([1, 1, 0, 0], [[1.0], [3.0], [2.0], [6.0]])
    w = uri_weights(d).weights
    np.testing.assert_allclose(w, basis_weights_uri(d), atol=1e-10)
    for k in range(4):
        e = np.eye(4)[k]
        assert contrast(d, w, e) == pytest.approx(ols_tau(d, e), abs=1e-12)


def test_uri_random_basis_oracle(rng):
    for _ in range(5):
        d = random_dataset(rng, n_max=40, p_max=3)
        np.testing.assert_allclose(uri_weights(d).weights, basis_weights_uri(d), atol=1e-9)


def test_uri_outlier_gets_largest_negative_weight():
    d = generate_synthetic_example(GeneratorConfig())
    w = uri_weights(d).group("control")
    ids = np.array(d.ids)[~d.treated]
    out = int(np.flatnonzero((d.X[~d.treated] == (264.0, 4.0)).all(axis=1))[0])
    assert w[out] < 0
    assert np.argmax(np.abs(w)) == out
    assert ids[np.argmin(w)] == ids[out]


def test_uri_equivalence_random(rng):
    for _ in range(100):
        d = random_dataset(rng)
        w = uri_weights(d)
        assert abs(contrast(d, w.weights, d.y) - ols_tau(d, d.y)) <= 1e-8


def test_uri_exact_balance_including_square(rng):
    for _ in range(30):
        d = random_dataset(rng, p_max=3)
        mt, mc = group_means(d, uri_weights(d))
        np.testing.assert_allclose(mt, mc, atol=1e-8)
        d2 = d.with_covariate("x0^2", d.X[:, 0] ** 2)
        mt, mc = group_means(d2, uri_weights(d2))
        np.testing.assert_allclose(mt, mc, atol=1e-8)


def test_uri_rejects_interactions(rng):
    d = random_dataset(rng, n=30, p=2)
    with pytest.raises(ValidationError):
        uri_weights(d, DesignSpec.mri(2))


def test_uri_subset_of_covariates(rng):
    d = random_dataset(rng, n=50, p=3)
    w = uri_weights(d, DesignSpec.uri(3, covariates=[1]))
    D = np.column_stack([np.ones(d.n), d.X[:, 1], d.treated])
    tau = np.linalg.lstsq(D, d.y, rcond=None)[0][-1]
    assert contrast(d, w.weights, d.y) == pytest.approx(tau, abs=1e-10)


# --- MRI ------------------------------------------------------------------


def test_mri_controls_centred_on_treated_mean_get_unit_weights():
    d = small([1, 1, 0, 0, 0], [[1.0], [3.0], [0.0], [2.0], [4.0]])
    np.testing.assert_allclose(mri_weights(d).weights, 1.0, atol=1e-12)


def test_mri_three_control_basis_oracle():
    d = small([1, 1, 0, 0, 0], [[0.5], [1.5], [0.0], [1.0], [2.0]])
    w = mri_weights(d).weights
    np.testing.assert_allclose(w, basis_weights_mri(d), atol=1e-12)
    wc = w[~d.treated]
    assert wc[1] >= wc.max() - 1e-12


def test_mri_asymmetric_basis_oracle(rng):
    for _ in range(5):
        d = random_dataset(rng, n_max=40, p_max=3, min_group=6)
        np.testing.assert_allclose(mri_weights(d).weights, basis_weights_mri(d), atol=1e-9)


def test_mri_targets_treated_profile_on_replica():
    d = generate_synthetic_example(GeneratorConfig())
    w = mri_weights(d)
    _, mc = group_means(d, w)
    np.testing.assert_allclose(mc, d.X[d.treated].mean(axis=0), atol=1e-8)
    assert np.all(w.group("treated") == 1.0)


def test_mri_needs_enough_controls():
    d = small([1, 1, 1, 0, 0], [[0, 1], [1, 2], [2, 0], [0, 0], [1, 1]])
    with pytest.raises(ValidationError):
        mri_weights(d)


# --- minimum-variance characterization -----------------------------------


def test_minvar_uniform_when_target_is_raw_mean(rng):
    d = random_dataset(rng, n=40, p=2)
    w = minvar_exact_balance_weights(d, d.X[~d.treated].mean(axis=0), "control")
    np.testing.assert_allclose(w.weights, 1.0, atol=1e-10)
    assert weight_variance(w, "control") == pytest.approx(0.0, abs=1e-18)


def test_minvar_matches_mri(rng):
    for _ in range(20):
        d = random_dataset(rng, p_max=4, min_group=6)
        a = minvar_exact_balance_weights(d, d.X[d.treated].mean(axis=0), "control")
        b = mri_weights(d)
        assert np.max(np.abs(a.group("control") - b.group("control"))) <= 1e-8


def test_minvar_two_controls():
    d = small([1, 1, 0, 0], [[0.0], [0.5], [0.0], [1.0]])
    w = minvar_exact_balance_weights(d, [0.25], "control")
    np.testing.assert_allclose(w.group("control"), [1.5, 0.5], atol=1e-12)


def test_minvar_both_without_target_is_uri(rng):
    for _ in range(10):
        d = random_dataset(rng, n_max=80, p_max=3)
        a = minvar_exact_balance_weights(d, None, "both")
        np.testing.assert_allclose(a.weights, uri_weights(d).weights, atol=1e-8)
        assert a.method is Method.URI


def test_minvar_both_with_target(rng):
    d = random_dataset(rng, n=60, p=2, min_group=8)
    target = np.array([0.1, 0.3])
    w = minvar_exact_balance_weights(d, target, "both")
    mt, mc = group_means(d, w)
    np.testing.assert_allclose(mt, target, atol=1e-10)
    np.testing.assert_allclose(mc, target, atol=1e-10)


def test_minvar_infeasible_names_dimension():
    # controls lie on the line x1 == x0; the target is off that line
    X = [[0, 5], [1, 7], [0, 0], [1, 1], [2, 2]]
    d = Dataset(["a", "b", "c", "d", "e"], [1, 1, 0, 0, 0], X, np.zeros(5), ["income", "visits"])
    with pytest.raises(InfeasibleError) as err:
        minvar_exact_balance_weights(d, [1.0, 3.0], "control")
    assert err.value.dimension in ("income", "visits")


def test_weight_variance_examples():
    t = np.array([True, True, False, False])
    assert weight_variance(WeightVector.uniform(t), "control") == 0.0
    w = WeightVector.from_groups(t, 1.0, [1.5, 0.5], Method.MRI)
    assert weight_variance(w, "control") == pytest.approx(0.25)


def _uri_constraints(d: Dataset):
    n_t, n_c = d.n_treated, d.n_control
    order = np.r_[np.flatnonzero(d.treated), np.flatnonzero(~d.treated)]
    A = np.zeros((2 + d.p, d.n))
    A[0, :n_t] = 1
    A[1, n_t:] = 1
    A[2:, :n_t] = d.X[d.treated].T / n_t
    A[2:, n_t:] = -d.X[~d.treated].T / n_c
    return A, order


def _estimator_variance(d, w_sorted):
    n_t = d.n_treated
    wt, wc = w_sorted[:n_t], w_sorted[n_t:]
    return np.var(wt) / n_t + np.var(wc) / d.n_control


def test_uri_beats_null_space_alternatives(rng):
    for _ in range(5):
        d = random_dataset(rng, n_max=80, p_max=3)
        A, order = _uri_constraints(d)
        w = uri_weights(d).weights[order]
        N = null_space(A)
        base = _estimator_variance(d, w)
        for _ in range(20):
            alt = w + N @ rng.normal(size=N.shape[1]) * rng.uniform(0.01, 1.0)
            np.testing.assert_allclose(A @ alt, A @ w, atol=1e-8)
            assert _estimator_variance(d, alt) > base


def test_mri_beats_null_space_alternatives(rng):
    for _ in range(5):
        d = random_dataset(rng, n_max=80, p_max=3, min_group=6)
        wv = mri_weights(d)
        wc = wv.group("control")
        A = np.vstack([np.ones(d.n_control), d.X[~d.treated].T])
        N = null_space(A)
        base = weight_variance(wv, "control")
        for _ in range(20):
            alt = wc + N @ rng.normal(size=N.shape[1])
            assert np.var(alt) > base


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_weights_invariant_to_covariate_rescaling(seed, factor):
    r = np.random.default_rng(seed)
    d = random_dataset(r, n_max=60, p_max=3, min_group=6)
    X2 = d.X.copy()
    X2[:, 0] *= factor
    d2 = Dataset(d.ids, d.treated, X2, d.y)
    np.testing.assert_allclose(uri_weights(d2).weights, uri_weights(d).weights, atol=1e-8)
    np.testing.assert_allclose(mri_weights(d2).weights, mri_weights(d).weights, atol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_group_normalization(seed):
    r = np.random.default_rng(seed)
    d = random_dataset(r, n_max=100, p_max=4, min_group=6)
    for w in (uri_weights(d), mri_weights(d)):
        assert abs(w.group("treated").sum() - d.n_treated) <= 1e-10 * d.n
        assert abs(w.group("control").sum() - d.n_control) <= 1e-10 * d.n
