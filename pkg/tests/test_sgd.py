import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_precision_component
from mfakit.errors import IndefiniteMatrixError, MfaError
from mfakit.model import PrecisionModel, m_matrix, total_loglik
from mfakit.sgd import (
    SgdConfig,
    apply_constraints,
    batch_grad,
    fit_sgd,
    init_precision_model,
    softmax,
)


def random_precision_model(rs, k, d, m):
    comps = [random_precision_component(rs, d, m) for _ in range(k)]
    return PrecisionModel(rs.dirichlet(np.ones(k)), [c.mean for c in comps],
                          [c.sqrt_prec for c in comps], [c.prec_loading for c in comps])


def numeric_grads(model, x, h=1e-5):
    """Central differences of the summed batch log-likelihood."""
    logits = np.log(model.weights)

    def ll(mod, lg=logits):
        mod = mod.copy()
        mod.weights = softmax(lg)
        return total_loglik(mod, x)

    out = {}
    for name in ("means", "sqrt_prec", "prec_loading"):
        base = getattr(model, name)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = model.copy(), model.copy()
            getattr(plus, name)[idx] += h
            getattr(minus, name)[idx] -= h
            grad[idx] = (ll(plus) - ll(minus)) / (2 * h)
        out[name] = grad
    grad = np.zeros_like(logits)
    for i in range(len(logits)):
        step = np.zeros_like(logits)
        step[i] = h
        grad[i] = (ll(model, logits + step) - ll(model, logits - step)) / (2 * h)
    out["logits"] = grad
    return out


def assert_grads_match(model, x):
    grads, batch_ll = batch_grad(model, x)
    assert batch_ll == pytest.approx(total_loglik(model, x), abs=1e-9)
    fd = numeric_grads(model, x)
    pairs = [(grads.d_mean, fd["means"]), (grads.d_sqrt_prec, fd["sqrt_prec"]),
             (grads.d_prec_loading, fd["prec_loading"]), (grads.d_logit, fd["logits"])]
    for analytic, numeric in pairs:
        scale = max(np.max(np.abs(numeric)), 1e-8) if numeric.size else 1.0
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * scale)


def assert_constraints(model, m_min, d_max):
    e = model.prec_diag
    assert np.all(e > 0) and np.all(e <= d_max)
    for k in range(len(model.weights)):
        mm = m_matrix(e[k], model.prec_loading[k])
        assert np.max(np.abs(mm - np.diag(np.diag(mm))), initial=0.0) <= 1e-8
        assert np.all(np.diag(mm) >= m_min * (1 - 1e-9))
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)


class TestBatchGrad:
    def test_stationary_mean(self, rs):
        comp = random_precision_component(rs, 4, 2)
        model = PrecisionModel([1.0], [comp.mean], [comp.sqrt_prec], [comp.prec_loading])
        grads, _ = batch_grad(model, comp.mean[None])
        np.testing.assert_allclose(grads.d_mean, 0.0, atol=1e-15)

    def test_logit_gradients_sum_to_zero(self, rs):
        model = random_precision_model(rs, 3, 4, 1)
        grads, _ = batch_grad(model, rs.normal(size=(9, 4)))
        assert abs(grads.d_logit.sum()) < 1e-12

    def test_finite_differences(self, rs):
        model = random_precision_model(rs, 2, 5, 2)
        assert_grads_match(model, rs.normal(size=(7, 5)))

    def test_zero_latent_dimension(self, rs):
        model = random_precision_model(rs, 2, 3, 0)
        assert_grads_match(model, rs.normal(size=(5, 3)))

    def test_indefinite_rejected(self):
        g = np.zeros((1, 3, 1))
        g[0, 0, 0] = 2.0
        model = PrecisionModel([1.0], np.zeros((1, 3)), np.ones((1, 3)), g)
        with pytest.raises(IndefiniteMatrixError):
            batch_grad(model, np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 3), st.integers(1, 3), st.integers(1, 10),
       st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(d, m, k, batch, seed):
    rs = np.random.default_rng(seed)
    model = random_precision_model(rs, k, d, min(m, d))
    x = model.means[rs.integers(k, size=batch)] + rs.normal(0, 0.7, size=(batch, d))
    assert_grads_match(model, x)


class TestApplyConstraints:
    def test_inactive_constraints(self, rs):
        e = np.array([[2.0, 3.0, 4.0]])
        g = np.zeros((1, 3, 2))
        g[0, 0, 0], g[0, 1, 1] = 0.5, 0.7
        model = PrecisionModel([1.0], np.zeros((1, 3)), np.sqrt(e), g)
        out = apply_constraints(model, 1e-4, 20.0)
        np.testing.assert_array_equal(out.sqrt_prec, model.sqrt_prec)
        np.testing.assert_array_equal(out.prec_loading, model.prec_loading)
        assert out is not model

    def test_negative_eigenvalue_rescaled(self):
        # E = I with first loading column (2, 0, 0): M_11 = -3
        g = np.zeros((1, 3, 2))
        g[0, 0, 0] = 2.0
        g[0, 1, 1] = 0.5
        model = PrecisionModel([1.0], np.zeros((1, 3)), np.ones((1, 3)), g)
        assert m_matrix(np.ones(3), g[0])[0, 0] == -3.0
        m_min = 1e-4
        out = apply_constraints(model, m_min, 20.0)
        inner = out.prec_loading[0].T @ out.prec_loading[0]
        assert inner[0, 0] == pytest.approx(1 - m_min, rel=1e-12)
        assert inner[1, 1] == pytest.approx(0.25, rel=1e-12)
        assert_constraints(out, m_min, 20.0)

    def test_precision_clipped_at_dmax(self):
        model = PrecisionModel([1.0], np.zeros((1, 2)), np.array([[5.0, 1.0]]), np.zeros((1, 2, 1)))
        out = apply_constraints(model, 1e-4, 20.0)
        np.testing.assert_allclose(out.prec_diag, [[20.0, 1.0]])

    def test_precision_floor(self):
        model = PrecisionModel([1.0], np.zeros((1, 2)), np.array([[0.0, -2.0]]), np.zeros((1, 2, 1)))
        out = apply_constraints(model, 1e-4, 20.0)
        assert np.all(out.sqrt_prec > 0)
        np.testing.assert_allclose(out.prec_diag, [[1e-6, 4.0]])

    def test_rotation_diagonalizes(self, rs):
        model = random_precision_model(rs, 2, 6, 3)
        before = [np.diag(p.prec_diag) - p.prec_loading @ p.prec_loading.T
                  for p in model.components]
        out = apply_constraints(model, 1e-4, 20.0)
        assert_constraints(out, 1e-4, 20.0)
        for k in range(2):
            p = out.component(k)
            after = np.diag(p.prec_diag) - p.prec_loading @ p.prec_loading.T
            np.testing.assert_allclose(after, before[k], atol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_arbitrary_input_becomes_feasible(self, seed, m):
        rs = np.random.default_rng(seed)
        model = PrecisionModel(rs.dirichlet(np.ones(2)), rs.normal(size=(2, 5)),
                               rs.normal(0, 3, (2, 5)), rs.normal(0, 2, (2, 5, m)))
        out = apply_constraints(model, 1e-3, 20.0)
        assert_constraints(out, 1e-3, 20.0)
        for k in range(2):
            gram = out.prec_loading[k].T @ out.prec_loading[k]
            assert np.linalg.det(gram) > 0


class TestInit:
    def test_initial_state(self):
        config = SgdConfig(seed=4)
        model = init_precision_model(7, 3, 2, config)
        assert np.all(np.abs(model.means) <= 0.1)
        np.testing.assert_allclose(model.prec_diag, 20.0)
        np.testing.assert_allclose(model.weights, 1 / 3)
        for k in range(3):
            np.testing.assert_allclose(m_matrix(model.prec_diag[k], model.prec_loading[k]),
                                       (1 - config.m_init) * np.eye(2), atol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgdConfig(m_min=1.0)
        with pytest.raises(ValueError):
            SgdConfig(batch_size=0)
        with pytest.raises(ValueError):
            SgdConfig(learning_rate=0.0)


def blob_data(n=600, seed=0):
    rs = np.random.default_rng(seed)
    centers = rs.normal(0, 1.0, (3, 4))
    return centers[rs.integers(3, size=n)] + rs.normal(0, 0.3, (n, 4))


class TestFitSgd:
    def test_deterministic(self):
        x = blob_data()
        config = SgdConfig(epochs_phase1=1, epochs_phase2=2, seed=3)
        a, ra = fit_sgd(x, 3, 1, config)
        b, rb = fit_sgd(x, 3, 1, config)
        for name in ("weights", "means", "sqrt_prec", "prec_loading"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert ra.loglik_trace == rb.loglik_trace

    def test_phase_one_moves_only_means(self):
        x = blob_data()
        config = SgdConfig(epochs_phase1=2, epochs_phase2=0, seed=1)
        init = init_precision_model(4, 3, 1, config)
        model, report = fit_sgd(x, 3, 1, config)
        np.testing.assert_array_equal(model.sqrt_prec, init.sqrt_prec)
        np.testing.assert_array_equal(model.prec_loading, init.prec_loading)
        np.testing.assert_array_equal(model.weights, init.weights)
        assert not np.array_equal(model.means, init.means)
        assert report.iterations_run == 2

    def test_constraints_hold_every_step(self):
        x = blob_data()
        config = SgdConfig(epochs_phase1=1, epochs_phase2=3, batch_size=50, seed=2)
        steps = []

        def check(step, model):
            assert_constraints(model, config.m_min, config.d_max)
            steps.append(step)

        fit_sgd(x, 3, 2, config, callback=check)
        assert steps == list(range(1, 4 * 12 + 1))

    def test_report(self):
        x = blob_data()
        model, report = fit_sgd(x, 3, 1, SgdConfig(epochs_phase1=1, epochs_phase2=2))
        assert len(report.loglik_trace) == report.iterations_run == 3
        assert len(report.batch_loglik) == 3
        assert report.final_loglik == pytest.approx(total_loglik(model, x))

    def test_bad_arguments(self):
        with pytest.raises(MfaError):
            fit_sgd(blob_data(), 2, 4)
        with pytest.raises(MfaError):
            fit_sgd(np.zeros((0, 3)), 2, 1)
