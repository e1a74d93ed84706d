import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from localpc import adaptive
from localpc.adaptive import (BiasingParams, CEConfig, DegenerateBatchError, ISBatch, MissedPosteriorError,
                              RuleSpec, ToyProblem, empirical_convergence_check, iteration_bound,
                              objective_hat, update_lambda, update_params)
from localpc.bayes import GaussianLikelihood, Prior
from localpc.models import FunctionModel


def _batch(samples, log_lik, log_weight=None):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    log_lik = np.asarray(log_lik, dtype=float)
    lw = np.zeros(len(samples)) if log_weight is None else np.asarray(log_weight, dtype=float)
    return ISBatch(samples, log_lik, lw)


# ---------------------------------------------------------------------------
# update_lambda
# ---------------------------------------------------------------------------

def test_lambda_fixed_point():
    ll = np.full(100, math.log(1e-3))
    lam, star = update_lambda(ll, math.inf, 0.05, 1e-3, 0.1)
    assert star == pytest.approx(1.0) and lam == 1.0


def test_lambda_arithmetic_example():
    ll = np.full(100, -100.0)
    lam, star = update_lambda(ll, math.inf, 0.05, 1e-3, 0.1)
    assert star == pytest.approx(100 / math.log(1000), rel=1e-12)
    assert star == pytest.approx(14.476, abs=1e-3)
    assert lam == star
    # clamp by the minimum step once lambda is finite
    lam, _ = update_lambda(ll, 14.0, 0.05, 1e-3, 0.5)
    assert lam == pytest.approx(13.5)


def test_lambda_floor():
    ll = np.full(20, 1.1 * math.log(1e-3))  # lambda* = 1.1
    lam, star = update_lambda(ll, 1.2, 0.05, 1e-3, 0.5)
    assert star == pytest.approx(1.1) and lam == 1.0


def test_lambda_uses_order_statistic_and_reference():
    M = 1000
    ll = -np.arange(M, dtype=float)[::-1]  # -999 .. 0 ascending
    # 1-based position ceil(0.95 * 1000) = 950 -> value -50
    _, star = update_lambda(ll, math.inf, 0.05, 1e-3, 0.1)
    assert star == pytest.approx(50 / math.log(1000))
    _, star = update_lambda(ll - 7.0, math.inf, 0.05, 1e-3, 0.1, log_ref=None)
    assert star == pytest.approx(50 / math.log(1000))


def test_lambda_missed_posterior():
    with pytest.raises(MissedPosteriorError, match="missed the posterior"):
        update_lambda(np.full(10, -np.inf), math.inf, 0.05, 1e-3, 0.1)
    ll = np.r_[np.full(99, -np.inf), 0.0]
    with pytest.raises(MissedPosteriorError):
        update_lambda(ll, math.inf, 0.05, 1e-3, 0.1)
    with pytest.raises(ValueError):
        update_lambda(np.zeros(10), math.inf, 0.05, 2.0, 0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-500, 0), min_size=50, max_size=300), st.floats(0.01, 0.3),
       st.floats(1e-6, 0.5))
def test_elite_consistency(ll, rho, gamma):
    ll = np.asarray(ll)
    lam, star = update_lambda(ll, math.inf, rho, gamma, 0.1)
    if lam == star and lam > 1:
        frac = np.mean(ll / lam >= math.log(gamma) - 1e-12)
        assert frac >= rho - 1.0 / ll.size


@settings(max_examples=40, deadline=None)
@given(st.floats(1.5, 200.0), st.floats(0.01, 0.5), st.integers(0, 10_000))
def test_lambda_sequence_terminates_within_bound(lam1, frac, seed):
    """Strict decrease by at least delta and arrival at 1 within the bound."""
    rng = np.random.default_rng(seed)
    delta = frac * (lam1 - 1)
    lam, steps = lam1, 1
    bound = iteration_bound(lam1, delta)
    while lam > 1:
        # arbitrary batches: lambda* anywhere in [0, 2 lam]
        target = rng.uniform(0, 2 * lam)
        ll = np.full(50, target * math.log(1e-3))
        new, _ = update_lambda(ll, lam, 0.05, 1e-3, delta)
        assert new <= lam - delta + 1e-12 or new == 1.0
        lam, steps = new, steps + 1
    assert lam == 1.0
    assert steps <= bound


# ---------------------------------------------------------------------------
# update_params and objective_hat
# ---------------------------------------------------------------------------

def test_update_params_examples():
    v, ess = update_params(_batch([0.0, 2.0], np.log([1.0, 3.0])), 1.0, min_ess=1)
    assert v.mu[0] == pytest.approx(1.5)
    assert v.sigma[0] == pytest.approx(math.sqrt(0.75))
    assert ess == pytest.approx(16 / 10)
    y = np.random.default_rng(0).normal(size=(500, 2))
    v, ess = update_params(_batch(y, np.zeros(500)), 1.0)
    np.testing.assert_allclose(v.mu, y.mean(0), atol=1e-14)
    np.testing.assert_allclose(v.sigma, y.std(0), atol=1e-14)
    assert ess == pytest.approx(500)


def test_update_params_degenerate():
    ll = np.r_[0.0, np.full(99, -1e4)]
    with pytest.raises(DegenerateBatchError, match="effective sample size"):
        update_params(_batch(np.arange(100.0), ll), 1.0)
    with pytest.raises(DegenerateBatchError):
        update_params(_batch(np.arange(3.0), np.full(3, -np.inf)), 1.0)


def _toy_batch(seed=0, M=4000):
    rng = np.random.default_rng(seed)
    y = rng.normal([0.2, -0.5], [1.0, 0.7], size=(M, 2))
    ll = -0.5 * ((y[:, 0] - 0.6) ** 2 / 0.3 + (y[:, 1] + y[:, 0] * 0.2) ** 2 / 0.5)
    lw = -0.5 * (y[:, 0] ** 2 + y[:, 1] ** 2) + 0.5 * (((y - [0.2, -0.5]) / [1.0, 0.7]) ** 2).sum(1) \
        + np.log(0.7)
    return ISBatch(y, ll, lw)


@pytest.mark.parametrize("lam", [1.0, 3.0])
def test_closed_form_matches_numerical_maximizer(lam):
    batch = _toy_batch()
    v, _ = update_params(batch, lam)

    def neg(theta):
        return -objective_hat(batch, BiasingParams(theta[:2], np.exp(theta[2:])), lam)

    x0 = np.r_[0.0, 0.0, 0.0, 0.0]
    res = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20_000, "maxfev": 20_000})
    np.testing.assert_allclose(res.x[:2], v.mu, atol=1e-4)
    np.testing.assert_allclose(np.exp(res.x[2:]), v.sigma, atol=1e-4)


def test_update_params_zeroes_gradient():
    batch = _toy_batch(1)
    lam = 2.0
    v, _ = update_params(batch, lam)
    w = np.exp(batch.log_lik / lam + batch.log_weight)
    y = batch.samples
    g_mu = (w[:, None] * (y - v.mu) / v.sigma**2).sum(0)
    g_sig = (w[:, None] * ((y - v.mu) ** 2 / v.sigma**3 - 1 / v.sigma)).sum(0)
    scale_mu = (w[:, None] * np.abs(y - v.mu) / v.sigma**2).sum(0)
    scale_sig = (w[:, None] * ((y - v.mu) ** 2 / v.sigma**3 + 1 / v.sigma)).sum(0)
    assert np.all(np.abs(g_mu) <= 1e-8 * scale_mu)
    assert np.all(np.abs(g_sig) <= 1e-8 * scale_sig)


@settings(max_examples=30, deadline=None)
@given(st.floats(-700, 700), st.floats(1.0, 10.0))
def test_positive_scaling_invariance(log_c, lam):
    batch = _toy_batch(2, 500)
    scaled = ISBatch(batch.samples, batch.log_lik + log_c * lam, batch.log_weight)
    a, _ = update_params(batch, lam)
    b, _ = update_params(scaled, lam)
    # identical up to the rounding of (log L + c) - (max + c)
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-10, atol=1e-12)
    # objective value is unchanged after the batch-max shift, so the argmax is too
    v = BiasingParams([0.1, -0.3], [0.9, 0.8])
    assert objective_hat(batch, v, lam) == pytest.approx(objective_hat(scaled, v, lam), rel=1e-10)


def test_objective_with_prior_biasing_is_plain_mc():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(10_000, 1))
    batch = _batch(y, np.zeros(len(y)))  # L constant, q = prior so l = 1
    v = BiasingParams([0.3], [1.5])
    assert objective_hat(batch, v, 1.0) == pytest.approx(np.mean(v.logpdf(y)), rel=1e-13)
    # analytic cross-entropy of N(0,1) against N(0.3, 1.5^2), within 3 SE
    exact = -math.log(1.5) - 0.5 * math.log(2 * math.pi) - (1 + 0.3**2) / (2 * 1.5**2)
    se = np.std(v.logpdf(y)) / math.sqrt(len(y))
    assert abs(objective_hat(batch, v, 1.0) - exact) < 3 * se


def test_objective_large_lambda_is_weighted_fit():
    rng = np.random.default_rng(5)
    y = rng.normal(size=(2000, 1))
    batch = _batch(y, rng.uniform(-30, 0, 2000), -0.1 * y[:, 0] ** 2)
    v_inf, _ = update_params(batch, 1e12)
    w = np.exp(-0.1 * y[:, 0] ** 2)
    mu = np.sum(w * y[:, 0]) / w.sum()
    assert v_inf.mu[0] == pytest.approx(mu, rel=1e-9)


def test_analytic_optimum_beats_random_parameters():
    # pi = N(0,1), L = N(d; y, s^2): posterior N(d/(1+s^2), s^2/(1+s^2))
    d, s = 1.0, 0.5
    rng = np.random.default_rng(6)
    y = rng.normal(size=(100_000, 1))
    batch = _batch(y, -0.5 * ((d - y[:, 0]) / s) ** 2)
    best = BiasingParams([d / (1 + s * s)], [math.sqrt(s * s / (1 + s * s))])
    f_best = objective_hat(batch, best, 1.0)
    for _ in range(20):
        v = BiasingParams(rng.uniform(-1, 2, 1), rng.uniform(0.1, 2, 1))
        assert objective_hat(batch, v, 1.0) < f_best


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------

def _conjugate_run(seed):
    prior = Prior.gaussian([0.0], 2.0)
    lik = GaussianLikelihood([0.7], 0.5)
    model = FunctionModel(lambda y: y[:, :1], 1, 1, vectorized=True)
    cfg = CEConfig(n_samples=20_000, order=1, rule=RuleSpec("tensor", 2), seed=seed)
    return adaptive.run(model, prior, lik, cfg, BiasingParams([0.0], [1.0])), model


def test_conjugate_end_to_end():
    res, model = _conjugate_run(0)
    post_var = 1 / (1 / 2 + 1 / 0.25)
    post_mean = post_var * 0.7 / 0.25
    ess = res.trace[-1].ess
    se = math.sqrt(post_var / ess)
    assert abs(res.biasing.mu[0] - post_mean) < 3 * se
    assert res.biasing.sigma[0] == pytest.approx(math.sqrt(post_var), rel=0.1)
    assert res.trace[-1].lam == 1.0
    assert res.model_evals == model.n_evals == 2 * (res.iterations + 1)
    lam = [r.lam for r in res.trace]
    assert all(b < a for a, b in zip(lam, lam[1:]))
    assert res.iterations <= iteration_bound(lam[0], res.delta)


def test_run_is_deterministic():
    a, _ = _conjugate_run(3)
    b, _ = _conjugate_run(3)
    np.testing.assert_array_equal(a.biasing.mu, b.biasing.mu)
    np.testing.assert_array_equal(a.surrogate.coefficients, b.surrogate.coefficients)


def test_extra_passes_add_lambda_one_updates():
    prior = Prior.gaussian([0.0], 2.0)
    lik = GaussianLikelihood([0.7], 0.5)
    model = FunctionModel(lambda y: y[:, :1], 1, 1, vectorized=True)
    base = dict(n_samples=5000, order=1, rule=RuleSpec("tensor", 2), seed=1)
    r0 = adaptive.run(model, prior, lik, CEConfig(**base), BiasingParams([0.0], [1.0]))
    r2 = adaptive.run(model, prior, lik, CEConfig(extra_passes=2, **base), BiasingParams([0.0], [1.0]))
    assert r2.iterations == r0.iterations + 2
    assert [r.lam for r in r2.trace[-3:]] == [1.0, 1.0, 1.0]


def test_max_iteration_overrun():
    prior = Prior.gaussian([0.0], 2.0)
    lik = GaussianLikelihood([3.0], 0.01)
    model = FunctionModel(lambda y: y[:, :1], 1, 1, vectorized=True)
    cfg = CEConfig(n_samples=1000, order=1, rule=RuleSpec("tensor", 2), max_iter=1, min_ess=1)
    with pytest.raises(RuntimeError, match="exceeded"):
        adaptive.run(model, prior, lik, cfg, BiasingParams([0.0], [1.0]))


def test_tensor_rule_index_set_is_restricted():
    assert len(RuleSpec("tensor", 3).index_set(2, 4)) == 9
    assert len(RuleSpec("smolyak", 3).index_set(2, 4)) == 15


def test_invalid_configs():
    for kw in [dict(rho=0), dict(rho=1), dict(gamma=1.0), dict(gamma=0), dict(n_samples=10),
               dict(delta=0.0), dict(lambda_reference="median")]:
        with pytest.raises(ValueError):
            CEConfig(**kw)
    with pytest.raises(ValueError):
        BiasingParams([0.0], [0.0])


def test_trace_and_biasing_roundtrip(tmp_path):
    res, _ = _conjugate_run(0)
    adaptive.save_trace(res.trace, tmp_path / "trace.tsv")
    back = adaptive.load_trace(tmp_path / "trace.tsv")
    assert len(back) == len(res.trace)
    for a, b in zip(back, res.trace):
        assert (a.k, a.lam, a.model_evals) == (b.k, b.lam, b.model_evals)
        np.testing.assert_array_equal(a.mu, b.mu)
    header = (tmp_path / "trace.tsv").read_text().splitlines()[0]
    assert header == "# k\tlambda\tmu_1\tsigma_1\tESS\tcum_model_evals"
    adaptive.save_biasing(res.biasing, tmp_path / "b.tsv")
    v = adaptive.load_biasing(tmp_path / "b.tsv")
    np.testing.assert_array_equal(v.mu, res.biasing.mu)
    np.testing.assert_array_equal(v.sigma, res.biasing.sigma)


# ---------------------------------------------------------------------------
# estimator convergence on the toy problem
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def convergence_table():
    return empirical_convergence_check(ToyProblem(), sample_sizes=(1_000, 10_000, 100_000),
                                       orders=(0, 1, 2), n_rep=20, seed=0)


def test_mc_rate_when_surrogate_is_exact(convergence_table):
    for v in range(3):
        err = [r["rmse"] for r in convergence_table if r["N"] == 2 and r["v"] == v]
        for a, b in zip(err, err[1:]):
            ratio = a / b
            assert math.sqrt(10) / 3 <= ratio <= 3 * math.sqrt(10)


def test_error_decreases_with_order(convergence_table):
    for v in range(3):
        err = [r["rmse"] for r in convergence_table if r["M"] == 100_000 and r["v"] == v]
        assert err[0] > err[1] > err[2]
