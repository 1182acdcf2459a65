import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import kstest, kurtosis, skew

from naglab.optimizers import (
    GradientOracle,
    NagFiConfig,
    NagGsConfig,
    initial_state,
    nag_fi_step,
    nag_gs_propose,
    nag_gs_step,
)
from naglab.problems import Quadratic
from naglab.sde import (
    MetricSeries,
    QuadraticExperiment,
    StationarityConfig,
    euler_maruyama_gf,
    run_nag_fi_quadratic_ensemble,
    run_nag_gs_ensemble,
    run_quadratic_ensemble,
    run_stationarity_study,
)


def _identity_grad(x):
    return x  # gradient of x^2/2, mu = L = 1


# ---------------------------------------------------------------------------
# Euler-Maruyama integrator

def test_em_deterministic_contraction_matches_recurrence():
    # sigma = 0, f = x^2/2, alpha = 0.1: x <- 0.9 x, bit-for-bit
    x0 = np.array([[1.0], [2.0], [-0.5]])
    ens = euler_maruyama_gf(_identity_grad, x0, 0.1, 0.0, 20, seed=0)
    ref = x0.copy()
    for _ in range(20):
        ref = ref - 0.1 * ref
    assert np.array_equal(ens.x, ref)
    assert_allclose(ens.x, 0.9 ** 20 * x0, rtol=1e-13)
    assert not ens.diverged.any()
    assert ens.v is None


def test_em_chunk_size_invariance_is_bitwise():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((17, 2))
    runs = [euler_maruyama_gf(_identity_grad, x0, 0.3, 0.7, 25, seed=5,
                              chunk_size=cs, track_mean=True, record_at=[10])
            for cs in (None, 1, 3, 17)]
    for other in runs[1:]:
        assert np.array_equal(runs[0].x, other.x)
        assert np.array_equal(runs[0].snapshots[10], other.snapshots[10])
        # trajectories are bitwise invariant; the mean accumulates chunk
        # partial sums, so only its summation order can differ
        assert_allclose(runs[0].mean_path, other.mean_path, rtol=1e-12,
                        atol=1e-15)


def test_em_per_trajectory_streams_replayable():
    # row i of the batch must equal a scalar replay drawn from the i-th
    # spawned child stream, independent of the other rows
    m, n_steps, seed = 6, 15, 42
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((m, 2))
    ens = euler_maruyama_gf(_identity_grad, x0, 0.2, 0.9, n_steps, seed)
    children = np.random.SeedSequence(seed).spawn(m)
    coef = 0.9 * math.sqrt(0.2)
    for i in range(m):
        eta = np.random.default_rng(children[i]).standard_normal((n_steps, 2))
        x = x0[i].copy()
        for k in range(n_steps):
            x = x - 0.2 * x + coef * eta[k]
        assert np.array_equal(ens.x[i], x)


def test_em_divergence_flagged_above_stability_limit():
    # alpha = 3 > 2/L on f = x^2/2 doubles |x| each step
    x0 = np.array([[1.0], [-2.0], [0.5]])
    ens = euler_maruyama_gf(_identity_grad, x0, 3.0, 0.0, 60, seed=0)
    assert ens.diverged.all()
    assert ens.diverged_fraction == 1.0
    assert np.all(np.isfinite(ens.x))  # frozen at the first crossing
    assert np.all(np.abs(ens.x) >= 1e8)


def test_em_freezes_rows_with_bad_gradients():
    def patchy_grad(x):
        g = x.copy()
        g[np.abs(x[:, 0]) > 10.0] = np.nan
        return g

    x0 = np.array([[100.0, 0.0], [1.0, 1.0]])
    ens = euler_maruyama_gf(patchy_grad, x0, 0.1, 0.0, 5, seed=0)
    assert ens.diverged.tolist() == [True, False]
    assert np.array_equal(ens.x[0], x0[0])  # frozen before any update
    assert_allclose(ens.x[1], 0.9 ** 5 * x0[1], rtol=1e-13)


def test_em_snapshots_and_mean_path():
    x0 = np.random.default_rng(2).standard_normal((9, 3))
    ens = euler_maruyama_gf(_identity_grad, x0, 0.1, 0.4, 12, seed=3,
                            record_at=[0, 7, 12], track_mean=True)
    assert np.array_equal(ens.snapshots[0], x0)
    assert ens.mean_path.shape == (13, 3)
    assert_allclose(ens.mean_path[0], x0.mean(axis=0), rtol=1e-15)
    assert_allclose(ens.mean_path[7], ens.snapshots[7].mean(axis=0), rtol=1e-12)
    assert_allclose(ens.mean_path[12], ens.snapshots[12].mean(axis=0), rtol=1e-12)
    assert np.array_equal(ens.snapshots[12], ens.x)


def test_em_validation():
    x0 = np.zeros((3, 1))
    with pytest.raises(ValueError):
        euler_maruyama_gf(_identity_grad, x0, -0.1, 0.0, 5, seed=0)
    with pytest.raises(ValueError):
        euler_maruyama_gf(_identity_grad, x0, 0.1, -1.0, 5, seed=0)
    with pytest.raises(ValueError):
        euler_maruyama_gf(_identity_grad, x0, 0.1, 0.0, 0, seed=0)
    with pytest.raises(ValueError):
        euler_maruyama_gf(_identity_grad, x0, 0.1, 0.0, 5, seed=0, record_at=[9])


def test_em_ou_stationary_variance_and_shape():
    # x' = (1 - alpha) x + sigma sqrt(alpha) eta has stationary variance
    # sigma^2 / (2 - alpha) and Gaussian law
    alpha, sigma, m = 0.5, 1.0, 20000
    ens = euler_maruyama_gf(_identity_grad, np.zeros((m, 1)), alpha, sigma,
                            200, seed=7)
    x = ens.x[:, 0]
    var_ref = sigma ** 2 / (2.0 - alpha)
    assert abs(x.var() - var_ref) < 4.0 * var_ref * math.sqrt(2.0 / m)
    assert kstest(x / math.sqrt(var_ref), "norm").statistic < 0.02


# ---------------------------------------------------------------------------
# NAG-GS ensemble

def test_nag_gs_ensemble_matches_manual_single_replay():
    m, n_steps, seed = 5, 12, 11
    cfg = NagGsConfig(alpha=0.7, mu=1.0, gamma0=1.0, sigma=0.8)
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((m, 2))
    lam = np.array([1.0, 1.9])
    ens = run_nag_gs_ensemble(lambda x: lam * x, x0, cfg, n_steps, seed)
    children = np.random.SeedSequence(seed).spawn(m)
    for i in range(m):
        eta = np.random.default_rng(children[i]).standard_normal((n_steps, 2))
        s = initial_state(x0[i], cfg.gamma0)
        for k in range(n_steps):
            xp = nag_gs_propose(s, cfg)
            s = nag_gs_step(s, lam * xp, cfg, noise=eta[k])
        assert np.array_equal(ens.x[i], s.x)
        assert np.array_equal(ens.v[i], s.v)


def test_nag_gs_ensemble_chunk_invariance():
    cfg = NagGsConfig(alpha=0.5, mu=1.0, gamma0=1.0, sigma=0.6)
    x0 = np.random.default_rng(5).standard_normal((11, 2))
    a = run_nag_gs_ensemble(lambda x: x, x0, cfg, 20, seed=1, chunk_size=None)
    b = run_nag_gs_ensemble(lambda x: x, x0, cfg, 20, seed=1, chunk_size=4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)


def test_nag_gs_ensemble_gamma_contraction():
    cfg = NagGsConfig(alpha=2.0, mu=0.5, gamma0=4.0, sigma=0.0)
    ens = run_nag_gs_ensemble(lambda x: x, np.zeros((3, 1)), cfg, 10, seed=0)
    expected = 0.5 + (4.0 - 0.5) / 3.0 ** 10
    assert_allclose(ens.gamma, expected, rtol=1e-12)


def test_nag_gs_ensemble_freezes_diverging_rows():
    cfg = NagGsConfig(alpha=1.0, mu=1.0, gamma0=1.0, sigma=0.0)
    x0 = np.array([[9.0e7], [1.0]])
    ens = run_nag_gs_ensemble(lambda x: -x, x0, cfg, 30, seed=0,
                              threshold=1e8)
    assert ens.diverged.tolist() == [True, False]
    assert np.all(np.isfinite(ens.x))
    # the clean row keeps evolving after the other froze
    solo = run_nag_gs_ensemble(lambda x: -x, x0[1:], cfg, 30, seed=0)
    assert_allclose(ens.x[1], solo.x[0], rtol=1e-12)


def test_nag_gs_gaussian_marginals_stay_gaussian():
    # linear drift + Gaussian noise: the final marginal must carry no skew
    # or excess kurtosis beyond Monte Carlo error
    m = 20000
    cfg = NagGsConfig(alpha=0.3, mu=1.0, gamma0=1.0, sigma=0.5)
    x0 = np.random.default_rng(6).standard_normal((m, 1))
    ens = run_nag_gs_ensemble(lambda x: x, x0, cfg, 50, seed=13)
    x = ens.x[:, 0]
    assert abs(skew(x)) < 5.0 * math.sqrt(6.0 / m)
    assert abs(kurtosis(x)) < 5.0 * math.sqrt(24.0 / m)


# ---------------------------------------------------------------------------
# NAG-FI quadratic ensemble

def test_nag_fi_ensemble_matches_stepper():
    q = Quadratic(np.array([[2.0, 0.3], [0.3, 1.0]]), shift_c=1.0)
    oracle = GradientOracle(dim=2, eval_grad=q.grad,
                            eval_hessian_apply=q.hessian_apply)
    cfg = NagFiConfig(alpha=0.8, mu=0.7, gamma0=1.2, sigma=0.5,
                      newton_tol=1e-13)
    m, n_steps, seed = 3, 10, 21
    x0 = np.random.default_rng(7).standard_normal((m, 2))
    ens = run_nag_fi_quadratic_ensemble(q, x0, cfg, n_steps, seed)
    children = np.random.SeedSequence(seed).spawn(m)
    for i in range(m):
        eta = np.random.default_rng(children[i]).standard_normal((n_steps, 2))
        s = initial_state(x0[i], cfg.gamma0)
        for k in range(n_steps):
            s = nag_fi_step(s, oracle, cfg, noise=eta[k])
        assert_allclose(ens.x[i], s.x, rtol=1e-10)
        assert_allclose(ens.v[i], s.v, rtol=1e-10)


def test_nag_fi_ensemble_stable_at_huge_alpha():
    q = Quadratic(np.diag([1.0, 1.5, 1.9]), shift_c=5.0)
    cfg = NagFiConfig(alpha=5000.0, mu=1.0, gamma0=1.0, sigma=1.0)
    x0 = np.random.default_rng(8).standard_normal((50, 3))
    ens = run_nag_fi_quadratic_ensemble(q, x0, cfg, 50, seed=2)
    assert not ens.diverged.any()
    assert np.all(np.isfinite(ens.x))
    # iterates concentrate near the minimizer despite the enormous step
    assert np.linalg.norm(ens.x.mean(axis=0) - q.minimizer) < 0.5


def test_nag_fi_ensemble_requires_quadratic():
    cfg = NagFiConfig(alpha=1.0, mu=1.0, gamma0=1.0)
    with pytest.raises(TypeError):
        run_nag_fi_quadratic_ensemble(object(), np.zeros((2, 2)), cfg, 5, 0)


# ---------------------------------------------------------------------------
# MetricSeries

def test_metric_series_append_and_query():
    s = MetricSeries(metadata={"tag": 1})
    s.append(0, "m", "a", 1.0)
    s.append(5, "m", "a", 2.0)
    s.append(0, "m", "b", 3.0)  # other method restarts its own clock
    s.append(0, "w", "a", 4.0)  # other metric too
    its, vals = s.series("m", "a")
    assert its.tolist() == [0, 5] and vals.tolist() == [1.0, 2.0]
    assert s.final("m", "a") == 2.0
    assert s.methods() == ["a", "b"]
    with pytest.raises(ValueError):
        s.append(5, "m", "a", 9.9)  # not strictly increasing
    with pytest.raises(KeyError):
        s.final("m", "zzz")


# ---------------------------------------------------------------------------
# quadratic experiment driver

def test_quadratic_experiment_validation():
    with pytest.raises(ValueError):
        QuadraticExperiment(alphas=())
    with pytest.raises(ValueError):
        QuadraticExperiment(alphas=(0.5,), mu=2.0, L=1.0)
    with pytest.raises(ValueError):
        QuadraticExperiment(alphas=(-0.5,))
    with pytest.raises(ValueError):
        QuadraticExperiment(alphas=(0.5,), dim=1)
    assert QuadraticExperiment(alphas=(0.5,)).gamma_start == 1.0
    assert QuadraticExperiment(alphas=(0.5,), gamma0=2.5).gamma_start == 2.5


def test_run_quadratic_ensemble_structure():
    exp = QuadraticExperiment(alphas=(0.5, 1.0), dim=3, n_points=40,
                              n_steps=8, seed=3)
    res = run_quadratic_ensemble(exp)
    labels = [f"nag_gs[alpha={a:.6g}]" for a in (0.5, 1.0)]
    assert res.series.methods() == sorted(labels)
    for a, label in zip((0.5, 1.0), labels):
        its, vals = res.series.series("mean_distance", label)
        assert its.tolist() == list(range(9))
        assert np.all(np.isfinite(vals))
        assert res.final_points[a].shape == (40, 3)
        assert res.diverged[a].shape == (40,)
        assert res.diverged_fraction[a] == 0.0
        assert res.series.final("diverged_fraction", label) == 0.0
    spec = np.sort(res.problem.spectrum)
    assert_allclose([spec[0], spec[-1]], [exp.mu, exp.L], atol=1e-10)
    assert res.series.metadata["optimizer"] == "nag_gs"
    assert res.series.metadata["c"] == 5.0


def test_run_quadratic_ensemble_deterministic():
    exp = QuadraticExperiment(alphas=(0.8,), n_points=30, n_steps=5, seed=9)
    r1 = run_quadratic_ensemble(exp)
    r2 = run_quadratic_ensemble(exp)
    assert r1.series.rows == r2.series.rows
    assert np.array_equal(r1.final_points[0.8], r2.final_points[0.8])


def test_run_quadratic_ensemble_optimizer_variants():
    exp = QuadraticExperiment(alphas=(0.5,), n_points=25, n_steps=6, seed=1)
    for opt in ("nag_fi", "gf_euler"):
        res = run_quadratic_ensemble(exp, optimizer=opt)
        label = f"{opt}[alpha=0.5]"
        assert res.series.methods() == [label]
        assert res.final_points[0.5].shape == (25, 3)
    with pytest.raises(ValueError):
        run_quadratic_ensemble(exp, optimizer="vanilla")


def test_run_quadratic_ensemble_mean_contracts():
    # sigma = 0: the ensemble mean must home in on the minimizer
    exp = QuadraticExperiment(alphas=(1.0,), sigma=0.0, n_points=50,
                              n_steps=60, seed=0)
    res = run_quadratic_ensemble(exp)
    _, vals = res.series.series("mean_distance", "nag_gs[alpha=1]")
    assert vals[-1] < 1e-3 * vals[0]


# ---------------------------------------------------------------------------
# stationarity study

def test_stationarity_config_epochs():
    cfg = StationarityConfig(alpha=0.05, sigma=0.1, mu=0.1, n_steps=3000)
    eps = cfg.epochs()
    assert eps[0] == 15 and eps[-1] == 3000 and len(eps) == 200
    cfg = StationarityConfig(alpha=0.05, sigma=0.1, mu=0.1, n_steps=2500,
                             record_every=1000)
    assert cfg.epochs() == [1000, 2000, 2500]


def test_stationarity_config_validation():
    with pytest.raises(ValueError):
        StationarityConfig(alpha=0.0, sigma=0.1, mu=0.1)
    with pytest.raises(ValueError):
        StationarityConfig(alpha=0.1, sigma=0.0, mu=0.1)
    with pytest.raises(ValueError):
        StationarityConfig(alpha=0.1, sigma=0.1, mu=0.1, n_points=1)
    with pytest.raises(ValueError):
        StationarityConfig(alpha=0.1, sigma=0.1, mu=0.1, domain=(2.0, -2.0))


def _small_study_config(**overrides):
    base = dict(alpha=0.05, sigma=0.1, mu=0.1, n_points=200, n_steps=100,
                domain=(-6.0, 6.0), grid_nodes=2 ** 14 + 1, n_reference=512,
                record_every=50, seed=0)
    base.update(overrides)
    return StationarityConfig(**base)


def test_stationarity_study_structure_and_determinism():
    series = run_stationarity_study("two_pit", _small_study_config())
    assert series.methods() == ["gf_euler", "nag_gs"]
    assert len(series.rows) == 2 * 2 * 3  # epochs x methods x metrics
    for metric in ("kl", "w1", "ks"):
        for method in ("gf_euler", "nag_gs"):
            its, vals = series.series(metric, method)
            assert its.tolist() == [50, 100]
            assert np.all(np.isfinite(vals))
    assert series.metadata["function"] == "two_pit"
    again = run_stationarity_study("two_pit", _small_study_config())
    assert series.rows == again.rows


def test_stationarity_study_grid_error_propagates():
    from naglab.metrics import GridError
    with pytest.raises(GridError):
        run_stationarity_study("two_pit", _small_study_config(domain=(-0.5, 0.5)))


def test_stationarity_study_converges_toward_reference():
    # the 10-step snapshot still remembers the uniform start (W1 ~ 1.3 to
    # the bimodal target); by the end the distance sits at the sampling floor
    cfg = _small_study_config(n_steps=2000, record_every=10, n_points=400)
    series = run_stationarity_study("two_pit", cfg)
    for method in ("gf_euler", "nag_gs"):
        _, w1 = series.series("w1", method)
        assert w1[0] > 0.8
        assert w1[-1] < 0.5 * w1[0]
