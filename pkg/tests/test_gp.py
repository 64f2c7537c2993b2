import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpovertake import gp
from gpovertake.cluster import kmeans_pp_init


@pytest.fixture(scope="module")
def sin_data():
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(0.0, 2.0 * math.pi, 200))
    y = np.sin(x) + 0.1 * rng.normal(size=200)
    return x, y


@given(a=st.floats(-5.0, 5.0), b=st.floats(-5.0, 5.0))
def test_kernel_properties(a, b):
    kern = gp.RbfKernel(lengthscale=0.7, signal_variance=1.3)
    kaa = kern(np.array([a]), np.array([a]))[0, 0]
    kab = kern(np.array([a]), np.array([b]))[0, 0]
    kba = kern(np.array([b]), np.array([a]))[0, 0]
    assert kaa == pytest.approx(1.3)
    assert kab == pytest.approx(kba)
    assert kab <= 1.3 + 1e-12


def test_kernel_validation():
    with pytest.raises(ValueError):
        gp.RbfKernel(lengthscale=-1.0, signal_variance=1.0)


def test_inducing_equals_data_matches_dense():
    rng = np.random.default_rng(7)
    x = np.sort(rng.uniform(0.0, 10.0, 50))
    y = np.sin(x) + 0.05 * rng.normal(size=50)
    kern = gp.RbfKernel(0.5, 1.0)
    noise = 0.05
    sparse = gp.make_sgp(x, y, x.copy(), kern, noise)
    dense = gp.make_dense_gp(x, y, kern, noise)
    grid = np.linspace(0.0, 10.0, 200)
    ps = gp.predict(sparse, grid)
    pd = gp.predict_dense(dense, grid)
    assert np.max(np.abs(ps.mean - pd.mean)) < 1e-6
    assert np.max(np.abs(ps.variance - pd.variance)) < 1e-6


def test_single_point_interpolation():
    model = gp.make_sgp([0.0], [0.7], [0.0], gp.RbfKernel(1.0, 1.0), 1e-8)
    post = gp.predict(model, [0.0])
    assert post.mean[0] == pytest.approx(0.7, abs=1e-3)


def test_sin_fit_quality(sin_data):
    x, y = sin_data
    sparse = gp.fit_sgp(x, y, 15, iters=200)
    dense = gp.fit_dense_gp(x, y, iters=200)
    grid = np.linspace(0.1, 2.0 * math.pi - 0.1, 300)
    truth = np.sin(grid)
    rmse_s = float(np.sqrt(np.mean((gp.predict(sparse, grid).mean - truth) ** 2)))
    rmse_d = float(np.sqrt(np.mean((gp.predict_dense(dense, grid).mean - truth) ** 2)))
    assert rmse_s < 0.05
    assert rmse_s <= 1.5 * rmse_d


def test_prior_reversion(sin_data):
    x, y = sin_data
    model = gp.fit_sgp(x, y, 12, iters=100)
    far = 2.0 * math.pi + 20.0 * model.kernel.lengthscale
    post = gp.predict(model, [far])
    assert post.mean[0] == pytest.approx(model.y_mean, abs=1e-6)
    assert post.variance[0] == pytest.approx(model.kernel.signal_variance, abs=1e-6)


def test_batch_matches_single_point(sin_data):
    x, y = sin_data
    model = gp.fit_sgp(x, y, 10, iters=60)
    grid = np.linspace(0.0, 6.0, 100)
    batch = gp.predict(model, grid)
    for i in (0, 17, 53, 99):
        single = gp.predict(model, [grid[i]])
        assert abs(batch.mean[i] - single.mean[0]) < 1e-12
        assert abs(batch.variance[i] - single.variance[0]) < 1e-12


def test_predictive_distance_at_inducing_point():
    z = np.linspace(0.0, 40.0, 8)
    x = np.linspace(0.0, 40.0, 30)
    y = 0.3 * np.sin(x)
    model = gp.make_sgp(x, y, z, gp.RbfKernel(2.0, 0.04), 1e-3)
    d = gp.predictive_distance(model, z)
    assert np.max(np.abs(d - 1e-3)) < 1e-9


def test_predictive_distance_far():
    z = np.array([0.0, 1.0])
    model = gp.make_sgp([0.0, 1.0], [0.1, -0.1], z, gp.RbfKernel(0.5, 0.8), 0.01)
    d = gp.predictive_distance(model, [0.5 + 10.0])
    assert d[0] == pytest.approx(0.8 + 0.01, abs=1e-6)


def test_predictive_distance_monotone_from_lone_inducing():
    model = gp.make_sgp([0.0, 0.2], [0.0, 0.1], [0.0], gp.RbfKernel(1.0, 1.0), 0.01)
    xs = np.linspace(0.0, 8.0, 200)
    d = gp.predictive_distance(model, xs)
    assert np.all(np.diff(d) >= -1e-12)


def test_dense_reproduces_training_targets():
    x = np.linspace(0.0, 5.0, 20)
    y = np.cos(x)
    model = gp.make_dense_gp(x, y, gp.RbfKernel(1.0, 1.0), 1e-8)
    post = gp.predict_dense(model, x)
    assert np.max(np.abs(post.mean - y)) < 1e-3
    assert np.all(post.variance <= 1e-8 + 1e-6)


def test_dense_refuses_large():
    x = np.linspace(0.0, 1.0, 2001)
    with pytest.raises(gp.GpFitError):
        gp.make_dense_gp(x, x, gp.RbfKernel(1.0, 1.0), 0.1)


def test_elbo_lower_bounds_dense_lml():
    rng = np.random.default_rng(11)
    for trial in range(8):
        n = int(rng.integers(20, 200))
        x = np.sort(rng.uniform(0.0, 10.0, n))
        y = rng.normal(size=n)
        kern = gp.RbfKernel(float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.2, 2.0)))
        noise = float(rng.uniform(0.01, 0.5))
        m = int(rng.integers(3, min(20, n)))
        z = np.sort(rng.choice(x, m, replace=False))
        sparse = gp.make_sgp(x, y, z, kern, noise)
        dense = gp.make_dense_gp(x, y, kern, noise)
        assert sparse.elbo <= dense.log_marginal + 1e-6


def test_elbo_monotone_in_inducing_count(sin_data):
    x, y = sin_data
    base = gp.fit_sgp(x, y, 10, iters=120)
    extra = kmeans_pp_init(x, 5, np.random.default_rng(1))
    init = dict(
        z=np.concatenate([base.z, extra]),
        lengthscale=base.kernel.lengthscale,
        signal_variance=base.kernel.signal_variance,
        noise_variance=base.noise_variance,
    )
    bigger = gp.fit_sgp(x, y, 15, iters=120, init=init)
    assert bigger.elbo >= base.elbo - 1e-6


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(42)
    x = rng.uniform(0.0, 10.0, 60)
    yc = np.sin(x) + 0.1 * rng.normal(size=60)
    yc -= yc.mean()
    h = 1e-5
    for _ in range(10):
        z = np.sort(rng.uniform(0.0, 10.0, 7))
        l = math.exp(rng.uniform(-1.0, 1.0))
        sf2 = math.exp(rng.uniform(-1.0, 1.0))
        sn2 = math.exp(rng.uniform(-4.0, -1.0))
        _, grad = gp.vfe_value_and_grad(x, yc, z, l, sf2, sn2)
        p = np.concatenate([[math.log(l), math.log(sf2), math.log(sn2)], z])
        fd = np.zeros_like(p)
        for i in range(p.size):
            pp, pm = p.copy(), p.copy()
            pp[i] += h
            pm[i] -= h
            fp = gp.vfe_value(x, yc, pp[3:], math.exp(pp[0]), math.exp(pp[1]), math.exp(pp[2]))
            fm = gp.vfe_value(x, yc, pm[3:], math.exp(pm[0]), math.exp(pm[1]), math.exp(pm[2]))
            fd[i] = (fp - fm) / (2.0 * h)
        rel = np.linalg.norm(grad - fd) / (np.linalg.norm(grad) + np.linalg.norm(fd))
        assert rel < 1e-4


def test_predict_cost_independent_of_n():
    rng = np.random.default_rng(0)
    grid = np.linspace(0.0, 10.0, 64)

    def timed_predict(n):
        x = np.sort(rng.uniform(0.0, 10.0, n))
        y = np.sin(x)
        model = gp.fit_sgp(x, y, 20, iters=30)
        times = []
        for _ in range(9):
            t0 = time.perf_counter()
            gp.predict(model, grid)
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    t_small = timed_predict(100)
    t_large = timed_predict(400)
    assert t_large <= 2.0 * t_small + 2e-4


def test_fit_errors():
    with pytest.raises(gp.GpFitError, match="degenerate"):
        gp.fit_sgp(np.zeros(10), np.ones(10), 3)
    with pytest.raises(ValueError, match="non-finite"):
        gp.fit_sgp(np.arange(10.0), np.full(10, np.nan), 3)
    with pytest.raises(gp.GpFitError):
        gp.fit_sgp(np.array([1.0]), np.array([0.0]), 1)


def test_inducing_count_clamped(sin_data):
    x, y = sin_data
    model = gp.fit_sgp(x[:5], y[:5], 40, iters=10)
    assert model.num_inducing <= 5


def test_serialization_round_trip(sin_data):
    x, y = sin_data
    model = gp.fit_sgp(x[:60], y[:60], 8, iters=40)
    text = gp.serialize_sgp(model)
    clone = gp.deserialize_sgp(text)
    grid = np.linspace(0.0, 6.0, 50)
    a = gp.predict(model, grid)
    b = gp.predict(clone, grid)
    assert np.max(np.abs(a.mean - b.mean)) < 1e-12
    assert np.max(np.abs(a.variance - b.variance)) < 1e-12


def test_snapshot_golden_values(repo_root):
    golden = (repo_root / "tests" / "data" / "sgp_golden.txt").read_text()
    model = gp.deserialize_sgp(golden)
    fields = dict(line.split(" ", 1) for line in golden.strip().splitlines()[1:])
    assert model.kernel.lengthscale == pytest.approx(float(fields["lengthscale"]), rel=1e-9)
    assert model.elbo == pytest.approx(float(fields["elbo"]), rel=1e-6)
