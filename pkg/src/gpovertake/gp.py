"""Gaussian-process regression on scalar inputs.

Two model families over a shared RBF kernel:

* ``DenseGpModel`` — exact GP regression.  Used as a test oracle and as the
  "latest data only" prediction baseline.
* ``SgpModel`` — variational sparse approximation with M inducing inputs.
  Inducing inputs and hyperparameters are jointly optimized by gradient
  ascent on the variational lower bound of the log marginal likelihood
  (log-space hyperparameters, adaptive step halved whenever the bound
  decreases, fixed iteration cap, deterministic).

Both models use a zero prior mean on targets centered by their training mean;
the mean is added back at prediction.  Posterior variances are the latent
(noise-free) variances.  The sparse posterior at a test point ``x*`` is

    mean = k(x*, Z) W K(Z, X) y / noise
    var  = k(x*, x*) - q(x*, x*) + k(x*, Z) W k(Z, x*)

with W = (K(Z,Z) + K(Z,X) K(X,Z)/noise)^-1 and q the Nystrom term
k(x*, Z) K(Z,Z)^-1 k(Z, x*).  Fitted models cache factorizations so
per-point prediction cost depends only on M, not on the dataset size.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .cluster import kmeans_pp_init, lloyd

JITTER_FRAC = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


class GpFitError(ValueError):
    """Raised for degenerate training inputs or failed factorizations."""


@dataclass(frozen=True)
class RbfKernel:
    """Squared-exponential kernel k(a, b) = sf2 * exp(-(a-b)^2 / (2 l^2))."""

    lengthscale: float
    signal_variance: float

    def __post_init__(self):
        if self.lengthscale <= 0 or self.signal_variance <= 0:
            raise ValueError("kernel parameters must be positive")

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        d2 = (a[:, None] - b[None, :]) ** 2
        return self.signal_variance * np.exp(-0.5 * d2 / self.lengthscale**2)

    def diag(self, a):
        a = np.asarray(a, dtype=float).ravel()
        return np.full(a.size, self.signal_variance)


@dataclass(frozen=True)
class Posterior:
    """Predictive mean and latent variance (clamped at zero)."""

    mean: np.ndarray
    variance: np.ndarray


def _validate_xy(x, y, min_n):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("inputs and targets must have equal length")
    if x.size < min_n:
        raise GpFitError(f"need at least {min_n} training points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    return x, y


# -- dense GP ------------------------------------------------------------------


@dataclass
class DenseGpModel:
    kernel: RbfKernel
    noise_variance: float
    x: np.ndarray
    y: np.ndarray
    y_mean: float
    log_marginal: float
    _chol: np.ndarray
    _alpha: np.ndarray


def make_dense_gp(x, y, kernel: RbfKernel, noise_variance: float) -> DenseGpModel:
    """Exact GP with fixed hyperparameters."""
    x, y = _validate_xy(x, y, 1)
    if x.size > 2000:
        raise GpFitError("dense GP refuses more than 2000 points")
    y_mean = float(y.mean())
    yc = y - y_mean
    k = kernel(x, x)
    ky = k + (noise_variance + JITTER_FRAC * kernel.signal_variance * 1e-4) * np.eye(x.size)
    try:
        chol = sla.cholesky(ky, lower=True)
    except sla.LinAlgError as exc:
        raise GpFitError(f"kernel matrix not positive definite: {exc}") from None
    alpha = sla.cho_solve((chol, True), yc)
    lml = -0.5 * float(yc @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * x.size * LOG_2PI
    return DenseGpModel(
        kernel=kernel, noise_variance=float(noise_variance), x=x, y=y,
        y_mean=y_mean, log_marginal=lml, _chol=chol, _alpha=alpha,
    )


def predict_dense(model: DenseGpModel, xs) -> Posterior:
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ks = model.kernel(model.x, xs)
    mean = model.y_mean + ks.T @ model._alpha
    v = sla.solve_triangular(model._chol, ks, lower=True)
    var = model.kernel.diag(xs) - np.sum(v**2, axis=0)
    return Posterior(mean=mean, variance=np.maximum(var, 0.0))


def dense_log_marginal(x, yc, log_l, log_sf2, log_sn2, want_grad=False):
    """Log marginal likelihood of the centered targets, optionally with
    gradients in the log parameterization."""
    n = x.size
    l, sf2, sn2 = math.exp(log_l), math.exp(log_sf2), math.exp(log_sn2)
    d2 = (x[:, None] - x[None, :]) ** 2
    k = sf2 * np.exp(-0.5 * d2 / l**2)
    ky = k + sn2 * np.eye(n)
    try:
        chol = sla.cholesky(ky, lower=True)
    except sla.LinAlgError:
        return (-np.inf, None) if want_grad else -np.inf
    alpha = sla.cho_solve((chol, True), yc)
    lml = -0.5 * float(yc @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * LOG_2PI
    if not want_grad:
        return lml
    kinv = sla.cho_solve((chol, True), np.eye(n))
    s = np.outer(alpha, alpha) - kinv
    g_l = 0.5 * float(np.sum(s * (k * d2 / l**2)))
    g_sf2 = 0.5 * float(np.sum(s * k))
    g_sn2 = 0.5 * float(np.trace(s)) * sn2
    return lml, np.array([g_l, g_sf2, g_sn2])


def _ascend(value_and_grad, value_only, p0, steps0, iters, lower, upper):
    """Monotone gradient ascent: per-block normalized steps, halved on any
    bound decrease, grown 1.25x on acceptance."""
    p = np.clip(p0, lower, upper)
    f, grad = value_and_grad(p)
    steps = np.asarray(steps0, dtype=float).copy()
    caps = steps * 50.0
    for _ in range(iters):
        direction = np.zeros_like(p)
        for blk_slice, step in _blocks(p, steps):
            g = grad[blk_slice]
            scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
            direction[blk_slice] = step * g / scale
        cand = np.clip(p + direction, lower, upper)
        f_cand = value_only(cand)
        if f_cand > f:
            p = cand
            f, grad = value_and_grad(p)
            steps = np.minimum(steps * 1.25, caps)
        else:
            steps *= 0.5
            if np.all(steps < 1e-13):
                break
    return p, f


def _blocks(p, steps):
    # Block 0: the first three entries (log hyperparameters); block 1: the rest.
    yield slice(0, 3), steps[0]
    if p.size > 3:
        yield slice(3, p.size), steps[1]


def fit_dense_gp(x, y, iters=200, init=None) -> DenseGpModel:
    """Exact GP with hyperparameters fitted by gradient ascent on the log
    marginal likelihood (same optimizer and iteration budget as fit_sgp)."""
    x, y = _validate_xy(x, y, 2)
    if x.size > 2000:
        raise GpFitError("dense GP refuses more than 2000 points")
    if float(np.ptp(x)) == 0.0:
        raise GpFitError("degenerate inputs: all training inputs identical")
    yc = y - y.mean()
    span = float(np.ptp(x))
    var_y = max(float(np.var(yc)), 1e-8)
    if init is None:
        p0 = np.log([span / 10.0, var_y, 0.1 * var_y + 1e-6])
    else:
        p0 = np.log([init["lengthscale"], init["signal_variance"], init["noise_variance"]])
    lower = np.log([1e-4 * span, 1e-10, 1e-10])
    upper = np.log([1e2 * span, 1e8 * var_y, 1e4 * var_y])

    def vag(p):
        f, g = dense_log_marginal(x, yc, *p, want_grad=True)
        if g is None:
            g = np.zeros(3)
        return f, g

    def vo(p):
        return dense_log_marginal(x, yc, *p)

    p, _ = _ascend(vag, vo, p0, steps0=np.array([0.15, 0.0]), iters=iters, lower=lower, upper=upper)
    l, sf2, sn2 = np.exp(p)
    return make_dense_gp(x, y, RbfKernel(l, sf2), sn2)


# -- sparse GP -----------------------------------------------------------------


@dataclass
class SgpModel:
    """Fitted sparse model: inducing inputs, kernel, noise, cached factors."""

    z: np.ndarray
    kernel: RbfKernel
    noise_variance: float
    x: np.ndarray
    y: np.ndarray
    y_mean: float
    elbo: float
    _chol_mm: np.ndarray
    _chol_b: np.ndarray
    _mean_w: np.ndarray

    @property
    def num_inducing(self):
        return self.z.size


def _sgp_factors(x, yc, z, l, sf2, sn2):
    m = z.size
    n = x.size
    d2_mn = (z[:, None] - x[None, :]) ** 2
    k_mn = sf2 * np.exp(-0.5 * d2_mn / l**2)
    d2_mm = (z[:, None] - z[None, :]) ** 2
    k_mm = sf2 * np.exp(-0.5 * d2_mm / l**2) + JITTER_FRAC * sf2 * np.eye(m)
    try:
        chol_mm = sla.cholesky(k_mm, lower=True)
    except sla.LinAlgError as exc:
        raise GpFitError(f"inducing kernel matrix not positive definite: {exc}") from None
    u = sla.solve_triangular(chol_mm, k_mn, lower=True)
    sn = math.sqrt(sn2)
    a = u / sn
    b = np.eye(m) + a @ a.T
    chol_b = sla.cholesky(b, lower=True)
    ay = a @ yc
    c = sla.solve_triangular(chol_b, ay, lower=True) / sn
    elbo = (
        -0.5 * n * LOG_2PI
        - float(np.sum(np.log(np.diag(chol_b))))
        - 0.5 * n * math.log(sn2)
        - 0.5 * float(yc @ yc) / sn2
        + 0.5 * float(c @ c)
        - 0.5 * n * sf2 / sn2
        + 0.5 * float(np.sum(a * a))
    )
    return {
        "d2_mn": d2_mn, "k_mn": k_mn, "d2_mm": d2_mm, "k_mm": k_mm,
        "chol_mm": chol_mm, "u": u, "a": a, "chol_b": chol_b, "c": c,
        "elbo": elbo,
    }


def vfe_value(x, yc, z, lengthscale, signal_variance, noise_variance):
    """Variational lower bound on the log marginal of the centered targets."""
    return _sgp_factors(x, yc, z, lengthscale, signal_variance, noise_variance)["elbo"]


def vfe_value_and_grad(x, yc, z, lengthscale, signal_variance, noise_variance):
    """Bound value plus analytic gradients.

    Returns ``(value, grad)`` where grad stacks the derivatives with respect
    to (log lengthscale, log signal_variance, log noise_variance, z_1..z_M).
    Cost is O(N M^2 + M^3); no N x N matrices are formed.
    """
    x = np.asarray(x, dtype=float).ravel()
    yc = np.asarray(yc, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    l, sf2, sn2 = lengthscale, signal_variance, noise_variance
    n, m = x.size, z.size
    f = _sgp_factors(x, yc, z, l, sf2, sn2)
    k_mn, k_mm = f["k_mn"], f["k_mm"]
    chol_mm, chol_b, a, u, c = f["chol_mm"], f["chol_b"], f["a"], f["u"], f["c"]

    # P = Kmm^-1 Kmn;  alpha = G^-1 y with G = Knm Kmm^-1 Kmn + sn2 I.
    p = sla.solve_triangular(chol_mm.T, u, lower=False)
    h = math.sqrt(sn2) * sla.solve_triangular(chol_b.T, c, lower=False)
    alpha = (yc - a.T @ h) / sn2

    b_inv = sla.cho_solve((chol_b, True), np.eye(m))
    b_inv_a = b_inv @ a
    pa_t = p @ a.T

    p_alpha = p @ alpha
    p_ginv = (p - pa_t @ b_inv_a) / sn2
    g_mn = np.outer(p_alpha, alpha) - p_ginv + p / sn2

    pp_t = p @ p.T
    p_ginv_pt = (pp_t - pa_t @ b_inv @ pa_t.T) / sn2
    g_mm = -0.5 * (np.outer(p_alpha, p_alpha) - p_ginv_pt) - 0.5 * pp_t / sn2

    tr_ginv = (n - m + float(np.trace(b_inv))) / sn2
    tr_s = float(alpha @ alpha) - tr_ginv
    tr_knn = n * sf2
    tr_q = float(np.sum(u * u))
    d_sn2 = 0.5 * tr_s + 0.5 * (tr_knn - tr_q) / sn2**2

    g_log_sn2 = sn2 * d_sn2
    g_log_sf2 = float(np.sum(g_mn * k_mn)) + float(np.sum(g_mm * k_mm)) - 0.5 * n * sf2 / sn2
    g_log_l = (
        float(np.sum(g_mn * k_mn * f["d2_mn"])) + float(np.sum(g_mm * k_mm * f["d2_mm"]))
    ) / l**2
    g_z = (
        np.sum(g_mn * k_mn * (x[None, :] - z[:, None]), axis=1)
        + 2.0 * np.sum(g_mm * k_mm * (z[None, :] - z[:, None]), axis=1)
    ) / l**2

    grad = np.concatenate([[g_log_l, g_log_sf2, g_log_sn2], g_z])
    return f["elbo"], grad


def make_sgp(x, y, z, kernel: RbfKernel, noise_variance: float) -> SgpModel:
    """Sparse model with fixed inducing inputs and hyperparameters."""
    x, y = _validate_xy(x, y, 1)
    z = np.asarray(z, dtype=float).ravel()
    if z.size < 1:
        raise ValueError("need at least one inducing input")
    y_mean = float(y.mean())
    yc = y - y_mean
    f = _sgp_factors(x, yc, z, kernel.lengthscale, kernel.signal_variance, noise_variance)
    # mean weights: predictions are k(x*, Z) @ w + y_mean.
    hvec = sla.solve_triangular(f["chol_b"].T, f["c"], lower=False)
    w = sla.solve_triangular(f["chol_mm"].T, hvec, lower=False)
    return SgpModel(
        z=z, kernel=kernel, noise_variance=float(noise_variance),
        x=x, y=y, y_mean=y_mean, elbo=f["elbo"],
        _chol_mm=f["chol_mm"], _chol_b=f["chol_b"], _mean_w=w,
    )


def fit_sgp(x, y, m, iters=200, seed=0, init=None, optimize_inducing=True) -> SgpModel:
    """Fit a sparse model: inducing inputs from k-means++ (or ``init``),
    then joint gradient ascent on the variational bound."""
    x, y = _validate_xy(x, y, 2)
    if float(np.ptp(x)) == 0.0:
        raise GpFitError("degenerate inputs: all training inputs identical")
    m = int(min(m, x.size))
    if m < 1:
        raise ValueError("need at least one inducing point")

    yc = y - y.mean()
    span = float(np.ptp(x))
    var_y = max(float(np.var(yc)), 1e-8)

    if init is not None:
        z0 = np.asarray(init["z"], dtype=float).ravel()
        m = z0.size
        hyp0 = np.log([init["lengthscale"], init["signal_variance"], init["noise_variance"]])
    else:
        rng = np.random.default_rng(seed)
        centers = kmeans_pp_init(x, m, rng)
        z0, _ = lloyd(x, centers, max_iter=20)
        z0 = np.sort(z0)
        hyp0 = np.log([span / 10.0, var_y, 0.1 * var_y + 1e-6])

    p0 = np.concatenate([hyp0, z0])
    pad = 0.1 * span
    lower = np.concatenate([np.log([1e-4 * span, 1e-10, 1e-10]), np.full(m, x.min() - pad)])
    upper = np.concatenate([np.log([1e2 * span, 1e8 * var_y, 1e4 * var_y]), np.full(m, x.max() + pad)])

    def vag(p):
        return vfe_value_and_grad(x, yc, p[3:], math.exp(p[0]), math.exp(p[1]), math.exp(p[2]))

    def vo(p):
        try:
            return vfe_value(x, yc, p[3:], math.exp(p[0]), math.exp(p[1]), math.exp(p[2]))
        except GpFitError:
            return -np.inf

    step_z = 0.02 * span if optimize_inducing else 0.0
    p, _ = _ascend(vag, vo, p0, steps0=np.array([0.15, step_z]), iters=iters, lower=lower, upper=upper)

    l, sf2, sn2 = np.exp(p[:3])
    return make_sgp(x, y, p[3:], RbfKernel(l, sf2), sn2)


def predict(model: SgpModel, xs) -> Posterior:
    """Sparse posterior at test point(s); batch and scalar query alike."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    k_sm = model.kernel(model.z, xs)
    mean = model.y_mean + k_sm.T @ model._mean_w
    v1 = sla.solve_triangular(model._chol_mm, k_sm, lower=True)
    v2 = sla.solve_triangular(model._chol_b, v1, lower=True)
    var = model.kernel.diag(xs) - np.sum(v1**2, axis=0) + np.sum(v2**2, axis=0)
    return Posterior(mean=mean, variance=np.maximum(var, 0.0))


def predict_mean(model: SgpModel, xs):
    """Mean-only fast path (O(M) per point); used by rollout loops."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    k_sm = model.kernel(model.z, xs)
    return model.y_mean + k_sm.T @ model._mean_w


def predictive_distance(model: SgpModel, xs):
    """Informativeness score: the Nystrom gap at ``xs`` plus observation noise,
    sigma_s^2(x) = k(x,x) - k(x,Z) Kzz^-1 k(Z,x) + noise."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    k_sm = model.kernel(model.z, xs)
    v1 = sla.solve_triangular(model._chol_mm, k_sm, lower=True)
    return model.kernel.diag(xs) - np.sum(v1**2, axis=0) + model.noise_variance


# -- serialization -------------------------------------------------------------


def serialize_sgp(model: SgpModel) -> str:
    """Structured text snapshot: hyperparameters, inducing inputs, data."""
    out = io.StringIO()
    out.write("sgp-snapshot v1\n")
    out.write(f"lengthscale {float(model.kernel.lengthscale)!r}\n")
    out.write(f"signal_variance {float(model.kernel.signal_variance)!r}\n")
    out.write(f"noise_variance {float(model.noise_variance)!r}\n")
    out.write(f"elbo {float(model.elbo)!r}\n")
    out.write("z " + " ".join(repr(float(v)) for v in model.z) + "\n")
    out.write("x " + " ".join(repr(float(v)) for v in model.x) + "\n")
    out.write("y " + " ".join(repr(float(v)) for v in model.y) + "\n")
    return out.getvalue()


def deserialize_sgp(text: str) -> SgpModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "sgp-snapshot v1":
        raise ValueError("not an sgp snapshot")
    fields = {}
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        fields[key] = rest
    scalars = {k: float(fields[k]) for k in ("lengthscale", "signal_variance", "noise_variance")}
    z = np.array([float(v) for v in fields["z"].split()])
    x = np.array([float(v) for v in fields["x"].split()])
    y = np.array([float(v) for v in fields["y"].split()])
    kernel = RbfKernel(scalars["lengthscale"], scalars["signal_variance"])
    return make_sgp(x, y, z, kernel, scalars["noise_variance"])
