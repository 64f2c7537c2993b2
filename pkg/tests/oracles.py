"""Independent reference implementations used to check the fast paths.

These deliberately avoid the library's solver/selection code: brute-force
active-set enumeration for QPs, normal equations with Lagrange elimination
for the constrained quintic fit, and a literal transcription of the pruning
rules for the data-selection check.
"""

import itertools

import numpy as np

LOOSE = 1e5


def qp_bruteforce(h, g, a, l, u, loose=LOOSE):
    """Enumerate active sets, solve each KKT system, keep the feasible
    optimum with valid multiplier signs.  Bounds beyond ``loose`` are treated
    as never-binding.  Returns (x, objective)."""
    h = np.asarray(h, float)
    g = np.asarray(g, float)
    a = np.asarray(a, float)
    l = np.asarray(l, float)
    u = np.asarray(u, float)
    m, n = a.shape
    eq = (u - l) <= 1e-12 * (1.0 + np.abs(u))
    states = []
    for i in range(m):
        if eq[i]:
            states.append(("eq",))
        else:
            opts = ["free"]
            if np.isfinite(l[i]) and abs(l[i]) < loose:
                opts.append("lo")
            if np.isfinite(u[i]) and abs(u[i]) < loose:
                opts.append("up")
            states.append(tuple(opts))

    best = None
    for combo in itertools.product(*states):
        act = [i for i, c in enumerate(combo) if c != "free"]
        b = np.array([l[i] if combo[i] in ("eq", "lo") else u[i] for i in act])
        k = len(act)
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = h
        if k:
            kkt[:n, n:] = a[act].T
            kkt[n:, :n] = a[act]
        rhs = np.concatenate([-g, b])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(sol)):
            continue
        x = sol[:n]
        nu = sol[n:]
        ax = a @ x
        if np.any(ax < l - 1e-8) or np.any(ax > u + 1e-8):
            continue
        ok = True
        for j, i in enumerate(act):
            if combo[i] == "lo" and nu[j] > 1e-9:
                ok = False
                break
            if combo[i] == "up" and nu[j] < -1e-9:
                ok = False
                break
        if not ok:
            continue
        obj = 0.5 * float(x @ h @ x) + float(g @ x)
        if best is None or obj < best[1] - 1e-12:
            best = (x, obj)
    assert best is not None, "oracle found no feasible active set"
    return best


def constrained_lsq_quintic(t, values, duration):
    """Exact constrained least squares for the quintic fit: normal equations
    plus Lagrange elimination, in the normalized time basis."""
    tau = np.asarray(t, float) / duration
    v = np.asarray(values, float) - values[0]
    phi = np.vander(tau, 6, increasing=True)
    w = np.full(tau.size, 1.0 / (tau.size - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    h = 2.0 * (phi.T * w) @ phi
    g = -2.0 * (phi.T * w) @ v

    def deriv_row(tq):
        return np.concatenate([[0.0], np.vander([tq], 5, increasing=True)[0] * np.arange(1, 6)])

    c_mat = np.vstack([phi[0], deriv_row(tau[0]), phi[-1], deriv_row(tau[-1])])
    b = np.array([
        v[0],
        (v[1] - v[0]) / (tau[1] - tau[0]),
        v[-1],
        (v[-1] - v[-2]) / (tau[-1] - tau[-2]),
    ])
    kkt = np.zeros((10, 10))
    kkt[:6, :6] = h
    kkt[:6, 6:] = c_mat.T
    kkt[6:, :6] = c_mat
    sol = np.linalg.solve(kkt, np.concatenate([-g, b]))
    coeffs_tau = sol[:6]
    coeffs = coeffs_tau / duration ** np.arange(6)
    coeffs[0] += values[0]
    objective = float(np.sum(w * (phi @ coeffs_tau - v) ** 2))
    return coeffs, objective


def quintic_objective(t, values, duration, coeffs):
    """Trapezoid-weighted squared deviation of a t-basis quintic from samples."""
    tau = np.asarray(t, float) / duration
    w = np.full(tau.size, 1.0 / (tau.size - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    pred = np.polynomial.polynomial.polyval(np.asarray(t, float), coeffs)
    return float(np.sum(w * (pred - np.asarray(values, float)) ** 2))


def prune_oracle(xs, scores, centers, n_target):
    """Literal transcription of the pruning rules: nearest-centroid clusters
    (Lloyd to convergence), drop below-cluster-mean scores, then per-cluster
    quotas of floor(n_target * |C_k| / total).  Returns kept indices."""
    xs = np.asarray(xs, float)
    scores = np.asarray(scores, float)
    centers = np.asarray(centers, float).copy()
    for _ in range(50):
        labels = np.argmin(np.abs(xs[:, None] - centers[None, :]), axis=1)
        moved = 0.0
        for k in range(centers.size):
            members = xs[labels == k]
            if members.size:
                newc = members.mean()
                moved = max(moved, abs(newc - centers[k]))
                centers[k] = newc
        if moved < 1e-6:
            break
    labels = np.argmin(np.abs(xs[:, None] - centers[None, :]), axis=1)

    total = xs.size
    survivors = {}
    kept = []
    for k in range(centers.size):
        members = [i for i in range(total) if labels[i] == k]
        if not members:
            continue
        mean_k = float(np.mean(scores[members]))
        surv = [i for i in members if scores[i] >= mean_k]
        survivors[k] = (len(members), surv)
        kept.extend(surv)
    if len(kept) <= n_target:
        return sorted(kept)
    final = []
    for k, (size_k, surv) in survivors.items():
        quota = int(np.floor(n_target * size_k / total))
        ranked = sorted(surv, key=lambda i: (-scores[i], i))
        final.extend(ranked[:quota])
    return sorted(final)
