"""Reference computations that share no code with the package solver.

Everything here is written from first principles with plain numpy so it
can cross-check the GEE machinery: the chain-ladder design, an IRLS GLM
for the log link, deterministic chain-ladder development factors and a
loop-based independence sandwich / MSE.
"""
import numpy as np


def cl_design(n):
    """Observed cells (0-based, row-major) and the corner-constrained chain-ladder design."""
    cells = [(i, j) for i in range(n) for j in range(n - i)]
    X = np.zeros((len(cells), 2 * n - 1))
    for r, (i, j) in enumerate(cells):
        X[r, 0] = 1.0
        if i > 0:
            X[r, i] = 1.0
        if j > 0:
            X[r, n - 1 + j] = 1.0
    return cells, X


def future_design(n):
    cells = [(i, j) for i in range(1, n) for j in range(n - i, n)]
    X = np.zeros((len(cells), 2 * n - 1))
    for r, (i, j) in enumerate(cells):
        X[r, 0] = 1.0
        X[r, i] = 1.0
        if j > 0:
            X[r, n - 1 + j] = 1.0
    return cells, X


def irls_glm(tri, power, tol=1e-13, max_iter=100):
    """Log-link GLM with Var = phi * mu**power by iteratively reweighted least squares.

    power=1 is the over-dispersed Poisson, power=2 the gamma model.
    Returns (beta, mu, phi_pearson_N, cells, X).
    """
    n = tri.shape[0]
    cells, X = cl_design(n)
    y = np.array([tri[i, j] for i, j in cells])
    mu = np.full_like(y, y.mean())
    eta = np.log(mu)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        w = mu ** (2.0 - power)  # (dmu/deta)^2 / V(mu) for the log link
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        new = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]
        done = np.max(np.abs(new - beta)) < tol
        beta = new
        eta = X @ beta
        mu = np.exp(eta)
        if done:
            break
    phi = np.sum((y - mu) ** 2 / mu**power) / len(y)
    return beta, mu, phi, cells, X


def glm_reserves(tri, power):
    beta, *_ = irls_glm(tri, power)
    n = tri.shape[0]
    cells, Xf = future_design(n)
    mu_f = np.exp(Xf @ beta)
    out = np.zeros(n)
    for (i, _), m in zip(cells, mu_f):
        out[i] += m
    return out


def chain_ladder_reserves(tri):
    """Volume-weighted development factors on the cumulative triangle."""
    n = tri.shape[0]
    cum = np.cumsum(np.nan_to_num(tri), axis=1)
    latest = np.array([cum[i, n - 1 - i] for i in range(n)])
    factors = []
    for j in range(n - 1):
        rows = range(n - 1 - j)
        factors.append(sum(cum[i, j + 1] for i in rows) / sum(cum[i, j] for i in rows))
    ult = latest.copy()
    for i in range(n):
        for j in range(n - 1 - i, n - 1):
            ult[i] *= factors[j]
    return ult - latest


def independence_mse(tri, power):
    """Per-year MSE for the independence model: phi * sum h(mu_f) + 1' D_f Sigma D_f' 1.

    Sigma is the sandwich B^-1 S B^-1 with clusters = accident years,
    assembled row by row.
    """
    beta, mu, phi, cells, X = irls_glm(tri, power)
    n = tri.shape[0]
    y = np.array([tri[i, j] for i, j in cells])
    p = X.shape[1]
    B = np.zeros((p, p))
    scores = {}
    for r, (i, _) in enumerate(cells):
        d = mu[r] * X[r]
        v = phi * mu[r] ** power
        B += np.outer(d, d) / v
        scores[i] = scores.get(i, np.zeros(p)) + d * (y[r] - mu[r]) / v
    S = sum(np.outer(s, s) for s in scores.values())
    Binv = np.linalg.inv(B)
    sigma = Binv @ S @ Binv
    fcells, Xf = future_design(n)
    mu_f = np.exp(Xf @ beta)
    mse = np.zeros(n)
    for i in range(1, n):
        rows = [r for r, (a, _) in enumerate(fcells) if a == i]
        D = mu_f[rows, None] * Xf[rows]
        g = D.sum(axis=0)
        mse[i] = phi * np.sum(mu_f[rows] ** power) + g @ sigma @ g
    return mse


def finite_difference_jacobian(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h * max(1.0, abs(theta[k]))
        cols.append((f(theta + e) - f(theta - e)) / (2 * e[k]))
    return np.column_stack(cols)
