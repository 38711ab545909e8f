"""Independent reference implementations shared by several test files."""

import itertools

import numpy as np


def dense_hbar(ch, cfg, cb, f_idx, s_idx, w_idx):
    """Equivalent channel from dense matrices, no structure exploited."""
    W_R = np.zeros((cfg.Ns, cfg.Nr), dtype=complex)
    for n, w in enumerate(w_idx):
        W_R[n, n * cfg.NB:(n + 1) * cfg.NB] = cb.W[w]
    Phi = np.diag(cfg.reflect_amplitude * np.concatenate([cb.S[s] for s in s_idx]))
    return np.stack([W_R @ ch.H_r @ Phi @ ch.H_k[k] @ cb.F[f] for k, f in enumerate(f_idx)], axis=1)


def direct_rate(hbar, snr_scale):
    g = hbar.conj().T @ hbar
    if np.linalg.cond(g) > 1e12:
        return -np.inf
    inv = np.real(np.diag(np.linalg.inv(g)))
    return float(np.sum(np.log2(1 + snr_scale / inv)))


def nested_loop_search(ch, cfg, cb):
    """Plain Cartesian sweep in lexicographic order; strict improvement only."""
    n_f, n_s, n_w = cb.sizes
    best, arg = -np.inf, None
    for f_idx in itertools.product(range(n_f), repeat=cfg.K):
        for s_idx in itertools.product(range(n_s), repeat=cfg.Ms):
            for w_idx in itertools.product(range(n_w), repeat=cfg.Ns):
                r = direct_rate(dense_hbar(ch, cfg, cb, f_idx, s_idx, w_idx), cfg.snr_scale)
                if r > best:
                    best, arg = r, f_idx + s_idx + w_idx
    return arg, best


# -- blockwise model ------------------------------------------------------------

def loop_objective(prob, G, Q):
    """Objective by explicit element loops (real or complex)."""
    V, r = prob.X.shape
    n, q = prob.F_S.shape
    total = 0.0
    for u, (Qu, Fu, Yu) in enumerate(zip(Q, prob.F, prob.Y)):
        d, p = Fu.shape
        for v in range(V):
            for j in range(p):
                acc = 0j
                for a in range(r):
                    for b in range(n):
                        for c in range(q):
                            for e in range(d):
                                acc += prob.X[v, a] * G[a, b] * prob.F_S[b, c] * Qu[c, e] * Fu[e, j]
                total += abs(acc - Yu[v, j]) ** 2
    reg = prob.rho1 * np.sum(np.abs(G) ** 2) + prob.rho2 * sum(np.sum(np.abs(x) ** 2) for x in Q)
    return 0.5 * (total + reg)


def five_point_gradient(f, G, Q, h=1e-3):
    """Central 5-point differences; exact (up to rounding) for quartic polynomials."""
    params = [G] + list(Q)
    grads = []
    for arr in params:
        g = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            vals = []
            for step in (-2, -1, 1, 2):
                flat[i] = old + step * h
                vals.append(f(G, Q))
            flat[i] = old
            g.reshape(-1)[i] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        grads.append(g)
    return grads


def _vec(a):
    return a.reshape(-1, order="F")


def kron_objective_and_grad(theta, prob):
    """Joint objective and gradient over ``vec(G), vec(Q_1), ...`` in Kronecker form (real)."""
    X, F_S = prob.X, prob.F_S
    r, n = X.shape[1], F_S.shape[0]
    q = F_S.shape[1]
    G = theta[:r * n].reshape((r, n), order="F")
    pos, Qs = r * n, []
    for Fu in prob.F:
        size = q * Fu.shape[0]
        Qs.append(theta[pos:pos + size].reshape((q, Fu.shape[0]), order="F"))
        pos += size
    f = 0.5 * (prob.rho1 * theta[:r * n] @ theta[:r * n])
    gG = prob.rho1 * theta[:r * n]
    gQ = []
    XGF = X @ G @ F_S
    for Qu, Fu, Yu in zip(Qs, prob.F, prob.Y):
        P = F_S @ Qu @ Fu
        A_G = np.kron(P.T, X)
        A_Q = np.kron(Fu.T, XGF)
        res = A_G @ _vec(G) - _vec(Yu)
        f += 0.5 * (res @ res + prob.rho2 * _vec(Qu) @ _vec(Qu))
        gG = gG + A_G.T @ res
        gQ.append(A_Q.T @ res + prob.rho2 * _vec(Qu))
    return f, np.concatenate([gG] + gQ)


def lbfgs_oracle(prob, G0, Q0):
    from scipy.optimize import minimize

    theta0 = np.concatenate([_vec(G0)] + [_vec(q) for q in Q0])
    res = minimize(kron_objective_and_grad, theta0, args=(prob,), jac=True, method="L-BFGS-B",
                   options=dict(maxiter=100000, maxcor=30, ftol=1e-16, gtol=1e-10))
    return float(res.fun)
