"""Reference computations written independently of the package internals."""

import itertools

import numpy as np


def dense_adjacency(n, edges, alpha):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i - 1, j - 1] = a[j - 1, i - 1] = alpha
    return a


def network_recursion(n, edges, alpha, labels, x, seeds, h, rounds, sweeps):
    """Whole-network matrix form of the estimator for constant states and fixed labels.

    labels: (N,) 1-based clusters, all non-empty. x: (N, d). seeds: (N, M, d).
    Returns estimates of shape (rounds + 1, N, M, d).
    """
    a = dense_adjacency(n, edges, alpha)
    L = np.diag(a.sum(1)) - a
    adj = (a > 0).astype(float)
    W = adj / adj.sum(1, keepdims=True)  # mean over neighbours
    M = seeds.shape[1]
    e = seeds.copy()
    r = np.zeros_like(e)
    out = [e.copy()]
    for t in range(1, rounds + 1):
        new = np.empty_like(e)
        new_r = np.empty_like(e)
        for j in range(M):
            member = (labels == j + 1)[:, None]
            C = -(L @ e[:, j])
            inj = (x - seeds[:, j]) / h if t == 1 else np.zeros_like(x)
            p = np.where(member, inj + C, W @ r[:, j] + C)
            for _ in range(sweeps - 1):
                p = np.where(member, p, W @ p + C)
            new[:, j] = e[:, j] + h * p
            new_r[:, j] = p
        e, r = new, new_r
        out.append(e.copy())
    return np.array(out)


def two_node_closed_form(x1, x2, seed, h, alpha, t):
    """Estimates of a 2-agent, 1-cluster system with shared seed, round t >= 0."""
    if t == 0:
        return np.array([seed, seed], dtype=float)
    m = (x1 + x2) / 2
    q = (1 - 2 * h * alpha) ** (t - 1)
    return np.array([m + (x1 - m) * q, m + (x2 - m) * q])


def brute_argmin(x, estimates):
    best, best_d = None, None
    for j, est in enumerate(estimates):
        d = sum((a - b) ** 2 for a, b in zip(x, est)) ** 0.5
        if best_d is None or d < best_d:
            best, best_d = j + 1, d
    return best


def member_means(labels, values, M):
    out = []
    for j in range(1, M + 1):
        rows = [v for lab, v in zip(labels, values) if lab == j]
        out.append(np.mean(rows, axis=0) if rows else None)
    return out


def brute_force_ves(offers, required, max_price):
    """Smallest price-downward-closed subset of eligible offers covering ``required``.

    offers: list of (cluster, price, avg_capacity, members).
    """
    eligible = [o for o in offers if o[3] > 0 and o[1] <= max_price]
    rank = {o[0]: r for r, o in enumerate(sorted(eligible, key=lambda o: (o[1], o[0])))}
    best = None
    for size in range(len(eligible) + 1):
        for combo in itertools.combinations(eligible, size):
            if sorted(rank[o[0]] for o in combo) != list(range(size)):
                continue
            if sum(o[2] * o[3] for o in combo) < required:
                continue
            if best is None or size < len(best):
                best = combo
    return () if best is None else tuple(sorted(o[0] for o in best))


def two_battery_soc(s0, seed, kp, dt, h, alpha, u, rounds):
    """Closed-form SoC pair for two member batteries sharing one cluster.

    State (s1, s2, e1, e2, 1) evolves affinely:
        s(t+1) = s(t) - dt*(u + kp*(s(t) - e(t)))
        e(t+1) = e(t) + (s(t+1) - s(t)) + h*alpha*(e_other(t) - e(t))
    with e(1) = s(1) (round 1 measures the injection from the shared seed).
    Powers of the transition matrix come from its eigendecomposition.
    """
    A = np.zeros((5, 5))
    for i in range(2):
        o = 1 - i
        A[i, i] = 1 - dt * kp
        A[i, 2 + i] = dt * kp
        A[i, 4] = -dt * u
        # e_i' = e_i + (s_i' - s_i) + h*alpha*(e_o - e_i)
        A[2 + i] = A[i]
        A[2 + i, i] -= 1
        A[2 + i, 2 + i] += 1 - h * alpha
        A[2 + i, 2 + o] += h * alpha
    A[4, 4] = 1.0
    s0 = np.asarray(s0, dtype=float)
    s1 = s0 - dt * (u + kp * (s0 - seed))
    v1 = np.array([s1[0], s1[1], s1[0], s1[1], 1.0])
    w, V = np.linalg.eig(A)
    coef = np.linalg.solve(V, v1)
    out = [s0]
    for t in range(1, rounds + 1):
        out.append(np.real(V @ (coef * w ** (t - 1)))[:2])
    return np.array(out)
