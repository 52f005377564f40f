"""Slow, loop-based reference implementations used only by the tests.

They share no code with the package beyond the MDP containers: transport is
solved with scipy's HiGHS LP and entangled couplings by an explicit sweep
over the uniform's breakpoints.
"""

import numpy as np
from scipy.optimize import linprog


def lp_w1(p, q, cost):
    m, n = len(p), len(q)
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A_eq[m + j, j::n] = 1
    res = linprog(np.ravel(cost), A_eq=A_eq, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    return float(res.fun)


def comonotone(p, q):
    """List of (i, j, mass) for the shared-uniform coupling, ascending atoms."""
    out = []
    i = j = 0
    rem_p, rem_q = float(p[0]), float(q[0])
    n = len(p)
    while True:
        while rem_p <= 1e-15 and i < n - 1:
            i += 1
            rem_p = float(p[i])
        while rem_q <= 1e-15 and j < n - 1:
            j += 1
            rem_q = float(q[j])
        m = min(rem_p, rem_q)
        if m <= 1e-15:
            break
        out.append((i, j, m))
        rem_p -= m
        rem_q -= m
    return out


def F_pi(mdp, policy, d, c):
    S = mdp.n_states
    pi = policy.probs
    r = [sum(pi[s, a] * mdp.reward[s, a] for a in range(mdp.n_actions)) for s in range(S)]
    P = [pi[s] @ mdp.transition[s] for s in range(S)]
    out = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            out[i, j] = abs(r[i] - r[j]) + c * lp_w1(P[i], P[j], d)
    return out


def F_eps(mdp, policy, G, d, c, inner="w1"):
    S = mdp.n_states
    P = mdp.transition
    out = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            total = 0.0
            for a, b, w in comonotone(policy.probs[i], policy.probs[j]):
                if inner == "w1":
                    t = lp_w1(P[i, a], P[j, b], d)
                else:
                    t = sum(m * d[x, y] for x, y, m in comonotone(P[i, a], P[j, b]))
                total += w * (G[i, a, j, b] + c * t)
            out[i, j] = total
    return out


def F_dbc(mdp, policy, d, c):
    S, A = mdp.n_states, mdp.n_actions
    pi, P, R = policy.probs, mdp.transition, mdp.reward
    out = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            out[i, j] = sum(pi[i, a] * pi[j, b] * (abs(R[i, a] - R[j, b]) + c * lp_w1(P[i, a], P[j, b], d))
                            for a in range(A) for b in range(A))
    return out


def F_psm(mdp, policy, d, c):
    S = mdp.n_states
    pi = policy.probs
    P = [pi[s] @ mdp.transition[s] for s in range(S)]
    out = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            out[i, j] = np.abs(pi[i] - pi[j]).sum() + c * P[i] @ d @ P[j]
    return out


def iterate(F, S, n_iter=400):
    d = np.zeros((S, S))
    for _ in range(n_iter):
        d = F(d)
    return d
