"""Compiled inner loops for the long C-RL runs.

Each kernel mirrors a pure-numpy reference step (``flow.crl_flow_step`` and
``sgda.sgda_step``); the test suite checks them against each other.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def project_simplex_into(y, total, out):
    """Michelot's active-set iteration: exact, no sort, finite termination."""
    n = y.shape[0]
    s = 0.0
    for i in range(n):
        s += y[i]
    theta = (s - total) / n
    while True:
        s = 0.0
        count = 0
        for i in range(n):
            if y[i] > theta:
                s += y[i]
                count += 1
        t = (s - total) / count
        if t <= theta:
            break
        theta = t
    s = 0.0
    for i in range(n):
        d = y[i] - theta
        out[i] = d if d > 0.0 else 0.0
        s += out[i]
    if s > 0.0:
        scale = total / s
        for i in range(n):
            out[i] *= scale


@numba.njit(cache=True, nogil=True)
def project_l1_ball_into(y, radius, out, scratch):
    total = 0.0
    for i in range(y.shape[0]):
        scratch[i] = y[i] if y[i] > 0.0 else 0.0
        total += scratch[i]
    if total <= radius:
        for i in range(y.shape[0]):
            out[i] = scratch[i]
    else:
        project_simplex_into(scratch, radius, out)


@numba.njit(cache=True, nogil=True)
def _clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@numba.njit(cache=True, nogil=True)
def crl_flow_run(F, G, r, h, qq, lam, lam_hat, mu, mu_hat, v, v_hat,
                 rho, delta, mu_radius, v_lo, v_hi, max_steps, tol, record_every,
                 rec_step, rec_drift, rec_lam, rec_lam_hat, rec_mu, rec_mu_hat,
                 rec_v, rec_v_hat):
    """Projected forward Euler for the C-RL saddle flow; state arrays are updated in place.

    Returns (steps taken, records written, converged flag).
    """
    S, n = F.shape
    I = G.shape[0]
    inv_rho = 1.0 / rho
    y = np.empty(n)
    new_lam = np.empty(n)
    new_lam_hat = np.empty(n)
    y_mu = np.empty(I)
    new_mu = np.empty(I)
    new_mu_hat = np.empty(I)
    scratch = np.empty(I)
    new_v = np.empty(S)
    new_v_hat = np.empty(S)
    flow = np.empty(S)
    cons = np.empty(I)
    n_rec = 0
    converged = False
    k = 0
    while True:
        for s in range(S):
            flow[s] = 0.0
        for m in range(I):
            cons[m] = 0.0
        for i in range(n):
            x = lam[i]
            for s in range(S):
                flow[s] += F[s, i] * x
            for m in range(I):
                cons[m] += G[m, i] * x
        for i in range(n):
            c = r[i]
            for s in range(S):
                c -= F[s, i] * v[s]
            for m in range(I):
                c += G[m, i] * mu[m]
            y[i] = lam[i] + delta * (c - inv_rho * (lam[i] - lam_hat[i]))
        project_simplex_into(y, 1.0, new_lam)
        for i in range(n):
            y[i] = lam_hat[i] + delta * inv_rho * (lam[i] - lam_hat[i])
        project_simplex_into(y, 1.0, new_lam_hat)
        for m in range(I):
            y_mu[m] = mu[m] + delta * (h[m] - cons[m] - inv_rho * (mu[m] - mu_hat[m]))
        project_l1_ball_into(y_mu, mu_radius, new_mu, scratch)
        for m in range(I):
            y_mu[m] = mu_hat[m] + delta * inv_rho * (mu[m] - mu_hat[m])
        project_l1_ball_into(y_mu, mu_radius, new_mu_hat, scratch)
        for s in range(S):
            new_v[s] = _clamp(v[s] + delta * (flow[s] - qq[s] - inv_rho * (v[s] - v_hat[s])),
                              v_lo[s], v_hi[s])
            new_v_hat[s] = _clamp(v_hat[s] + delta * inv_rho * (v[s] - v_hat[s]),
                                  v_lo[s], v_hi[s])

        move = 0.0
        for i in range(n):
            move = max(move, abs(new_lam[i] - lam[i]), abs(new_lam_hat[i] - lam_hat[i]))
        for m in range(I):
            move = max(move, abs(new_mu[m] - mu[m]), abs(new_mu_hat[m] - mu_hat[m]))
        for s in range(S):
            move = max(move, abs(new_v[s] - v[s]), abs(new_v_hat[s] - v_hat[s]))
        drift = move / delta
        converged = drift < tol
        if k % record_every == 0 or k == max_steps or converged:
            rec_step[n_rec] = k
            rec_drift[n_rec] = drift
            rec_lam[n_rec] = lam
            rec_lam_hat[n_rec] = lam_hat
            rec_mu[n_rec] = mu
            rec_mu_hat[n_rec] = mu_hat
            rec_v[n_rec] = v
            rec_v_hat[n_rec] = v_hat
            n_rec += 1
        if converged or k == max_steps:
            break
        lam[:] = new_lam
        lam_hat[:] = new_lam_hat
        mu[:] = new_mu
        mu_hat[:] = new_mu_hat
        v[:] = new_v
        v_hat[:] = new_v_hat
        k += 1
    return k, n_rec, converged


@numba.njit(cache=True, nogil=True)
def sgda_run(s0, pairs, s_next, r, G, h, gamma, xi, lam, lam_hat, mu, mu_hat, v, v_hat,
             rho, a0, n0, kappa, n_start, mu_radius, v_lo, v_hi, literal_hat,
             stride, rec_step, rec_lam, rec_lam_hat, rec_mu, rec_mu_hat, rec_v, rec_v_hat,
             check_sets):
    """Projected SGDA over a pre-drawn block of samples; state updated in place.

    Sample k uses initial state s0[k], pair index pairs[k] (action-major) and
    next state s_next[k]. Returns (records written, set-membership failures).
    """
    n = lam.shape[0]
    S = v.shape[0]
    I = mu.shape[0]
    inv_rho = 1.0 / rho
    y = np.empty(n)
    new_lam = np.empty(n)
    y_mu = np.empty(I)
    new_mu = np.empty(I)
    new_mu_hat = np.empty(I)
    scratch = np.empty(I)
    new_v = np.empty(S)
    new_v_hat = np.empty(S)
    n_rec = 0
    failures = 0
    for k in range(s0.shape[0]):
        it = n_start + k
        alpha = a0 / (n0 + it) ** kappa
        j = pairs[k]
        s = j % S
        sp = s_next[k]
        if xi[j] > 0.0:
            w = lam[j] / xi[j]
            td = r[j] - v[s] + gamma * v[sp]
            for m in range(I):
                td += mu[m] * G[m, j]
            td /= xi[j]
        else:
            w = 0.0
            td = 0.0

        for i in range(n):
            y[i] = lam[i] - alpha * inv_rho * (lam[i] - lam_hat[i])
        y[j] += alpha * td
        project_simplex_into(y, 1.0, new_lam)
        hat_step = inv_rho if literal_hat else alpha * inv_rho
        for i in range(n):
            y[i] = lam_hat[i] + hat_step * (lam[i] - lam_hat[i])

        for m in range(I):
            y_mu[m] = mu[m] + alpha * (h[m] - w * G[m, j] - inv_rho * (mu[m] - mu_hat[m]))
        project_l1_ball_into(y_mu, mu_radius, new_mu, scratch)
        for m in range(I):
            y_mu[m] = mu_hat[m] + alpha * inv_rho * (mu[m] - mu_hat[m])
        project_l1_ball_into(y_mu, mu_radius, new_mu_hat, scratch)

        for t in range(S):
            dv = -inv_rho * (v[t] - v_hat[t])
            if t == s:
                dv += w
            if t == sp:
                dv -= gamma * w
            if t == s0[k]:
                dv -= 1.0 - gamma
            new_v[t] = _clamp(v[t] + alpha * dv, v_lo[t], v_hi[t])
            new_v_hat[t] = _clamp(v_hat[t] + alpha * inv_rho * (v[t] - v_hat[t]),
                                  v_lo[t], v_hi[t])

        lam[:] = new_lam
        project_simplex_into(y, 1.0, lam_hat)
        mu[:] = new_mu
        mu_hat[:] = new_mu_hat
        v[:] = new_v
        v_hat[:] = new_v_hat

        if check_sets:
            for x in (lam, lam_hat):
                total = 0.0
                for i in range(n):
                    if x[i] < 0.0:
                        failures += 1
                    total += x[i]
                if abs(total - 1.0) > 1e-12:
                    failures += 1
            for x in (mu, mu_hat):
                total = 0.0
                for m in range(I):
                    if x[m] < 0.0:
                        failures += 1
                    total += x[m]
                if total > mu_radius * (1.0 + 1e-12):
                    failures += 1
            for x in (v, v_hat):
                for t in range(S):
                    if x[t] < v_lo[t] or x[t] > v_hi[t]:
                        failures += 1

        if (it + 1) % stride == 0:
            rec_step[n_rec] = it + 1
            rec_lam[n_rec] = lam
            rec_lam_hat[n_rec] = lam_hat
            rec_mu[n_rec] = mu
            rec_mu_hat[n_rec] = mu_hat
            rec_v[n_rec] = v
            rec_v_hat[n_rec] = v_hat
            n_rec += 1
    return n_rec, failures
