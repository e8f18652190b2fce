"""Independent reference implementations used by the tests.

Loop-based and deliberately naive: no code is shared with the package beyond
the models passed in as plain callables.
"""

import math

import numpy as np


# --------------------------------------------------------------- Cox / Breslow

def cox_loglik(beta, time, event, Z, weights=None):
    """Breslow log partial likelihood with optional subject weights."""
    n = len(time)
    w = np.ones(n) if weights is None else weights
    ll = 0.0
    for i in range(n):
        if not event[i]:
            continue
        risk = sum(w[k] * math.exp(float(Z[k] @ beta)) for k in range(n) if time[k] >= time[i])
        ll += w[i] * (float(Z[i] @ beta) - math.log(risk))
    return ll


def cox_score_info(beta, time, event, Z, weights=None):
    n, p = Z.shape
    w = np.ones(n) if weights is None else weights
    score = np.zeros(p)
    info = np.zeros((p, p))
    for i in range(n):
        if not event[i]:
            continue
        s0, s1, s2 = 0.0, np.zeros(p), np.zeros((p, p))
        for k in range(n):
            if time[k] >= time[i]:
                r = w[k] * math.exp(float(Z[k] @ beta))
                s0 += r
                s1 += r * Z[k]
                s2 += r * np.outer(Z[k], Z[k])
        score += w[i] * (Z[i] - s1 / s0)
        info += w[i] * (s2 / s0 - np.outer(s1, s1) / s0 ** 2)
    return score, info


def cox_newton(time, event, Z, weights=None, tol=1e-13, max_iter=100):
    """Plain Newton on the partial likelihood, no centring or line search."""
    Z = np.asarray(Z, dtype=float).reshape(len(time), -1)
    beta = np.zeros(Z.shape[1])
    for _ in range(max_iter):
        score, info = cox_score_info(beta, time, event, Z, weights)
        step = np.linalg.solve(info, score)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def breslow(time, event, Z, beta, weights=None):
    """Jump times and cumulative baseline hazard at z = 0."""
    Z = np.asarray(Z, dtype=float).reshape(len(time), -1)
    n = len(time)
    w = np.ones(n) if weights is None else weights
    jumps = sorted({time[i] for i in range(n) if event[i]})
    cum, out = 0.0, []
    for t in jumps:
        d = sum(w[i] for i in range(n) if event[i] and time[i] == t)
        risk = sum(w[k] * math.exp(float(Z[k] @ beta)) for k in range(n) if time[k] >= t)
        cum += d / risk
        out.append(cum)
    return np.array(jumps), np.array(out)


class WeightedCox:
    """Survival curve from a weighted Cox fit, for weight-perturbation oracles."""

    def __init__(self, time, event, Z, weights=None):
        self.beta = cox_newton(time, event, Z, weights)
        self.jumps, self.cum = breslow(time, event, Z, self.beta, weights)

    def survival(self, t, Z):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jumps, t, side="right") - 1
        lam = np.where(idx >= 0, self.cum[np.clip(idx, 0, None)], 0.0)
        return np.exp(-lam * np.exp(np.asarray(Z, dtype=float) @ self.beta))


# ----------------------------------------------------------------- Kaplan-Meier

class WeightedKM:
    def __init__(self, time, event, weights=None):
        n = len(time)
        w = np.ones(n) if weights is None else weights
        self.jumps = sorted({time[i] for i in range(n) if event[i]})
        s, vals = 1.0, []
        for t in self.jumps:
            d = sum(w[i] for i in range(n) if event[i] and time[i] == t)
            r = sum(w[i] for i in range(n) if time[i] >= t)
            s *= 1.0 - d / r
            vals.append(s)
        self.vals = np.array(vals)
        self.jumps = np.array(self.jumps)

    def survival(self, t, Z=None):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jumps, t, side="right") - 1
        return np.where(idx >= 0, self.vals[np.clip(idx, 0, None)] if len(self.vals) else 1.0, 1.0)


# --------------------------------------------------------------- pair kernels

def enumerate_pairs(trt, ctl, tau, G1, G0, ratio_gt=None, ratio_eq=None, method="ipcw"):
    """Win/loss probabilities by explicit enumeration over treated x control pairs.

    ``trt``/``ctl`` are lists of restricted records; ``G1``/``G0`` map (t, z) to a
    censoring survival; ``ratio_gt``/``ratio_eq`` map (arm, u, t, z) to the
    conditional tie ratios (m-IPCW only).
    """
    if method == "raw":
        G1 = G0 = lambda t, z: 1.0  # noqa: E731
        method = "ipcw"
    Q = trt[0].n_components
    win = np.zeros(Q)
    loss = np.zeros(Q)
    for i in trt:
        for j in ctl:
            zi, zj = np.array(i.covariates), np.array(j.covariates)
            for q in range(Q):
                yi, yj = i.y_tilde[q], j.y_tilde[q]
                if q == 0:
                    if yi > yj and j.delta[q]:
                        win[q] += 1.0 / (G1(yj, zi) * G0(yj, zj))
                    if yj > yi and i.delta[q]:
                        loss[q] += 1.0 / (G1(yi, zi) * G0(yi, zj))
                    continue
                if method == "ipcw":
                    gate = all(i.y_tilde[k] == tau and j.y_tilde[k] == tau and not i.delta[k] and not j.delta[k]
                               for k in range(q))
                    if not gate:
                        continue
                    den = G1(tau, zi) * G0(tau, zj)
                    if yi > yj and j.delta[q]:
                        win[q] += 1.0 / den
                    if yj > yi and i.delta[q]:
                        loss[q] += 1.0 / den
                else:
                    if not (i.bar_delta[q] and j.bar_delta[q]):
                        continue
                    ui, uj = i.gate_u[q], j.gate_u[q]
                    if yi > yj and j.delta[q]:
                        win[q] += (ratio_gt(1, ui, yj, zi) * ratio_eq(0, uj, yj, zj)
                                   / (G1(yj, zi) * G0(yj, zj)))
                    if yj > yi and i.delta[q]:
                        loss[q] += (ratio_gt(0, uj, yi, zj) * ratio_eq(1, ui, yi, zi)
                                    / (G1(yi, zi) * G0(yi, zj)))
    n_pairs = len(trt) * len(ctl)
    return win / n_pairs, loss / n_pairs


def numeric_partial(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)
