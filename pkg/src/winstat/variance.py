"""Influence rows and sandwich variance for the win/loss probability estimators.

Each subject carries a 2-vector (win, loss coordinate)
``psi = xi + rG + rE``: the Hoeffding projection of the two-sample
U-statistic, the correction for the estimated censoring survival, and (m-IPCW
only) the correction for the estimated margins and copula parameter in the
conditional tie ratios. Conditional expectations over the opposite arm are
replaced by averages over all observed pairs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .copula import copula_cdf, copula_density, copula_dtheta, copula_du, copula_dv, copula_dvv
from .estimation import split_arms, summarize


class UnsupportedVarianceError(NotImplementedError):
    pass


@dataclass
class InfluenceRows:
    xi_t: np.ndarray  # (n1, 2)
    xi_c: np.ndarray  # (n0, 2)
    rG_t: np.ndarray
    rG_c: np.ndarray
    rE_t: np.ndarray
    rE_c: np.ndarray

    @property
    def psi_t(self):
        return self.xi_t + self.rG_t + self.rE_t

    @property
    def psi_c(self):
        return self.xi_c + self.rG_c + self.rE_c

    @property
    def n1(self):
        return self.xi_t.shape[0]

    @property
    def n0(self):
        return self.xi_c.shape[0]


def hoeffding_rows(components):
    """Opposite-arm averages of the pair kernel vector, centred at the estimate."""
    k = components.kernels
    W = np.sum(k.win, axis=0)
    L = np.sum(k.loss, axis=0)
    pi = np.array([components.pi_t, components.pi_c])
    xi_t = np.column_stack([W.mean(axis=1), L.mean(axis=1)]) - pi
    xi_c = np.column_stack([W.mean(axis=0), L.mean(axis=0)]) - pi
    return xi_t, xi_c


def _g_floor(model, t, Z, eps):
    return np.maximum(model.survival(t, Z), eps)


def censoring_correction_rows(records, components, bundle):
    """Rows for the estimated censoring survival of each arm.

    Every weighted kernel ``K / (G_1(t | z_i) G_0(t | z_j))`` is perturbed through
    ``G_a``; the per-subject terms come from the fitted model's influence
    functional evaluated at the kernel's weight time and covariates.
    """
    trt, ctl = split_arms(records)
    out = {1: np.zeros((trt.n, 2)), 0: np.zeros((ctl.n, 2))}
    if components.method == "raw":
        return out[1], out[0]
    k = components.kernels
    n_pairs = trt.n * ctl.n
    for arm, data in ((1, trt), (0, ctl)):
        model = bundle.censoring[arm]
        for col, mats, times in ((0, k.win, k.t_win), (1, k.loss, k.t_loss)):
            ts, zs, cs = [], [], []
            for K, T in zip(mats, times):
                T = np.broadcast_to(T, K.shape)
                ii, jj = np.nonzero(K)
                if ii.size == 0:
                    continue
                z = data.Z[ii] if arm == 1 else data.Z[jj]
                t = T[ii, jj]
                g = _g_floor(model, t, z, bundle.eps)
                ts.append(t)
                zs.append(z)
                cs.append(-K[ii, jj] / (g * n_pairs))
            if ts:
                out[arm][:, col] = model.influence_functional(np.concatenate(ts), np.vstack(zs), np.concatenate(cs))
    return out[1], out[0]


class _Points:
    """Accumulates (t, z, coefficient) triples for one model's influence functional."""

    def __init__(self):
        self.t, self.z, self.c = [], [], []

    def add(self, t, z, c):
        self.t.append(np.asarray(t, dtype=float))
        self.z.append(np.asarray(z, dtype=float))
        self.c.append(np.asarray(c, dtype=float))

    def evaluate(self, model, n):
        if not self.t:
            return np.zeros(n)
        return model.influence_functional(np.concatenate(self.t), np.vstack(self.z), np.concatenate(self.c))


def _log_ratio_gradients(spec, a_tau, a_u, b, kind):
    """Derivatives of ``log R`` in S_1(tau), S_1(u), S_q(t) and theta.

    ``kind='gt'`` for ``C(.,b)`` ratios, ``'eq'`` for ``C_2(.,b)`` ratios.
    """
    if kind == "gt":
        num, den = copula_cdf(spec, a_tau, b), copula_cdf(spec, a_u, b)
        d1_tau, d1_u = copula_du(spec, a_tau, b) / num, copula_du(spec, a_u, b) / den
        d2 = copula_dv(spec, a_tau, b) / num - copula_dv(spec, a_u, b) / den
        dth = copula_dtheta(spec, a_tau, b, "cdf") / num - copula_dtheta(spec, a_u, b, "cdf") / den
    else:
        num, den = copula_dv(spec, a_tau, b), copula_dv(spec, a_u, b)
        d1_tau, d1_u = copula_density(spec, a_tau, b) / num, copula_density(spec, a_u, b) / den
        d2 = copula_dvv(spec, a_tau, b) / num - copula_dvv(spec, a_u, b) / den
        dth = copula_dtheta(spec, a_tau, b, "dv") / num - copula_dtheta(spec, a_u, b, "dv") / den
    return d1_tau, -d1_u, d2, dth


def event_correction_rows(records, components, bundle):
    """Rows for the estimated margins and copula parameter (m-IPCW, two components)."""
    trt, ctl = split_arms(records)
    zeros = (np.zeros((trt.n, 2)), np.zeros((ctl.n, 2)))
    if components.method != "m-ipcw":
        return zeros
    Q = trt.Y.shape[1]
    if Q == 1:
        return zeros
    if Q > 2:
        raise UnsupportedVarianceError("event-model variance correction is implemented for two components only")
    k = components.kernels
    tau = components.tau
    n_pairs = trt.n * ctl.n
    out = {1: np.zeros((trt.n, 2)), 0: np.zeros((ctl.n, 2))}
    data = {1: trt, 0: ctl}
    # (kernel, coordinate) -> for each arm: ratio kind and which subject's record/time apply
    jobs = (
        (k.win[1], 0, {1: ("gt", "i"), 0: ("eq", "j")}, "j"),
        (k.loss[1], 1, {1: ("eq", "i"), 0: ("gt", "j")}, "i"),
    )
    for arm in (1, 0):
        d = data[arm]
        m1, m2 = bundle.margins[arm]
        spec = bundle.copula[arm]
        fit = (bundle.copula_fits or {}).get(arm)
        kappa_theta = fit.influence if fit is not None else None
        if spec.family != "independence" and kappa_theta is None:
            warnings.warn("copula information unavailable; copula-parameter term dropped", RuntimeWarning,
                          stacklevel=2)
        for K, col, roles, time_from in jobs:
            kind, who = roles[arm]
            ii, jj = np.nonzero(K)
            own = ii if who == "i" else jj
            u = d.U[own, 1]
            keep = u < tau
            if not np.any(keep):
                continue
            ii, jj, own, u = ii[keep], jj[keep], own[keep], u[keep]
            t = ctl.Y[jj, 1] if time_from == "j" else trt.Y[ii, 1]
            z = d.Z[own]
            w = K[ii, jj] / n_pairs
            a_tau = bundle.S(arm, 1, np.full(u.shape, tau), z)
            a_u = bundle.S(arm, 1, u, z)
            b = bundle.S(arm, 2, t, z)
            g_tau, g_u, g_b, g_th = _log_ratio_gradients(spec, a_tau, a_u, b, kind)
            p1, p2 = _Points(), _Points()
            p1.add(np.full(u.shape, tau), z, w * g_tau)
            p1.add(u, z, w * g_u)
            p2.add(t, z, w * g_b)
            row = p1.evaluate(m1, d.n) + p2.evaluate(m2, d.n)
            if kappa_theta is not None:
                row = row + np.sum(w * g_th) * kappa_theta
            out[arm][:, col] += row
    return out[1], out[0]


def influence_rows(records, components, bundle):
    xi_t, xi_c = hoeffding_rows(components)
    rg_t, rg_c = censoring_correction_rows(records, components, bundle)
    re_t, re_c = event_correction_rows(records, components, bundle)
    return InfluenceRows(xi_t, xi_c, rg_t, rg_c, re_t, re_c)


@dataclass
class SandwichResult:
    omega: np.ndarray
    n: int
    pi_t: float
    pi_c: float

    def _se(self, g):
        g = np.asarray(g, dtype=float)
        return float(np.sqrt(max(g @ self.omega @ g, 0.0) / self.n))

    @property
    def se_nb(self):
        return self._se([1.0, -1.0])

    @property
    def se_logwr(self):
        return self._se([1.0 / self.pi_t, -1.0 / self.pi_c])

    @property
    def se_logwo(self):
        nb = self.pi_t - self.pi_c
        return self._se(2.0 / (1.0 - nb * nb) * np.array([1.0, -1.0]))


def sandwich(rows, components=None):
    """``Omega = (n/n1^2) sum psi psi' (treated) + (n/n0^2) sum psi psi' (control)``.

    ``components`` supplies the win/loss probabilities for the log-scale SEs.
    """
    pi_t = components.pi_t if components is not None else np.nan
    pi_c = components.pi_c if components is not None else np.nan
    n1, n0 = rows.n1, rows.n0
    n = n1 + n0
    pt, pc = rows.psi_t, rows.psi_c
    omega = (n / n1 ** 2) * pt.T @ pt + (n / n0 ** 2) * pc.T @ pc
    omega = 0.5 * (omega + omega.T)
    return SandwichResult(omega, n, pi_t, pi_c)


def delta_ci(components, result, conf_level=0.95):
    """Wald intervals: NB on its own scale, WR and WO on the log scale."""
    if not 0 < conf_level < 1:
        raise ValueError("conf_level must lie in (0, 1)")
    res = SandwichResult(result.omega, result.n, components.pi_t, components.pi_c)
    nb, wr, wo = summarize(components)
    zq = stats.norm.ppf(0.5 + conf_level / 2)
    return {
        "nb": (nb - zq * res.se_nb, nb + zq * res.se_nb),
        "wr": (wr * np.exp(-zq * res.se_logwr), wr * np.exp(zq * res.se_logwr)),
        "wo": (wo * np.exp(-zq * res.se_logwo), wo * np.exp(zq * res.se_logwo)),
    }
