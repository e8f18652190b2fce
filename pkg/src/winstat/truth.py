"""Quadrature-grade true win probabilities under the simulation DGP.

``pi_tq = int_0^tau E_zi[S_{q,1}(tau, t | zi)] E_zj[H_{q,0}(tau, t | zj)] dt``
where ``S_{q,a}(tau, t | z)`` is the probability that the higher-priority
components are event-free through ``tau`` and component ``q`` past ``t``, and
``H_{q,a}`` is minus its derivative in ``t``. The outer expectation uses
Gauss-Legendre nodes for the uniform covariate and exact enumeration of the two
binary ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copula import archimedean_prefix_cdf, archimedean_prefix_dlast

T_ORDER = 80
Z_ORDER = 24


@dataclass(frozen=True)
class TruthResult:
    tau: float
    pi_tq: tuple
    pi_cq: tuple

    @property
    def pi_t(self):
        return float(sum(self.pi_tq))

    @property
    def pi_c(self):
        return float(sum(self.pi_cq))

    @property
    def nb(self):
        return self.pi_t - self.pi_c

    @property
    def wr(self):
        return self.pi_t / self.pi_c

    @property
    def wo(self):
        return (1.0 + self.nb) / (1.0 - self.nb)


def _gl(order, a, b):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def covariate_grid(config, order=Z_ORDER):
    """Nodes and weights integrating over (Z1, Z2, Z3)."""
    z2, w2 = _gl(order, 0.0, 1.0)
    nodes, weights = [], []
    for z1 in (0.0, 1.0):
        for z3 in (0.0, 1.0):
            p = (config.p_z1 if z1 else 1 - config.p_z1) * (config.p_z3 if z3 else 1 - config.p_z3)
            nodes.append(np.column_stack([np.full(order, z1), z2, np.full(order, z3)]))
            weights.append(p * w2)
    return np.vstack(nodes), np.concatenate(weights)


def _gumbel_prefix(config, arm, q, tau, t, z):
    """Closed-form exchangeable-Gumbel ``S_{q,a}`` and ``H_{q,a}``."""
    th = config.dgp_copula.theta if config.dgp_copula.family == "gumbel" else 1.0
    comps = [c.model(arm) for c in config.components]
    a = sum(comps[k].cumhaz(tau, z) ** th for k in range(q - 1))
    lam_q = comps[q - 1].cumhaz(t, z)
    a = a + lam_q ** th
    s = np.exp(-a ** (1.0 / th))
    hazard = comps[q - 1].density(t, z) / comps[q - 1].survival(t, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = s * lam_q ** (th - 1.0) * a ** (1.0 / th - 1.0) * hazard
    if th == 1:
        return s, s * hazard
    return s, np.where(lam_q > 0, h, 0.0)


def _copula_prefix(config, arm, q, tau, t, z):
    """Same quantities through the copula's prefix functions (any family)."""
    comps = [c.model(arm) for c in config.components]
    s_tau = [np.broadcast_to(comps[k].survival(tau, z), np.broadcast(t, z[..., 0]).shape) for k in range(q - 1)]
    s_q = comps[q - 1].survival(t, z)
    f_q = comps[q - 1].density(t, z)
    if q == 1:
        return s_q, f_q
    us = [np.asarray(x, dtype=float) for x in s_tau] + [np.asarray(s_q, dtype=float)]
    return archimedean_prefix_cdf(config.dgp_copula, us), archimedean_prefix_dlast(config.dgp_copula, us) * f_q


def prefix_survival_true(config, arm, q, tau, t, z):
    return _prefix(config, arm, q, tau, t, z)[0]


def prefix_subdensity_true(config, arm, q, tau, t, z):
    return _prefix(config, arm, q, tau, t, z)[1]


def _prefix(config, arm, q, tau, t, z):
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    if config.dgp_copula.family in ("gumbel", "independence"):
        return _gumbel_prefix(config, arm, q, tau, t, z)
    return _copula_prefix(config, arm, q, tau, t, z)


def time_nodes(tau, order=T_ORDER, smooth=True):
    """Gauss-Legendre nodes on [0, tau].

    With ``smooth`` the rule is applied after ``t = tau s^2``: Weibull shapes
    below one leave a fractional power of ``t`` at the origin, which the
    substitution removes.
    """
    if not smooth:
        return _gl(order, 0.0, tau)
    s, w = _gl(order, 0.0, 1.0)
    return tau * s * s, 2.0 * tau * s * w


def true_values(config, tau, t_order=T_ORDER, z_order=Z_ORDER, smooth=True):
    """Component win probabilities and NB/WR/WO at horizon ``tau``."""
    tau = float(tau)
    t, wt = time_nodes(tau, t_order, smooth)
    Z, wz = covariate_grid(config, z_order)
    T = t[None, :]
    Zb = Z[:, None, :]
    pi_t, pi_c = [], []
    for q in range(1, config.Q + 1):
        s1, h1 = (wz @ x for x in _prefix(config, 1, q, tau, T, Zb))
        s0, h0 = (wz @ x for x in _prefix(config, 0, q, tau, T, Zb))
        pi_t.append(float(np.sum(wt * s1 * h0)))
        pi_c.append(float(np.sum(wt * s0 * h1)))
    return TruthResult(tau, tuple(pi_t), tuple(pi_c))
