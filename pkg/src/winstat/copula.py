"""Bivariate survival copulas (independence, Gumbel-Hougaard, Clayton, Frank,
Plackett), exchangeable Archimedean extensions, and censored pseudo-likelihood
fitting of the dependence parameter.

The closed forms are written so they also accept complex arguments; parameter
derivatives and second derivatives in ``v`` are taken by complex step, which is
exact to rounding and keeps the analytic pieces to ``C``, ``C_2`` and ``c``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

FAMILIES = ("independence", "gumbel", "clayton", "frank", "plackett")
ARCHIMEDEAN = ("independence", "gumbel", "clayton", "frank")

# search bounds (natural scale) and the lower offset from a closed boundary
THETA_MAX = {"gumbel": 50.0, "clayton": 50.0, "frank": 50.0, "plackett": 1e4}
THETA_DELTA = 1e-6
INDEPENDENCE_BAND = 1e-8
# log-likelihood spread over the whole search range below which theta is not identified
FLAT_LOGLIK_RANGE = 1e-3
_CSTEP = 1e-20


class CopulaDomainError(ValueError):
    pass


class DegenerateCopulaFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CopulaSpec:
    family: str
    theta: float | None = None

    def __post_init__(self):
        check_domain(self.family, self.theta)

    def __str__(self):
        if self.family == "independence":
            return "independence"
        return f"{self.family}({self.theta:.4g})"


def check_domain(family, theta):
    if family not in FAMILIES:
        raise CopulaDomainError(f"unknown copula family {family!r}")
    if family == "independence":
        return
    if theta is None or not np.isfinite(theta):
        raise CopulaDomainError(f"{family} copula needs a finite parameter")
    ok = {
        "gumbel": theta >= 1.0,
        "clayton": theta > 0.0,
        "frank": theta != 0.0,
        "plackett": theta > 0.0 and theta != 1.0,
    }[family]
    if not ok:
        raise CopulaDomainError(f"theta={theta} outside the {family} parameter domain")


def _effective(spec):
    return _eff(spec.family, spec.theta)


def _eff(fam, th):
    """Family actually evaluated: near-independence parameters collapse to independence."""
    if fam == "independence":
        return fam, None
    if fam == "gumbel" and th == 1.0:
        return "independence", None
    if fam == "frank" and abs(th) < INDEPENDENCE_BAND:
        return "independence", None
    if fam == "plackett" and abs(th - 1.0) < INDEPENDENCE_BAND:
        return "independence", None
    return fam, th


def _as(x):
    x = np.asarray(x)
    return x if np.iscomplexobj(x) else x.astype(float)


# ---------------------------------------------------------------- closed forms

def _gumbel_parts(th, u, v):
    with np.errstate(divide="ignore"):
        lx, ly = np.log(-np.log(u)), np.log(-np.log(v))
        m = np.maximum(np.real(lx), np.real(ly))
        m = np.where(np.isfinite(m), m, 0.0)  # u = v = 1
        log_a = th * m + np.log(np.exp(th * (lx - m)) + np.exp(th * (ly - m)))
    return lx, ly, log_a


def _frank_b(th, u, v):
    """``1 + (e^{-th u} - 1)(e^{-th v} - 1) / (e^{-th} - 1)`` without cancellation."""
    if np.real(th) > 1.0:
        eu, ev, e1 = np.exp(-th * u), np.exp(-th * v), np.exp(-th)
        return (eu + ev - eu * ev - e1) / (1.0 - e1)
    return 1.0 + np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)


def _clayton_a(th, u, v):
    """``u^-th + v^-th - 2``, accurate for small ``th``."""
    return np.expm1(-th * np.log(u)) + np.expm1(-th * np.log(v))


def _cdf(fam, th, u, v):
    if fam == "independence":
        return u * v
    if fam == "gumbel":
        _, _, log_a = _gumbel_parts(th, u, v)
        return np.exp(-np.exp(log_a / th))
    if fam == "clayton":
        return np.exp(-np.log1p(_clayton_a(th, u, v)) / th)
    if fam == "frank":
        return -np.log(_frank_b(th, u, v)) / th
    if fam == "plackett":
        b = 1.0 + (th - 1.0) * (u + v)
        d = b * b - 4.0 * th * (th - 1.0) * u * v
        return (b - np.sqrt(d)) / (2.0 * (th - 1.0))
    raise CopulaDomainError(fam)


def _dv(fam, th, u, v):
    """dC/dv."""
    if fam == "independence":
        return u + 0.0 * v
    if fam == "gumbel":
        _, ly, log_a = _gumbel_parts(th, u, v)
        c = np.exp(-np.exp(log_a / th))
        return c * np.exp((1.0 / th - 1.0) * log_a + (th - 1.0) * ly) / v
    if fam == "clayton":
        return np.exp(-(th + 1.0) * np.log(v) - (1.0 / th + 1.0) * np.log1p(_clayton_a(th, u, v)))
    if fam == "frank":
        b = _frank_b(th, u, v)
        return np.exp(-th * v) * np.expm1(-th * u) / (np.expm1(-th) * b)
    if fam == "plackett":
        b = 1.0 + (th - 1.0) * (u + v)
        d = b * b - 4.0 * th * (th - 1.0) * u * v
        return 0.5 * (1.0 - (b - 2.0 * th * u) / np.sqrt(d))
    raise CopulaDomainError(fam)


def _density(fam, th, u, v):
    if fam == "independence":
        return 1.0 + 0.0 * u * v
    if fam == "gumbel":
        lx, ly, log_a = _gumbel_parts(th, u, v)
        a_inv = np.exp(log_a / th)
        c = np.exp(-a_inv)
        return (c * np.exp((th - 1.0) * (lx + ly) + (1.0 / th - 2.0) * log_a)
                * (a_inv + th - 1.0) / (u * v))
    if fam == "clayton":
        return (1.0 + th) * np.exp(-(th + 1.0) * np.log(u * v) - (1.0 / th + 2.0) * np.log1p(_clayton_a(th, u, v)))
    if fam == "frank":
        b = _frank_b(th, u, v)
        return -th * np.exp(-th * (u + v)) / (np.expm1(-th) * b * b)
    if fam == "plackett":
        b = 1.0 + (th - 1.0) * (u + v)
        d = b * b - 4.0 * th * (th - 1.0) * u * v
        return th * (1.0 + (th - 1.0) * (u + v - 2.0 * u * v)) / d ** 1.5
    raise CopulaDomainError(fam)


# ------------------------------------------------------------------ public API

def copula_cdf(spec, u, v):
    fam, th = _effective(spec)
    return _cdf(fam, th, _as(u), _as(v))


def copula_dv(spec, u, v):
    fam, th = _effective(spec)
    return _dv(fam, th, _as(u), _as(v))


def copula_du(spec, u, v):
    # every family here is exchangeable
    fam, th = _effective(spec)
    return _dv(fam, th, _as(v), _as(u))


def copula_density(spec, u, v):
    fam, th = _effective(spec)
    return _density(fam, th, _as(u), _as(v))


def copula_dvv(spec, u, v):
    """d^2 C / dv^2 by complex step on the closed-form ``C_2``."""
    fam, th = _effective(spec)
    v = np.asarray(v, dtype=float)
    return np.imag(_dv(fam, th, _as(u), v + 1j * _CSTEP)) / _CSTEP


def copula_dtheta(spec, u, v, what="cdf"):
    """Derivative in the copula parameter of ``C`` (``what='cdf'``) or ``C_2`` (``'dv'``)."""
    fam, th = _effective(spec)
    if spec.family == "independence":
        return np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape)
    if fam == "independence":
        # derivative at the independence point, from the full family
        fam, th = spec.family, spec.theta
        if fam == "frank":
            h = 1e-5
            f = _cdf if what == "cdf" else _dv
            return (f(fam, h, _as(u), _as(v)) - f(fam, -h, _as(u), _as(v))) / (2 * h)
        if fam == "plackett":
            th = 1.0 + 2 * INDEPENDENCE_BAND
        if fam == "gumbel":
            th = 1.0 + 1e-9
    f = _cdf if what == "cdf" else _dv
    return np.imag(f(fam, th + 1j * _CSTEP, _as(u), _as(v))) / _CSTEP


# ------------------------------------------------------- Archimedean generators

def _phi(fam, th, u):
    if fam == "independence":
        return -np.log(u)
    if fam == "gumbel":
        return (-np.log(u)) ** th
    if fam == "clayton":
        return (u ** -th - 1.0) / th
    if fam == "frank":
        return -np.log(np.expm1(-th * u) / np.expm1(-th))
    raise CopulaDomainError(f"{fam} has no Archimedean generator")


def _dphi(fam, th, u):
    if fam == "independence":
        return -1.0 / u
    if fam == "gumbel":
        return -th * (-np.log(u)) ** (th - 1.0) / u
    if fam == "clayton":
        return -u ** (-th - 1.0)
    if fam == "frank":
        return th * np.exp(-th * u) / np.expm1(-th * u)
    raise CopulaDomainError(fam)


def _phi_inv(fam, th, s):
    if fam == "independence":
        return np.exp(-s)
    if fam == "gumbel":
        return np.exp(-s ** (1.0 / th))
    if fam == "clayton":
        return (1.0 + th * s) ** (-1.0 / th)
    if fam == "frank":
        return -np.log1p(np.exp(-s) * np.expm1(-th)) / th
    raise CopulaDomainError(fam)


def _dphi_inv(fam, th, s):
    if fam == "independence":
        return -np.exp(-s)
    if fam == "gumbel":
        return -(s ** (1.0 / th - 1.0)) * np.exp(-s ** (1.0 / th)) / th
    if fam == "clayton":
        return -(1.0 + th * s) ** (-1.0 / th - 1.0)
    if fam == "frank":
        e = np.exp(-s) * np.expm1(-th)
        return e / (th * (1.0 + e))
    raise CopulaDomainError(fam)


def _prefix_args(spec, us):
    us = [np.asarray(x, dtype=float) for x in us]
    if len(us) < 2:
        raise ValueError("need at least two arguments")
    fam, th = _effective(spec)
    if fam == "plackett":
        if len(us) > 2:
            raise CopulaDomainError("plackett copula is only available in two dimensions")
    return fam, th, us


def archimedean_prefix_cdf(spec, us):
    """``C(u_1, ..., u_q)`` for the exchangeable copula of the family."""
    fam, th, us = _prefix_args(spec, us)
    if len(us) == 2:
        return _cdf(fam, th, us[0], us[1])
    return _phi_inv(fam, th, sum(_phi(fam, th, x) for x in us))


def archimedean_prefix_dlast(spec, us):
    """Partial derivative of :func:`archimedean_prefix_cdf` in its last argument."""
    fam, th, us = _prefix_args(spec, us)
    if len(us) == 2:
        return _dv(fam, th, us[0], us[1])
    return _dphi_inv(fam, th, sum(_phi(fam, th, x) for x in us)) * _dphi(fam, th, us[-1])


# --------------------------------------------------------- Kendall tau / Debye

def debye1(theta):
    """First Debye function ``theta^{-1} int_0^theta x / (e^x - 1) dx``."""
    theta = float(theta)
    if abs(theta) < 1e-4:
        return 1.0 - theta / 4.0 + theta ** 2 / 36.0
    if theta < 0:
        return debye1(-theta) - theta / 2.0
    q = -math.expm1(-theta)  # 1 - e^{-theta}
    integral = math.pi ** 2 / 6.0 + theta * math.log(q) - special.spence(q)
    return integral / theta


def frank_tau(theta):
    return 1.0 - 4.0 / theta + 4.0 * debye1(theta) / theta


DEFAULT_START = {"gumbel": 1.5, "clayton": 1.0, "frank": 2.0, "plackett": 2.0}


def kendall_tau_start(family, tau_k):
    """Moment-type starting value from Kendall's tau; ``None`` asks for a grid scan."""
    if family == "gumbel":
        return 1.0 / (1.0 - tau_k) if 0.0 <= tau_k < 1.0 - 1.0 / THETA_MAX["gumbel"] else DEFAULT_START[family]
    if family == "clayton":
        th = 2.0 * tau_k / (1.0 - tau_k) if tau_k < 1 else np.inf
        return th if 0.0 < th <= THETA_MAX["clayton"] else DEFAULT_START[family]
    if family == "frank":
        if abs(tau_k) < 1e-6:
            return DEFAULT_START[family]
        lo, hi = (1e-6, THETA_MAX["frank"]) if tau_k > 0 else (-THETA_MAX["frank"], -1e-6)
        g = lambda th: frank_tau(th) - tau_k
        if g(lo) * g(hi) > 0:
            return DEFAULT_START[family]
        return optimize.brentq(g, lo, hi, xtol=1e-12)
    if family == "plackett":
        return None
    if family == "independence":
        return None
    raise CopulaDomainError(family)


# ------------------------------------------------------------- pseudo-likelihood

@dataclass(frozen=True)
class CensoredUniformPair:
    u1: float
    u2: float
    d1: int
    d2: int


@dataclass
class CopulaFit:
    spec: CopulaSpec
    information: float | None = None  # -d^2 l / d theta^2 at the estimate (total)
    scores: np.ndarray | None = None  # per-subject d l_i / d theta
    loglik: float = 0.0
    at_boundary: bool = False

    @property
    def influence(self):
        """Per-subject influence of ``theta_hat`` (IFM, margins held fixed)."""
        if self.scores is None or self.information is None:
            return None
        return self.scores * (len(self.scores) / self.information)


def _loglik_terms(fam, th, u1, u2, d1, d2):
    d1 = np.asarray(d1, dtype=bool)
    d2 = np.asarray(d2, dtype=bool)
    tiny = 1e-300
    out = 0.0
    with np.errstate(all="ignore"):
        for mask, f, a, b in ((d1 & d2, _density, u1, u2), (d1 & ~d2, _dv, u2, u1),
                              (~d1 & d2, _dv, u1, u2), (~d1 & ~d2, _cdf, u1, u2)):
            if np.any(mask):
                out = out + np.where(mask, np.log(f(fam, th, a, b) + tiny), 0.0)
    return out


def _theta_from_s(family, s):
    if family == "gumbel":
        return 1.0 + math.exp(s)
    if family in ("clayton", "plackett"):
        return math.exp(s)
    return s


def _s_from_theta(family, th):
    if family == "gumbel":
        return math.log(th - 1.0)
    if family in ("clayton", "plackett"):
        return math.log(th)
    return th


def _s_bounds(family):
    if family == "gumbel":
        return math.log(THETA_DELTA), math.log(THETA_MAX[family] - 1.0)
    if family == "clayton":
        return math.log(THETA_DELTA), math.log(THETA_MAX[family])
    if family == "plackett":
        return -math.log(THETA_MAX[family]), math.log(THETA_MAX[family])
    return -THETA_MAX[family], THETA_MAX[family]


def pseudo_loglik(family, theta, u1, u2, d1, d2, per_subject=False):
    fam, th = _eff(family, theta)
    terms = _loglik_terms(fam, th, u1, u2, d1, d2)
    terms = np.broadcast_to(terms, np.shape(u1))
    return terms if per_subject else float(np.sum(terms))


def _unpack_pairs(pairs):
    arr = np.array([(p.u1, p.u2, p.d1, p.d2) for p in pairs], dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2].astype(int), arr[:, 3].astype(int)


def fit_copula(family, pairs=None, *, u1=None, u2=None, d1=None, d2=None, eps=1e-6):
    """Maximise the censored pseudo log-likelihood in the copula parameter.

    Works on an unconstrained scale (``log(theta - 1)`` for Gumbel, ``log theta``
    for Clayton/Plackett, ``theta`` itself for Frank): a 25-point scan plus the
    Kendall-tau start picks the basin, bounded Brent polishes it.
    """
    if pairs is not None:
        u1, u2, d1, d2 = _unpack_pairs(pairs)
    u1 = np.clip(np.asarray(u1, dtype=float), eps, 1 - eps)
    u2 = np.clip(np.asarray(u2, dtype=float), eps, 1 - eps)
    d1 = np.asarray(d1, dtype=int)
    d2 = np.asarray(d2, dtype=int)
    if u1.size < 2:
        raise ValueError("need at least two pairs")
    if family == "independence":
        return CopulaFit(CopulaSpec("independence"))
    if family not in FAMILIES:
        raise CopulaDomainError(f"unknown copula family {family!r}")

    def negll(s):
        return -pseudo_loglik(family, _theta_from_s(family, s), u1, u2, d1, d2)

    lo, hi = _s_bounds(family)
    grid = list(np.linspace(lo, hi, 25))
    start = None
    if family != "plackett":
        both = (d1 == 1) & (d2 == 1)
        sel = both if both.sum() >= 10 else np.ones_like(both)
        tau_k = stats.kendalltau(u1[sel], u2[sel])[0]
        if np.isfinite(tau_k):
            th0 = kendall_tau_start(family, tau_k)
            if th0 is not None and (family != "gumbel" or th0 > 1.0 + THETA_DELTA):
                start = _s_from_theta(family, th0)
                grid.append(min(max(start, lo), hi))
    else:
        grid += list(np.log(np.logspace(-2, 2, 25)))
    grid = np.array(sorted(set(grid)))
    vals = np.array([negll(s) for s in grid])
    k = int(np.nanargmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(negll, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10, "maxiter": 500})
    s_hat = res.x if res.fun <= vals[k] else grid[k]
    theta = _theta_from_s(family, s_hat)
    if family == "frank" and abs(theta) < INDEPENDENCE_BAND:
        theta = math.copysign(INDEPENDENCE_BAND, theta if theta else 1.0)
    at_boundary = min(s_hat - lo, hi - s_hat) < 1e-3 * max(1.0, hi - lo)
    if at_boundary:
        warnings.warn(f"{family} copula estimate {theta:.4g} is at the search boundary", RuntimeWarning,
                      stacklevel=2)
    spec = CopulaSpec(family, theta)
    scores = _scores(family, theta, u1, u2, d1, d2)
    h = 1e-4 * max(1.0, abs(theta))
    if family == "gumbel":
        h = min(h, (theta - 1.0) / 2) if theta - 1.0 > 2e-8 else 1e-8
    if family in ("clayton", "plackett"):
        h = min(h, theta / 2)
    info = -(np.sum(_scores(family, theta + h, u1, u2, d1, d2))
             - np.sum(_scores(family, theta - h, u1, u2, d1, d2))) / (2 * h)
    if np.ptp(vals[np.isfinite(vals)]) < FLAT_LOGLIK_RANGE:
        raise DegenerateCopulaFitError(f"flat {family} pseudo-likelihood: data do not inform theta")
    if not np.isfinite(info) or info < 1e-8:
        if not at_boundary:
            raise DegenerateCopulaFitError(f"flat {family} pseudo-likelihood (information {info:.3g})")
        # curvature is not usable at the edge of the search range
        info = None
    return CopulaFit(spec, information=None if info is None else float(info), scores=scores,
                     loglik=-float(res.fun), at_boundary=bool(at_boundary))


def _scores(family, theta, u1, u2, d1, d2):
    fam, th = _eff(family, theta)
    if fam == "independence":
        h = 1e-6
        up = _loglik_terms(family, theta + h if family != "gumbel" else 1 + 2 * h, u1, u2, d1, d2)
        dn = _loglik_terms(family, theta - h if family != "gumbel" else 1 + h, u1, u2, d1, d2)
        return np.broadcast_to((up - dn) / (2 * h if family != "gumbel" else h), u1.shape).copy()
    t = _loglik_terms(fam, th + 1j * _CSTEP, u1.astype(complex), u2.astype(complex), d1, d2)
    return np.broadcast_to(np.imag(t) / _CSTEP, u1.shape).copy()
