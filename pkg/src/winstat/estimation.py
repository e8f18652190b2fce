"""Restricted records, pairwise win/loss kernels and point estimates.

Kernels are evaluated for all treated-by-control pairs at once as
``n1 x n0`` matrices, one per component. The matrices are kept on the returned
:class:`WinComponents` so the variance step can reuse them.
"""

from __future__ import annotations

import warnings
from collections import namedtuple
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .copula import (
    CopulaSpec,
    DegenerateCopulaFitError,
    archimedean_prefix_cdf,
    archimedean_prefix_dlast,
    copula_cdf,
    copula_dv,
    fit_copula,
)
from .survival import ExponentialMargin, fit_censoring, fit_cox

METHODS = ("ipcw", "m-ipcw", "raw")
DEFAULT_EPS = 1e-6

LongRow = namedtuple("LongRow", "id arm event_type time status covariates")


class DataError(ValueError):
    pass


class PositivityError(ArithmeticError):
    pass


class UndefinedSummaryError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RestrictedRecord:
    subject_id: str
    arm: int
    covariates: tuple
    y_tilde: tuple
    delta: tuple
    bar_delta: tuple
    gate_u: tuple
    followup: float = 0.0  # min(end of follow-up, tau)
    censored: int = 0  # follow-up ended by censoring before tau

    @property
    def n_components(self):
        return len(self.y_tilde)


def restrict(long_rows, tau, priority):
    """Collapse long-format rows into one :class:`RestrictedRecord` per subject.

    ``long_rows`` holds ``(id, arm, event_type, time, status, covariates)``
    tuples; ``event_type == 0`` is the follow-up row and ``priority`` lists the
    component codes from highest to lowest priority.
    """
    tau = float(tau)
    if not tau > 0:
        raise ValueError("tau must be positive")
    priority = [int(p) for p in priority]
    if len(set(priority)) != len(priority) or 0 in priority:
        raise ValueError("priority must list distinct nonzero event types")
    subjects = {}
    order = []
    for row in long_rows:
        sid, arm, etype, time, status, cov = row
        sid = str(sid)
        if sid not in subjects:
            subjects[sid] = {"arm": int(arm), "cov": tuple(float(c) for c in cov), "fu": None, "ev": {}}
            order.append(sid)
        s = subjects[sid]
        if int(arm) != s["arm"]:
            raise DataError(f"subject {sid}: inconsistent arm")
        etype = int(etype)
        if etype == 0:
            if s["fu"] is not None:
                raise DataError(f"subject {sid}: more than one follow-up row")
            s["fu"] = (float(time), int(status))
        elif etype in priority:
            if etype in s["ev"]:
                raise DataError(f"subject {sid}: duplicate rows for event type {etype}")
            s["ev"][etype] = float(time)
        # rows for event types outside the priority list are ignored

    records = []
    for sid in order:
        s = subjects[sid]
        if s["fu"] is None:
            raise DataError(f"subject {sid}: no follow-up row (event_type 0)")
        fu_time, fu_status = s["fu"]
        for etype, t in s["ev"].items():
            if t > fu_time:
                raise DataError(f"subject {sid}: event type {etype} at {t} after follow-up end {fu_time}")
        end = min(fu_time, tau)
        censored = int(fu_time < tau and fu_status == 0)
        y, d = [], []
        for etype in priority:
            t = s["ev"].get(etype, np.inf)
            y.append(min(t, fu_time, tau))
            d.append(int(t <= min(fu_time, tau)))
        bd = [1] + [int(all(x == 0 for x in d[:q])) for q in range(1, len(d))]
        gu = [tau] + [end if bd[q] else tau for q in range(1, len(d))]
        records.append(RestrictedRecord(sid, s["arm"], s["cov"], tuple(y), tuple(d), tuple(bd),
                                        tuple(gu), end, censored))
    return records


@dataclass
class ArmData:
    """Column view of one arm's restricted records."""

    Z: np.ndarray  # (n, p)
    Y: np.ndarray  # (n, Q)
    D: np.ndarray
    BD: np.ndarray
    U: np.ndarray
    X: np.ndarray  # follow-up, restricted
    cens: np.ndarray

    @property
    def n(self):
        return self.Y.shape[0]

    @classmethod
    def from_records(cls, records):
        if not records:
            raise DataError("empty arm")
        p = len(records[0].covariates)
        return cls(
            Z=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
            Y=np.array([r.y_tilde for r in records], dtype=float),
            D=np.array([r.delta for r in records], dtype=int),
            BD=np.array([r.bar_delta for r in records], dtype=int),
            U=np.array([r.gate_u for r in records], dtype=float),
            X=np.array([r.followup for r in records], dtype=float),
            cens=np.array([r.censored for r in records], dtype=int),
        )


def split_arms(records):
    t = [r for r in records if r.arm == 1]
    c = [r for r in records if r.arm == 0]
    if not t or not c:
        raise DataError("both arms must be nonempty")
    return ArmData.from_records(t), ArmData.from_records(c)


# --------------------------------------------------------------- nuisances

@dataclass
class NuisanceBundle:
    """Fitted nuisances per arm: censoring ``G_a``, margins ``S_{q,a}`` and copula.

    Models expose ``survival(t, Z)`` with numpy broadcasting over ``t`` and the
    leading axes of ``Z``, plus ``influence_functional`` for the variance step.
    """

    censoring: dict
    margins: dict | None = None
    copula: dict | None = None
    copula_fits: dict | None = None
    eps: float = DEFAULT_EPS
    censor_model: str = "km"
    floored: list = field(default_factory=lambda: [0])

    def G(self, arm, t, Z):
        g = self.censoring[arm].survival(t, Z)
        low = g < self.eps
        if np.any(low):
            self.floored[0] += int(np.count_nonzero(low))
            g = np.maximum(g, self.eps)
        return g

    def S(self, arm, q, t, Z):
        s = self.margins[arm][q - 1].survival(t, Z)
        return np.clip(s, self.eps, 1.0 - self.eps)


def fit_margin(time, event, Z, model="cox"):
    if model == "cox":
        return fit_cox(time=time, event=event, Z=Z)
    if model == "exponential":
        return ExponentialMargin(time, event)
    raise ValueError(f"unknown margin model {model!r}")


def fit_nuisances(records, censor="km", margin="cox", copula="gumbel", eps=DEFAULT_EPS,
                  need_event_model=True):
    """Fit all working nuisance models on restricted records.

    The copula is fitted per arm by pseudo-likelihood on the fitted marginal
    survival probabilities; with more than two components the pairwise
    pseudo-likelihoods are pooled into one composite fit.
    """
    arms = dict(zip((1, 0), split_arms(records)))
    cens = {a: fit_censoring(d.X, d.cens, d.Z, censor) for a, d in arms.items()}
    bundle = NuisanceBundle(censoring=cens, eps=eps, censor_model=censor)
    Q = arms[1].Y.shape[1]
    if not need_event_model or Q < 2:
        return bundle
    bundle.margins = {a: [fit_margin(d.Y[:, q], d.D[:, q], d.Z, margin) for q in range(Q)]
                      for a, d in arms.items()}
    bundle.copula, bundle.copula_fits = {}, {}
    for a, d in arms.items():
        if copula == "independence":
            bundle.copula[a] = CopulaSpec("independence")
            continue
        S = np.column_stack([bundle.S(a, q + 1, d.Y[:, q], d.Z) for q in range(Q)])
        pairs = list(combinations(range(Q), 2))
        try:
            fit = fit_copula(copula,
                             u1=np.concatenate([S[:, k] for k, _ in pairs]),
                             u2=np.concatenate([S[:, l] for _, l in pairs]),
                             d1=np.concatenate([d.D[:, k] for k, _ in pairs]),
                             d2=np.concatenate([d.D[:, l] for _, l in pairs]), eps=eps)
        except DegenerateCopulaFitError as exc:
            warnings.warn(f"arm {a}: {exc}; using the independence working copula", RuntimeWarning, stacklevel=2)
            bundle.copula[a] = CopulaSpec("independence")
            continue
        bundle.copula[a] = fit.spec
        bundle.copula_fits[a] = fit
    return bundle


# ------------------------------------------------------------------ ratios

def _ratio_parts(bundle, arm, q, u, t, z, tau, derivative):
    u = np.asarray(u, dtype=float)
    tau_s = [bundle.S(arm, k, np.full(u.shape, tau), z) for k in range(1, q)]
    u_s = [bundle.S(arm, k, u, z) for k in range(1, q)]
    s_q = bundle.S(arm, q, t, z)
    spec = bundle.copula[arm]
    if q == 2:
        f = copula_dv if derivative else copula_cdf
        return f(spec, tau_s[0], s_q), f(spec, u_s[0], s_q)
    f = archimedean_prefix_dlast if derivative else archimedean_prefix_cdf
    return f(spec, tau_s + [s_q]), f(spec, u_s + [s_q])


def _ratio(bundle, arm, q, u, t, z, tau, derivative, label=""):
    u = np.asarray(u, dtype=float)
    num, den = _ratio_parts(bundle, arm, q, u, t, z, tau, derivative)
    num, den = np.broadcast_arrays(num, den)
    at_tau = np.broadcast_to(u >= tau, den.shape)
    small = (den < bundle.eps ** 2) & ~at_tau
    if np.any(small):
        raise PositivityError(f"conditional tie ratio denominator below eps^2 for component {q}, "
                              f"arm {arm}{label} ({int(small.sum())} pairs)")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(at_tau, 1.0, num / np.where(at_tau, 1.0, den))
    return np.clip(r, 0.0, 1.0)


def ratio_gt(bundle, arm, q, u, t, z, tau):
    """P(higher-priority components event-free to tau | event-free to u, T_q > t)."""
    return _ratio(bundle, arm, q, u, t, z, tau, derivative=False)


def ratio_eq(bundle, arm, q, u, t, z, tau):
    """As :func:`ratio_gt` but conditional on ``T_q = t``."""
    return _ratio(bundle, arm, q, u, t, z, tau, derivative=True)


# ----------------------------------------------------------------- kernels

@dataclass
class PairKernels:
    """Per-component ``n1 x n0`` win/loss kernel matrices and their weight times."""

    win: list
    loss: list
    t_win: list  # time argument of the censoring weights, broadcastable to n1 x n0
    t_loss: list


def _weights(bundle, method, t, Zt, Zc):
    if method == "raw":
        return np.ones(np.shape(t))
    return bundle.G(1, t, Zt[:, None, :]) * bundle.G(0, t, Zc[None, :, :])


def pair_kernels(trt: ArmData, ctl: ArmData, tau, method, bundle):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    Q = trt.Y.shape[1]
    n1, n0 = trt.n, ctl.n
    win, loss, tw, tl = [], [], [], []
    yi, yj = trt.Y[:, None, :], ctl.Y[None, :, :]
    for q in range(Q):
        a_i, a_j = yi[..., q], yj[..., q]
        gt = a_i > a_j
        lt = a_i < a_j
        if q == 0 or method in ("ipcw", "raw"):
            if q == 0:
                gate = np.ones((n1, n0), dtype=bool)
                t_w = np.broadcast_to(a_j, (n1, n0))
                t_l = np.broadcast_to(a_i, (n1, n0))
            else:
                free_i = np.all((trt.Y[:, :q] == tau) & (trt.D[:, :q] == 0), axis=1)
                free_j = np.all((ctl.Y[:, :q] == tau) & (ctl.D[:, :q] == 0), axis=1)
                gate = free_i[:, None] & free_j[None, :]
                t_w = t_l = np.full((1, 1), float(tau))
            w_num = gate & gt & (ctl.D[None, :, q] == 1)
            l_num = gate & lt & (trt.D[:, None, q] == 1)
            w = np.zeros((n1, n0))
            l = np.zeros((n1, n0))
            if np.any(w_num):
                w[w_num] = 1.0 / np.broadcast_to(_weights(bundle, method, t_w, trt.Z, ctl.Z), (n1, n0))[w_num]
            if np.any(l_num):
                l[l_num] = 1.0 / np.broadcast_to(_weights(bundle, method, t_l, trt.Z, ctl.Z), (n1, n0))[l_num]
        else:
            gate = (trt.BD[:, None, q] == 1) & (ctl.BD[None, :, q] == 1)
            t_w = np.broadcast_to(a_j, (n1, n0))
            t_l = np.broadcast_to(a_i, (n1, n0))
            w = _mipcw_term(bundle, trt, ctl, q + 1, tau, gate & gt & (ctl.D[None, :, q] == 1), "win")
            l = _mipcw_term(bundle, trt, ctl, q + 1, tau, gate & lt & (trt.D[:, None, q] == 1), "loss")
        win.append(w)
        loss.append(l)
        tw.append(t_w)
        tl.append(t_l)
    return PairKernels(win, loss, tw, tl)


def _mipcw_term(bundle, trt, ctl, q, tau, mask, kind):
    """m-IPCW kernel on the pairs in ``mask``; zero elsewhere."""
    out = np.zeros(mask.shape)
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        return out
    if bundle.margins is None or bundle.copula is None:
        raise ValueError("m-ipcw needs fitted margins and copula for components beyond the first")
    col = q - 1
    zi, zj = trt.Z[ii], ctl.Z[jj]
    ui, uj = trt.U[ii, col], ctl.U[jj, col]
    if kind == "win":
        t = ctl.Y[jj, col]
        r = ratio_gt(bundle, 1, q, ui, t, zi, tau) * ratio_eq(bundle, 0, q, uj, t, zj, tau)
    else:
        t = trt.Y[ii, col]
        r = ratio_gt(bundle, 0, q, uj, t, zj, tau) * ratio_eq(bundle, 1, q, ui, t, zi, tau)
    g = bundle.G(1, t, zi) * bundle.G(0, t, zj)
    out[ii, jj] = r / g
    return out


def kernel_pair(i: RestrictedRecord, j: RestrictedRecord, q, method, bundle, tau):
    """Win and loss terms of one treated/control pair at component ``q`` (1-based)."""
    if i.arm != 1 or j.arm != 0:
        raise ValueError("kernel_pair expects a treated record and a control record")
    k = pair_kernels(ArmData.from_records([i]), ArmData.from_records([j]), tau, method, bundle)
    return float(k.win[q - 1][0, 0]), float(k.loss[q - 1][0, 0])


# ---------------------------------------------------------------- estimates

@dataclass
class WinComponents:
    method: str
    tau: float
    pi_tq: np.ndarray
    pi_cq: np.ndarray
    n1: int = 0
    n0: int = 0
    n_floored: int = 0
    kernels: PairKernels | None = field(default=None, repr=False, compare=False)

    @property
    def pi_t(self):
        return float(np.sum(self.pi_tq))

    @property
    def pi_c(self):
        return float(np.sum(self.pi_cq))

    @property
    def pi_u(self):
        return 1.0 - self.pi_t - self.pi_c


def estimate(records, tau, method, bundle):
    """Component and total win/loss probabilities by ``method`` at horizon ``tau``."""
    trt, ctl = split_arms(records)
    before = bundle.floored[0]
    k = pair_kernels(trt, ctl, tau, method, bundle)
    n_pairs = trt.n * ctl.n
    # per-treated row sums, then a fixed-order reduction
    pi_tq = np.array([np.sum(np.sum(w, axis=1)) / n_pairs for w in k.win])
    pi_cq = np.array([np.sum(np.sum(l, axis=1)) / n_pairs for l in k.loss])
    floored = bundle.floored[0] - before
    if floored:
        warnings.warn(f"{floored} censoring-survival evaluations floored at eps={bundle.eps}",
                      RuntimeWarning, stacklevel=2)
    return WinComponents(method, float(tau), pi_tq, pi_cq, trt.n, ctl.n, floored, k)


def summarize(components):
    """Net benefit, win ratio and win odds."""
    pt, pc = components.pi_t, components.pi_c
    nb = pt - pc
    if pc <= 0:
        raise UndefinedSummaryError("win ratio undefined: loss probability is not positive")
    if abs(nb) >= 1:
        raise UndefinedSummaryError("win odds undefined: |NB| >= 1")
    return nb, pt / pc, (1.0 + nb) / (1.0 - nb)
