"""Survival-model nuisances: Kaplan-Meier curves, Breslow-ties Cox models and
the per-subject influence pieces both need for sandwich variances.

Every fitted model exposes the same small surface:

``survival(t, Z)``
    Elementwise, broadcasting survival probability.  ``Z`` has one more
    (trailing) axis than ``t`` and is ignored by covariate-free models.
``influence_functional(t, Z, coef)``
    For the fitted sample ``k = 1..n`` returns ``sum_p coef[p] * kappa_k(t[p], z[p])``
    where ``kappa_k`` is subject ``k``'s influence function for the fitted
    survival curve (``S_hat - S ~ n^{-1} sum_k kappa_k``).  Estimators only ever
    need such linear functionals, so the influence function is never
    materialised as an ``n x P`` matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

KM_FLOOR = 1e-10


class CoxConvergenceError(RuntimeError):
    def __init__(self, message, beta=None, score_norm=None):
        super().__init__(message)
        self.beta = beta
        self.score_norm = score_norm


class SingularInformationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SurvivalSample:
    subject_id: object
    observed_time: float
    indicator: int
    covariates: tuple = ()
    arm: int = 0

    def __post_init__(self):
        if self.observed_time < 0:
            raise ValueError(f"negative observed time for subject {self.subject_id}")
        if self.indicator not in (0, 1):
            raise ValueError(f"indicator must be 0/1 for subject {self.subject_id}")


def _unpack(samples):
    if len(samples) == 0:
        raise ValueError("no samples")
    time = np.array([s.observed_time for s in samples], dtype=float)
    event = np.array([s.indicator for s in samples], dtype=int)
    p = {len(s.covariates) for s in samples}
    if len(p) != 1:
        raise ValueError("covariate vectors differ in length")
    Z = np.array([list(s.covariates) for s in samples], dtype=float).reshape(len(samples), p.pop())
    return time, event, Z


def _event_table(time, event, risk):
    """Distinct event times with counts, risk-set sums and per-subject positions."""
    order = np.argsort(time, kind="mergesort")
    ts = time[order]
    # risk set at u is {time >= u}: reverse cumulative sums from the first index of each tie block
    rev = np.cumsum(risk[order][::-1])[::-1]
    jump = np.unique(time[event == 1])
    first = np.searchsorted(ts, jump, side="left")
    d = np.bincount(np.searchsorted(jump, time[event == 1]), minlength=len(jump)).astype(float)
    return jump, d, rev[first] if len(jump) else np.zeros(0), order, first


def _step(times, values, t, before=0.0):
    """Right-continuous step function with jumps at ``times``; ``before`` for t < times[0]."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(times, t, side="right") - 1
    out = np.where(idx >= 0, values[np.clip(idx, 0, None)] if len(values) else before, before)
    return out


def _reverse_weight(t, w, grid):
    """W(>= g) = sum of w[p] over points with t[p] >= g, for each g in grid."""
    order = np.argsort(t, kind="mergesort")
    ts = t[order]
    tail = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
    return tail[np.searchsorted(ts, grid, side="left")]


class KaplanMeierCurve:
    """Product-limit estimate of ``P(X > t)`` from ``(time, indicator)`` pairs.

    Used with ``indicator`` flagging censoring (reverse Kaplan-Meier) to
    estimate the censoring survival function ``G(t)``.
    """

    def __init__(self, time, event):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=int)
        if time.size == 0:
            raise ValueError("no samples")
        self.time = time
        self.event = event
        self.n = time.size
        jump, d, at_risk, _, _ = _event_table(time, event, np.ones_like(time))
        self.jump_times = jump
        self.n_events = d
        self.n_at_risk = at_risk.astype(int)
        self.survival_values = np.cumprod(1.0 - d / at_risk) if len(jump) else np.zeros(0)
        self.hazard_increments = d / at_risk if len(jump) else np.zeros(0)

    def survival(self, t, Z=None):
        return np.maximum(_step(self.jump_times, self.survival_values, t, 1.0), KM_FLOOR)

    def __call__(self, t):
        return self.survival(t)

    def influence_functional(self, t, Z, coef):
        t = np.asarray(t, dtype=float).ravel()
        coef = np.asarray(coef, dtype=float).ravel()
        if len(self.jump_times) == 0 or t.size == 0:
            return np.zeros(self.n)
        w = -coef * self.survival(t)
        s0 = self.n_at_risk / self.n
        # product-limit derivative carries 1/(1 - dLambda); a terminal jump to zero keeps factor 1
        keep = 1.0 - self.hazard_increments
        h = _reverse_weight(t, w, self.jump_times) / (s0 * np.where(keep > 0, keep, 1.0))
        cum = np.cumsum(h * self.hazard_increments)
        return _martingale_integral(self.time, self.event, np.ones(self.n), self.jump_times, h, cum)


def _martingale_integral(time, event, risk, jump, h, cum_h_dlam):
    """Per-subject ``int h(u) dM_i(u)`` for step ``h`` living on the jump times."""
    k = np.searchsorted(jump, time, side="right") - 1
    comp = np.where(k >= 0, cum_h_dlam[np.clip(k, 0, None)], 0.0)
    at_jump = np.where(event == 1, h[np.clip(np.searchsorted(jump, time), 0, len(jump) - 1)], 0.0)
    return at_jump - risk * comp


def fit_censoring_km(samples):
    """Reverse Kaplan-Meier: ``indicator == 1`` means censored at ``observed_time``."""
    time, event, _ = _unpack(samples)
    return KaplanMeierCurve(time, event)


@dataclass
class CoxFit:
    """Breslow-ties Cox proportional hazards fit.

    ``beta`` is on the original covariate scale; internally covariates are
    mean-centred and ``baseline_cumhaz`` is reported for ``z = 0``.
    """

    beta: np.ndarray
    event_times: np.ndarray
    hazard_increments: np.ndarray  # centred-scale Breslow jumps
    center: np.ndarray
    information: np.ndarray  # total observed information, active columns
    converged: bool
    score_norm: float
    n_iter: int
    active: np.ndarray
    time: np.ndarray = field(repr=False)
    event: np.ndarray = field(repr=False)
    Zc: np.ndarray = field(repr=False)
    s0: np.ndarray = field(repr=False)
    s1: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.time.size

    @property
    def baseline_cumhaz(self):
        """(jump times, cumulative hazard at z = 0)."""
        return self.event_times, np.cumsum(self.hazard_increments) * np.exp(-self.center @ self.beta)

    @property
    def zbar(self):
        return self.s1 / self.s0[:, None]

    def _lp(self, Z):
        Z = np.asarray(Z, dtype=float)
        if self.beta.size == 0:
            return np.zeros(Z.shape[:-1]) if Z.ndim else 0.0
        return (Z - self.center) @ self.beta

    def cumhaz0(self, t):
        return _step(self.event_times, np.cumsum(self.hazard_increments), t, 0.0)

    def survival(self, t, Z=None):
        t = np.asarray(t, dtype=float)
        if Z is None:
            Z = np.zeros(t.shape + (self.beta.size,))
        return np.exp(-self.cumhaz0(t) * np.exp(self._lp(Z)))

    def _breslow_b(self, t):
        b = np.cumsum(self.zbar * self.hazard_increments[:, None], axis=0)
        idx = np.searchsorted(self.event_times, t, side="right") - 1
        out = np.zeros(np.shape(t) + (self.active.sum(),))
        ok = idx >= 0
        out[ok] = b[idx[ok]]
        return out

    def _solve(self, v):
        try:
            return np.linalg.solve(self.information / self.n, v)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError("information not invertible") from exc

    def scores(self):
        """Per-subject martingale scores ``U_i`` (active columns); sum to the total score."""
        Z = self.Zc[:, self.active]
        r = np.exp(self.Zc @ self.beta)
        if not self.active.any():
            return np.zeros((self.n, 0))
        lam = np.cumsum(self.hazard_increments)
        b = np.cumsum(self.zbar * self.hazard_increments[:, None], axis=0)
        k = np.searchsorted(self.event_times, self.time, side="right") - 1
        lam_x = np.where(k >= 0, lam[np.clip(k, 0, None)], 0.0)
        b_x = np.where((k >= 0)[:, None], b[np.clip(k, 0, None)], 0.0)
        zbar_x = self.zbar[np.clip(np.searchsorted(self.event_times, self.time), 0, len(self.event_times) - 1)]
        return self.event[:, None] * (Z - zbar_x) - r[:, None] * (Z * lam_x[:, None] - b_x)

    def influence_functional(self, t, Z, coef):
        t = np.asarray(t, dtype=float).ravel()
        coef = np.asarray(coef, dtype=float).ravel()
        Z = np.asarray(Z, dtype=float).reshape(t.size, -1)
        if t.size == 0:
            return np.zeros(self.n)
        Zc = Z - self.center
        rz = np.exp(Zc @ self.beta)
        w = -coef * self.survival(t, Z) * rz
        h = _reverse_weight(t, w, self.event_times) / self.s0
        cum = np.cumsum(h * self.hazard_increments)
        r = np.exp(self.Zc @ self.beta)
        out = _martingale_integral(self.time, self.event, r, self.event_times, h, cum)
        if self.active.any():
            v = (self.cumhaz0(t)[:, None] * Zc[:, self.active] - self._breslow_b(t)) * w[:, None]
            out = out + self.scores() @ self._solve(v.sum(axis=0))
        return out

    def influence_pieces(self):
        """Scores ``U_i``, Breslow influence ``phi_i(t)`` and ``kappa_i(t, z)`` as closures.

        Direct (per-subject) evaluation, meant for inspection and testing; the
        estimators use :meth:`influence_functional`.
        """
        U = self.scores()
        AinvU = np.array([self._solve(u) for u in U]) if self.active.any() else U
        r = np.exp(self.Zc @ self.beta)
        jumps, dlam, s0 = self.event_times, self.hazard_increments, self.s0

        def phi(i, t):
            val = 0.0
            if self.event[i] and self.time[i] <= t:
                val += 1.0 / s0[np.searchsorted(jumps, self.time[i])]
            upto = jumps <= min(t, self.time[i])
            val -= r[i] * np.sum(dlam[upto] / s0[upto])
            if self.active.any():
                val -= self._breslow_b(np.asarray(t, dtype=float)) @ AinvU[i]
            return val

        def kappa(i, t, z):
            z = np.asarray(z, dtype=float)
            zc = (z - self.center)
            val = phi(i, t)
            if self.active.any():
                val += self.cumhaz0(t) * zc[self.active] @ AinvU[i]
            return -self.survival(t, z) * np.exp(zc @ self.beta) * val

        return U, phi, kappa


def _partial_likelihood(beta, time, event, Z):
    """Breslow log partial likelihood, gradient and negative Hessian (total scale)."""
    order = np.argsort(time, kind="mergesort")
    ts, es, Zs = time[order], event[order], Z[order]
    r = np.exp(Zs @ beta)
    S0 = np.cumsum(r[::-1])[::-1]
    S1 = np.cumsum((r[:, None] * Zs)[::-1], axis=0)[::-1]
    S2 = np.cumsum((r[:, None, None] * Zs[:, :, None] * Zs[:, None, :])[::-1], axis=0)[::-1]
    jump = np.unique(ts[es == 1])
    first = np.searchsorted(ts, jump, side="left")
    d = np.bincount(np.searchsorted(jump, ts[es == 1]), minlength=len(jump)).astype(float)
    s0, s1, s2 = S0[first], S1[first], S2[first]
    zbar = s1 / s0[:, None]
    ll = np.sum(Zs[es == 1] @ beta) - np.sum(d * np.log(s0))
    grad = Zs[es == 1].sum(axis=0) - (d[:, None] * zbar).sum(axis=0)
    info = np.einsum("k,kij->ij", d, s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :])
    return ll, grad, info, (jump, d, s0, s1, s2)


def fit_cox(samples=None, tol=1e-8, max_iter=50, *, time=None, event=None, Z=None):
    """Newton-Raphson with step halving on the Breslow partial likelihood.

    Accepts either a list of :class:`SurvivalSample` or raw arrays.  Constant
    covariate columns carry no information and are held at ``beta = 0``.
    """
    if samples is not None:
        time, event, Z = _unpack(samples)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    Z = np.asarray(Z, dtype=float).reshape(time.size, -1)
    if time.size == 0:
        raise ValueError("no samples")
    if event.sum() == 0:
        raise ValueError("no events to fit")
    p = Z.shape[1]
    center = Z.mean(axis=0) if p else np.zeros(0)
    Zc = Z - center
    scale = Zc.std(axis=0) if p else np.zeros(0)
    active = scale > 1e-12 * np.maximum(1.0, np.abs(center))
    if p and not active.all():
        warnings.warn("constant covariate column(s) held at beta = 0", RuntimeWarning, stacklevel=2)
    Za = Zc[:, active]
    beta_a = np.zeros(active.sum())
    ll, grad, info, _ = _partial_likelihood(beta_a, time, event, Za)
    converged = beta_a.size == 0
    it = 0
    for it in range(1, max_iter + 1):
        if beta_a.size == 0:
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise CoxConvergenceError("information not invertible during Newton iterations",
                                      beta_a.copy(), float(np.max(np.abs(grad))))
        lam = 1.0
        for _ in range(40):
            cand = beta_a + lam * step
            ll_new, g_new, i_new, _ = _partial_likelihood(cand, time, event, Za)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            lam /= 2.0
        moved = np.max(np.abs(cand - beta_a))
        beta_a, ll, grad, info = cand, ll_new, g_new, i_new
        if np.any(np.abs(beta_a) * scale[active] > 30.0):
            raise CoxConvergenceError("coefficients diverging (monotone likelihood)",
                                      beta_a.copy(), float(np.max(np.abs(grad))))
        if np.max(np.abs(grad)) <= tol and moved <= 1e-6 * (1.0 + np.max(np.abs(beta_a))):
            converged = True
            break
    score_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    if not converged:
        raise CoxConvergenceError(f"Newton did not converge in {max_iter} iterations",
                                  beta_a.copy(), score_norm)
    if beta_a.size and np.linalg.cond(info) > 1e12:
        raise SingularInformationError("information not invertible")
    beta = np.zeros(p)
    beta[active] = beta_a
    _, _, info, (jump, d, s0, s1, s2) = _partial_likelihood(beta_a, time, event, Za)
    n = time.size
    # keep the risk summaries at full length on the active columns, per-subject (1/n) scale
    return CoxFit(
        beta=beta, event_times=jump, hazard_increments=d / s0, center=center,
        information=info, converged=True, score_norm=score_norm, n_iter=it, active=active,
        time=time, event=event, Zc=Zc, s0=s0 / n, s1=s1 / n, s2=s2 / n,
    )


def cox_survival(fit, t, z):
    return float(fit.survival(np.asarray(t, dtype=float), np.asarray(z, dtype=float)))


def cox_influence_pieces(fit, samples=None):
    return fit.influence_pieces()


class ConstantSurvival:
    """``S(t) = 1``; the censoring model when no censoring is observed."""

    def __init__(self, n):
        self.n = n

    def survival(self, t, Z=None):
        return np.ones(np.shape(t))

    def influence_functional(self, t, Z, coef):
        return np.zeros(self.n)


class ExponentialMargin:
    """Covariate-free exponential fit ``S(t) = exp(-rate t)``, rate = events / exposure."""

    def __init__(self, time, event):
        self.time = np.asarray(time, dtype=float)
        self.event = np.asarray(event, dtype=int)
        self.n = self.time.size
        self.mean_exposure = self.time.mean()
        self.rate = self.event.sum() / self.time.sum()

    def survival(self, t, Z=None):
        return np.exp(-self.rate * np.asarray(t, dtype=float))

    def influence_functional(self, t, Z, coef):
        t = np.asarray(t, dtype=float).ravel()
        dS = -(np.asarray(coef, dtype=float).ravel() * t * self.survival(t)).sum()
        return dS * (self.event - self.rate * self.time) / self.mean_exposure


class WeibullPH:
    """Known Weibull proportional-hazards survival ``exp(-scale t^shape e^{lp})``.

    ``offset`` is a fixed linear-predictor shift (e.g. the treatment effect).
    Carries no sampling variability, so its influence functional is zero.
    """

    def __init__(self, scale, shape, coef, offset=0.0, n=0):
        self.scale = float(scale)
        self.shape = float(shape)
        self.coef = np.asarray(coef, dtype=float)
        self.offset = float(offset)
        self.n = n

    def cumhaz(self, t, Z):
        t = np.asarray(t, dtype=float)
        lp = self.offset + (np.asarray(Z, dtype=float) @ self.coef if self.coef.size else 0.0)
        return self.scale * t ** self.shape * np.exp(lp)

    def survival(self, t, Z=None):
        return np.exp(-self.cumhaz(t, Z))

    def density(self, t, Z):
        t = np.asarray(t, dtype=float)
        lp = self.offset + np.asarray(Z, dtype=float) @ self.coef
        with np.errstate(divide="ignore"):  # infinite at t = 0 when shape < 1
            return self.scale * self.shape * t ** (self.shape - 1) * np.exp(lp) * self.survival(t, Z)

    def quantile(self, v, Z):
        """Time at which survival equals ``v``."""
        lp = self.offset + np.asarray(Z, dtype=float) @ self.coef
        return (-np.log(v) / (self.scale * np.exp(lp))) ** (1.0 / self.shape)

    def influence_functional(self, t, Z, coef):
        return np.zeros(self.n)


def fit_censoring(time, censored, Z, model="km"):
    """Censoring survival model ``G`` for one arm: ``'km'`` or ``'cox'``."""
    censored = np.asarray(censored, dtype=int)
    if censored.sum() == 0:
        return ConstantSurvival(len(censored)) if model == "cox" else KaplanMeierCurve(time, censored)
    if model == "km":
        return KaplanMeierCurve(time, censored)
    if model == "cox":
        return fit_cox(time=time, event=censored, Z=Z)
    raise ValueError(f"unknown censoring model {model!r}")
