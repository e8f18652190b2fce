"""Monte Carlo harness: Weibull proportional-hazards margins joined by a survival
copula, exponential covariate-dependent censoring, and replication summaries
for the IPCW and m-IPCW estimators under working configurations M1-M4.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .copula import FAMILIES, CopulaSpec, copula_du
from .estimation import (
    LongRow,
    NuisanceBundle,
    estimate,
    fit_nuisances,
    restrict,
    summarize,
)
from .survival import WeibullPH

log = logging.getLogger(__name__)

CALIBRATION_TAU = 36.0
WORKING = {
    # censoring model, margin model, working copula ("dgp" = DGP family)
    "M1": ("cox", "cox", "dgp"),
    "M2": ("cox", "exponential", "independence"),
    "M3": ("km", "cox", "dgp"),
    "M4": ("km", "exponential", "independence"),
}


@dataclass(frozen=True)
class WeibullComponent:
    shape: float
    scale: float
    coef: tuple
    trt: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("Weibull shape and scale must be positive")

    def model(self, arm):
        return WeibullPH(self.scale, self.shape, self.coef, offset=self.trt * arm)


DEFAULT_COMPONENTS = (
    WeibullComponent(1.35, 0.0008, (0.35, 0.60, 0.25), -0.05),
    WeibullComponent(0.95, 0.0200, (0.30, 0.70, 0.20), -0.35),
)


@dataclass(frozen=True)
class ScenarioConfig:
    n_per_arm: int = 400
    components: tuple = DEFAULT_COMPONENTS
    dgp_copula: CopulaSpec = CopulaSpec("gumbel", 1.25)
    censor_coef: tuple = (0.80, 1.00, 0.65)
    lambda_c: float | None = None  # calibrated from target_censoring when None
    target_censoring: float = 0.20
    taus: tuple = (12.0, 24.0, 36.0)
    working: str = "M1"
    working_copula: str | None = None  # replaces the DGP family in M1/M3 when set
    methods: tuple = ("ipcw", "m-ipcw")
    reps: int = 100
    seed: int = 20240601
    eps: float = 1e-6
    conf_level: float = 0.95
    p_z1: float = 0.5
    p_z3: float = 0.4
    calibration_n: int = 200_000
    workers: int = 1

    def __post_init__(self):
        if self.n_per_arm < 2:
            raise ValueError("n_per_arm must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.working not in WORKING:
            raise ValueError(f"working configuration must be one of {sorted(WORKING)}")
        if self.working_copula is not None and self.working_copula not in FAMILIES:
            raise ValueError(f"unknown working copula {self.working_copula!r}")
        if not all(0 < t <= CALIBRATION_TAU for t in self.taus):
            raise ValueError("taus must lie in (0, 36]")
        if self.lambda_c is None and not 0.01 < self.target_censoring < 0.99:
            raise ValueError("target_censoring must lie in (0.01, 0.99)")
        if len(self.components) < 1:
            raise ValueError("need at least one component")

    @property
    def Q(self):
        return len(self.components)


# ---------------------------------------------------------------- copulas

def _positive_stable(rng, alpha, n):
    """Kanter's representation of a positive stable variable, E exp(-sM) = exp(-s^alpha)."""
    if alpha == 1.0:
        return np.ones(n)
    u = rng.uniform(0.0, math.pi, n)
    e = rng.exponential(size=n)
    return (np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
            * (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha))


def _conditional_inverse(spec, v1, w, iters=60):
    """Solve ``dC/du(v1, v) = w`` for ``v`` by vectorised bisection."""
    lo = np.zeros_like(v1)
    hi = np.ones_like(v1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = copula_du(spec, v1, np.clip(mid, 1e-300, 1.0 - 1e-16)) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_copula(rng, spec, n, dim):
    """``n`` draws of ``dim`` uniforms whose joint distribution function is the copula."""
    fam, th = spec.family, spec.theta
    e = rng.exponential(size=(n, dim))
    if fam == "independence" or (fam == "gumbel" and th == 1.0):
        return rng.uniform(size=(n, dim))
    if fam == "gumbel":
        m = _positive_stable(rng, 1.0 / th, n)[:, None]
        return np.exp(-((e / m) ** (1.0 / th)))
    if fam == "clayton":
        m = rng.gamma(1.0 / th, 1.0, n)[:, None]
        return (1.0 + e / m) ** (-1.0 / th)
    if dim == 2 and fam in ("frank", "plackett"):
        v1 = rng.uniform(size=n)
        w = rng.uniform(size=n)
        return np.column_stack([v1, _conditional_inverse(spec, v1, w)])
    if fam == "frank" and th > 0:
        p = -math.expm1(-th)
        m = rng.logseries(min(p, 1.0 - 1e-12), n)[:, None]
        return -np.log1p(-p * np.exp(-e / m)) / th
    raise ValueError(f"no {dim}-dimensional sampler for {spec}")


# -------------------------------------------------------------------- DGP

@dataclass
class SimulatedArm:
    Z: np.ndarray
    T: np.ndarray  # latent event times (n, Q)
    C: np.ndarray
    arm: int


def draw_covariates(rng, n, config):
    return np.column_stack([
        rng.binomial(1, config.p_z1, n),
        rng.uniform(size=n),
        rng.binomial(1, config.p_z3, n),
    ]).astype(float)


def draw_event_times(rng, Z, arm, config):
    V = sample_copula(rng, config.dgp_copula, Z.shape[0], config.Q)
    return np.column_stack([c.model(arm).quantile(V[:, q], Z) for q, c in enumerate(config.components)])


def censor_rate(Z, config, lambda_c):
    return lambda_c * np.exp(Z @ np.asarray(config.censor_coef))


def generate_arm(rng, n, arm, config, lambda_c):
    Z = draw_covariates(rng, n, config)
    T = draw_event_times(rng, Z, arm, config)
    C = rng.exponential(size=n) / censor_rate(Z, config, lambda_c)
    return SimulatedArm(Z, T, C, arm)


def gen_subject(rng, arm, config, lambda_c=None):
    """One subject: covariates, latent event times and censoring time."""
    lam = config.lambda_c if lambda_c is None else lambda_c
    if lam is None:
        raise ValueError("lambda_c is not set; calibrate it first")
    sim = generate_arm(rng, 1, arm, config, lam)
    return sim.Z[0], sim.T[0], float(sim.C[0])


def to_long_rows(sims, id_offset=0):
    """Long-format rows; the follow-up row carries the censoring time."""
    rows = []
    k = id_offset
    for sim in sims:
        for i in range(sim.Z.shape[0]):
            sid = str(k)
            k += 1
            cov = tuple(sim.Z[i])
            rows.append(LongRow(sid, sim.arm, 0, float(sim.C[i]), 0, cov))
            for q in range(sim.T.shape[1]):
                if sim.T[i, q] <= sim.C[i]:
                    rows.append(LongRow(sid, sim.arm, q + 1, float(sim.T[i, q]), 1, cov))
    return rows


def censoring_proportion(T, C, horizon=CALIBRATION_TAU):
    """Share of subjects censored before the horizon with some component still unresolved."""
    return float(np.mean(C < np.minimum(T.max(axis=1), horizon)))


def calibrate_lambda_c(config, target, seed=None, tol=0.005):
    """Baseline censoring rate giving censoring proportion ``target`` by month 36.

    Bisection on ``log lambda_c`` with common random numbers, so the achieved
    proportion is monotone in the rate and the result is deterministic.
    """
    if not 0.01 < target < 0.99:
        raise ValueError("target must lie in (0.01, 0.99)")
    ss = np.random.SeedSequence([config.seed if seed is None else seed, 0xCA11B])
    rng = np.random.default_rng(ss)
    n = config.calibration_n // 2
    T, E = [], []
    for arm in (1, 0):
        Z = draw_covariates(rng, n, config)
        T.append(draw_event_times(rng, Z, arm, config))
        E.append(rng.exponential(size=n) / censor_rate(Z, config, 1.0))
    T, E = np.vstack(T), np.concatenate(E)

    def prop(log_lam):
        return censoring_proportion(T, E / math.exp(log_lam))

    lo, hi = math.log(1e-7), math.log(10.0)
    p_lo, p_hi = prop(lo), prop(hi)
    if not p_lo < target < p_hi:
        raise RuntimeError(f"censoring target {target} outside [{p_lo:.3f}, {p_hi:.3f}] "
                           f"for lambda_c in [{math.exp(lo):.1e}, {math.exp(hi):.1e}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p = prop(mid)
        if abs(p - target) <= tol / 4:
            break
        lo, hi = (mid, hi) if p < target else (lo, mid)
    return math.exp(mid)


def true_bundle(config, lambda_c, n=(0, 0)):
    """Nuisance bundle holding the data-generating ``G``, margins and copula."""

    class _ExpCensor:
        def __init__(self, n_arm):
            self.n = n_arm

        def survival(self, t, Z):
            return np.exp(-np.asarray(t, dtype=float) * censor_rate(np.asarray(Z, dtype=float), config, lambda_c))

        def influence_functional(self, t, Z, coef):
            return np.zeros(self.n)

    return NuisanceBundle(
        censoring={1: _ExpCensor(n[0]), 0: _ExpCensor(n[1])},
        margins={a: [c.model(a) for c in config.components] for a in (1, 0)},
        copula={1: config.dgp_copula, 0: config.dgp_copula},
        eps=config.eps,
    )


# ------------------------------------------------------------ replications

@dataclass
class ReplicationResult:
    index: int
    values: dict = field(default_factory=dict)  # (tau, method) -> dict of numbers
    errors: dict = field(default_factory=dict)  # (tau, method) -> message


def run_replication(config, lambda_c, index, truth=None):
    """Simulate one data set and analyse it at every tau with every method."""
    from .variance import influence_rows, sandwich, delta_ci  # noqa: PLC0415

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    sims = [generate_arm(rng, config.n_per_arm, arm, config, lambda_c) for arm in (1, 0)]
    rows = to_long_rows(sims)
    censor, margin, cop = WORKING[config.working]
    if cop == "dgp":
        cop = config.working_copula or config.dgp_copula.family
    out = ReplicationResult(index)
    for tau in config.taus:
        records = restrict(rows, tau, range(1, config.Q + 1))
        bundles = {}
        for method in config.methods:
            key = (tau, method)
            try:
                need_event = method == "m-ipcw"
                if need_event not in bundles:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        bundles[need_event] = fit_nuisances(records, censor=censor, margin=margin, copula=cop,
                                                            eps=config.eps, need_event_model=need_event)
                bundle = bundles[need_event]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    comp = estimate(records, tau, method, bundle)
                    rows_ = influence_rows(records, comp, bundle)
                sw = sandwich(rows_, comp)
                nb, wr, wo = summarize(comp)
                ci = delta_ci(comp, sw, config.conf_level)
                rec = {"pi_t": comp.pi_t, "pi_c": comp.pi_c, "nb": nb, "wr": wr, "wo": wo,
                       "se_nb": sw.se_nb, "se_logwr": sw.se_logwr, "se_logwo": sw.se_logwo}
                if truth is not None:
                    tv = truth[tau]
                    for name, true in (("nb", tv.nb), ("wr", tv.wr), ("wo", tv.wo)):
                        lo, hi = ci[name]
                        rec["hit_" + name] = float(lo <= true <= hi)
                out.values[key] = rec
            except Exception as exc:  # counted, not fatal
                out.errors[key] = f"{type(exc).__name__}: {exc}"
    return out


def _run_chunk(args):
    config, lambda_c, indices, truth = args
    return [run_replication(config, lambda_c, i, truth) for i in indices]


@dataclass
class SummaryRow:
    tau: float
    method: str
    estimand: str
    true_value: float
    rbias_pct: float
    mcsd: float
    ase: float
    coverage: float
    re: float
    n_ok: int


@dataclass
class MonteCarloSummary:
    config: ScenarioConfig
    lambda_c: float
    censoring_achieved: float
    rows: list
    failures: dict
    replications: list = field(repr=False, default_factory=list)

    def row(self, tau, method, estimand):
        for r in self.rows:
            if r.tau == tau and r.method == method and r.estimand == estimand:
                return r
        raise KeyError((tau, method, estimand))


def _summaries(config, truth, reps):
    rows = []
    mcsd_log = {}
    for tau in config.taus:
        for method in config.methods:
            recs = [r.values[(tau, method)] for r in reps if (tau, method) in r.values]
            for est in ("NB", "WR", "WO"):
                key = est.lower()
                vals = np.array([r[key] for r in recs])
                se = np.array([r["se_nb" if key == "nb" else "se_log" + key] for r in recs])
                on_scale = vals if key == "nb" else np.log(vals)
                true = getattr(truth[tau], key) if truth else float("nan")
                n_ok = len(recs)
                mcsd = float(np.std(on_scale, ddof=1)) if n_ok > 1 else 0.0
                mcsd_log[(tau, method, est)] = mcsd
                rows.append(SummaryRow(
                    tau, method, est, true,
                    rbias_pct=100.0 * (vals.mean() - true) / true if n_ok else float("nan"),
                    mcsd=mcsd,
                    ase=float(se.mean()) if n_ok else float("nan"),
                    coverage=float(np.mean([r["hit_" + key] for r in recs])) if n_ok and truth else float("nan"),
                    re=float("nan"), n_ok=n_ok))
    # RE compares the two methods, so it is reported on the m-IPCW row only
    for r in rows:
        if r.method != "m-ipcw":
            continue
        a, b = mcsd_log.get((r.tau, "ipcw", r.estimand)), mcsd_log.get((r.tau, "m-ipcw", r.estimand))
        if a is not None and b:
            r.re = a * a / (b * b)
    return rows


def run_scenario(config, truth=None, keep_replications=False):
    """Run ``config.reps`` replications and summarise them.

    ``truth`` maps tau to a truth result (computed from the DGP when omitted).
    Replications are split into contiguous index blocks across worker
    processes; each replication seeds its own generator from (seed, index),
    so results do not depend on the number of workers.
    """
    from .truth import true_values  # noqa: PLC0415

    lambda_c = config.lambda_c
    if lambda_c is None:
        lambda_c = calibrate_lambda_c(config, config.target_censoring)
    if truth is None:
        truth = {tau: true_values(config, tau) for tau in config.taus}
    workers = max(1, min(config.workers, os.cpu_count() or 1, config.reps))
    indices = list(range(config.reps))
    if workers == 1:
        reps = _run_chunk((config, lambda_c, indices, truth))
    else:
        blocks = [b.tolist() for b in np.array_split(indices, workers * 4) if len(b)]
        with ProcessPoolExecutor(workers) as ex:
            reps = [r for chunk in ex.map(_run_chunk, [(config, lambda_c, b, truth) for b in blocks])
                    for r in chunk]
    reps.sort(key=lambda r: r.index)
    failures = {}
    for r in reps:
        for key, msg in r.errors.items():
            failures.setdefault(key, []).append((r.index, msg))
    for key, lst in failures.items():
        log.warning("%d replications failed for tau=%s method=%s (first: %s)", len(lst), key[0], key[1], lst[0][1])
    # achieved censoring on an independent validation draw
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    val = [generate_arm(rng, 20_000, arm, config, lambda_c) for arm in (1, 0)]
    achieved = censoring_proportion(np.vstack([v.T for v in val]), np.concatenate([v.C for v in val]))
    return MonteCarloSummary(config, lambda_c, achieved, _summaries(config, truth, reps), failures,
                             reps if keep_replications else [])


def with_overrides(config, **kw):
    return replace(config, **kw)
