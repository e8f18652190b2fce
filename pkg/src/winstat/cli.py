"""Command-line interface: ``winstat estimate | simulate | truth``."""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from scipy.stats import norm

from .copula import FAMILIES, CopulaSpec
from .estimation import DEFAULT_EPS, LongRow, estimate, fit_nuisances, restrict
from .simulation import DEFAULT_COMPONENTS, ScenarioConfig, WeibullComponent, run_scenario
from .truth import true_values
from .variance import influence_rows, sandwich

log = logging.getLogger("winstat")

REQUIRED_COLUMNS = ["id", "A", "time", "status", "event_type"]
RESULT_COLUMNS = ["tau", "method", "copula", "estimand", "estimate", "se", "lower", "upper"]
METHOD_LABEL = {"ipcw": "IPCW", "m-ipcw": "m-IPCW"}


class InputError(ValueError):
    pass


# --------------------------------------------------------------------- data

def read_long_csv(path):
    """Parse a long-format CSV into :class:`LongRow` tuples (covariates = columns after ``event_type``)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if header[:5] != REQUIRED_COLUMNS:
            raise InputError(f"{path}: header must start with {','.join(REQUIRED_COLUMNS)}")
        cov_names = header[5:]
        rows = []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}:{line}: expected {len(header)} fields, got {len(rec)}")
            if any(not c.strip() for c in rec):
                raise InputError(f"{path}:{line}: missing value")
            try:
                arm = int(rec[1])
                etype = int(rec[4])
                status = int(rec[3])
                time = float(rec[2])
                cov = tuple(float(c) for c in rec[5:])
            except ValueError as exc:
                raise InputError(f"{path}:{line}: {exc}") from None
            if arm not in (0, 1) or status not in (0, 1) or etype < 0 or not time >= 0:
                raise InputError(f"{path}:{line}: invalid arm, status, event_type or time")
            rows.append(LongRow(rec[0].strip(), arm, etype, time, status, cov))
    return rows, cov_names


def records_to_rows(records):
    """Long-format rows that restrict back to the same records."""
    rows = []
    for r in records:
        rows.append(LongRow(r.subject_id, r.arm, 0, r.followup, 0 if r.censored else 1, r.covariates))
        for q, (y, d) in enumerate(zip(r.y_tilde, r.delta), start=1):
            if d:
                rows.append(LongRow(r.subject_id, r.arm, q, y, 1, r.covariates))
    return rows


def write_long_csv(rows, path_or_fh, cov_names):
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS + list(cov_names))
        for r in rows:
            w.writerow([r.id, r.arm, repr(float(r.time)), r.status, r.event_type] + [repr(float(c)) for c in r.covariates])
    finally:
        if own:
            fh.close()


# ------------------------------------------------------------------ output

def _fmt(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    if isinstance(x, float):
        s = f"{x:.3f}"
        return "0.000" if s == "-0.000" else s
    return str(x)


def _tau_label(tau):
    return f"{tau:g}"


def emit(rows, columns, out_path=None, header_comment=None, stream=None):
    """Fixed-width table on ``stream``; CSV at ``out_path``."""
    stream = stream or sys.stdout
    cells = [[_fmt(r[c]) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[k]) for row in cells]) for k, c in enumerate(columns)]
    if header_comment:
        stream.write(f"# {header_comment}\n")
    stream.write("  ".join(c.rjust(w) for c, w in zip(columns, widths)) + "\n")
    for row in cells:
        stream.write("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n")
    if out_path:
        with open(out_path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(cells)


# ----------------------------------------------------------------- estimate

def _split(s, conv=str):
    return [conv(x.strip()) for x in str(s).split(",") if x.strip()]


def analyse(rows, taus, methods=("ipcw", "m-ipcw"), censor="cox", margin="cox", copulas=("gumbel",),
            priority=(1, 2), eps=DEFAULT_EPS, conf_level=0.95):
    """Result rows (dicts with :data:`RESULT_COLUMNS`) for every tau, method and copula."""
    out = []
    for tau in taus:
        records = restrict(rows, tau, priority)
        base = fit_nuisances(records, censor=censor, eps=eps, need_event_model=False)
        for method in methods:
            cops = [None] if method != "m-ipcw" else list(copulas)
            for cop in cops:
                label = "--" if cop is None else cop.capitalize()
                bundle = base if cop is None else fit_nuisances(records, censor=censor, margin=margin,
                                                                copula=cop, eps=eps)
                comp = estimate(records, tau, method, bundle)
                sw = sandwich(influence_rows(records, comp, bundle), comp)
                vals = _summary_rows(comp, sw, conf_level, f"tau={_tau_label(tau)} {METHOD_LABEL[method]}")
                for est in ("NB", "WR", "WO"):
                    e, se, lo, hi = vals[est]
                    out.append({"tau": _tau_label(tau), "method": METHOD_LABEL[method], "copula": label,
                                "estimand": est, "estimate": e, "se": se, "lower": lo, "upper": hi})
    return out


def _summary_rows(comp, sw, conf_level, label):
    """(estimate, se, lower, upper) per estimand; NA where the summary is undefined."""
    z = norm.ppf(0.5 + conf_level / 2)
    nb = comp.pi_t - comp.pi_c
    vals = {"NB": (nb, sw.se_nb, nb - z * sw.se_nb, nb + z * sw.se_nb)}
    na = (math.nan,) * 4
    if comp.pi_c > 0 and comp.pi_t > 0:
        wr = comp.pi_t / comp.pi_c
        vals["WR"] = (wr, sw.se_logwr, wr * math.exp(-z * sw.se_logwr), wr * math.exp(z * sw.se_logwr))
    else:
        print(f"note: {label}: win ratio undefined (pi_t={comp.pi_t:.3g}, pi_c={comp.pi_c:.3g})", file=sys.stderr)
        vals["WR"] = na
    if abs(nb) < 1:
        wo = (1 + nb) / (1 - nb)
        vals["WO"] = (wo, sw.se_logwo, wo * math.exp(-z * sw.se_logwo), wo * math.exp(z * sw.se_logwo))
    else:
        print(f"note: {label}: win odds undefined (|NB| >= 1)", file=sys.stderr)
        vals["WO"] = na
    return vals


def cmd_estimate(args):
    rows, cov_names = read_long_csv(args.csv)
    if args.covariates:
        keep = _split(args.covariates)
        missing = [c for c in keep if c not in cov_names]
        if missing:
            raise InputError(f"unknown covariate columns: {', '.join(missing)}")
        idx = [cov_names.index(c) for c in keep]
        rows = [r._replace(covariates=tuple(r.covariates[k] for k in idx)) for r in rows]
        cov_names = keep
    taus = _split(args.tau, float)
    methods = _split(args.method)
    for m in methods:
        if m not in METHOD_LABEL:
            raise InputError(f"unknown method {m!r}")
    copulas = _split(args.copula)
    for c in copulas:
        if c not in FAMILIES:
            raise InputError(f"unknown copula {c!r}")
    priority = _split(args.priority, int)
    if args.dump_records:
        recs = [r for tau in taus for r in restrict(rows, tau, priority)]
        write_long_csv(records_to_rows(recs), args.dump_records, cov_names)
    with warnings.catch_warnings():
        if not args.verbose:
            warnings.simplefilter("ignore")
        result = analyse(rows, taus, methods, args.censor, args.margin, copulas, priority, args.eps, args.conf_level)
    emit(result, RESULT_COLUMNS, args.out)
    return 0


# ------------------------------------------------------------ config files

SCENARIO_KEYS = {
    "n_per_arm", "copula", "theta", "target_censoring", "lambda_c", "taus", "working", "working_copula",
    "methods", "reps",
    "seed", "eps", "conf_level", "workers", "calibration_n", "censor_coef", "p_z1", "p_z3", "components",
}
COMPONENT_KEYS = ("rho", "lambda", "beta", "beta_a")


def read_config(path, required=()):
    """Parse ``key = value`` lines into scenario dicts, one per ``[section]``.

    Keys above the first section header apply to every section.
    """
    text = Path(path).read_text()
    # keys before the first section are shared defaults, or the only scenario when there are no sections
    has_sections = any(line.strip().startswith("[") for line in text.splitlines())
    text = ("[DEFAULT]\n" if has_sections else "[scenario]\n") + text
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    scenarios = {}
    for name in cp.sections():
        sec = dict(cp[name])
        unknown = sorted(k for k in sec if k not in SCENARIO_KEYS and not _is_component_key(k))
        if unknown:
            raise InputError(f"{path} [{name}]: unknown keys: {', '.join(unknown)}")
        missing = [k for k in required if k not in sec]
        if missing:
            raise InputError(f"{path} [{name}]: missing required keys: {', '.join(missing)}")
        scenarios[name] = sec
    return scenarios


def _is_component_key(k):
    for prefix in COMPONENT_KEYS:
        rest = k[len(prefix):]
        if k.startswith(prefix) and rest.isdigit():
            return True
    return False


def scenario_from_dict(d):
    kw = {}
    ints = {"n_per_arm", "reps", "seed", "workers", "calibration_n"}
    floats = {"target_censoring", "lambda_c", "eps", "conf_level", "p_z1", "p_z3"}
    for k, v in d.items():
        if k in ints:
            kw[k] = int(v)
        elif k in floats:
            kw[k] = float(v)
    if "taus" in d:
        kw["taus"] = tuple(_split(d["taus"], float))
    if "methods" in d:
        kw["methods"] = tuple(_split(d["methods"]))
    if "working" in d:
        kw["working"] = d["working"].strip()
    if "working_copula" in d:
        kw["working_copula"] = d["working_copula"].strip()
    if "censor_coef" in d:
        kw["censor_coef"] = tuple(_split(d["censor_coef"], float))
    family = d.get("copula", "gumbel").strip()
    if family == "independence":
        kw["dgp_copula"] = CopulaSpec("independence")
    else:
        kw["dgp_copula"] = CopulaSpec(family, float(d.get("theta", 1.25)))
    q_max = int(d.get("components", len(DEFAULT_COMPONENTS)))
    comps = []
    for q in range(1, q_max + 1):
        base = DEFAULT_COMPONENTS[q - 1] if q <= len(DEFAULT_COMPONENTS) else None
        vals = {}
        for key, attr in (("rho", "shape"), ("lambda", "scale"), ("beta_a", "trt")):
            if f"{key}{q}" in d:
                vals[attr] = float(d[f"{key}{q}"])
            elif base is not None:
                vals[attr] = getattr(base, attr)
        if f"beta{q}" in d:
            vals["coef"] = tuple(_split(d[f"beta{q}"], float))
        elif base is not None:
            vals["coef"] = base.coef
        if len(vals) < 4:
            raise InputError(f"component {q}: needs rho{q}, lambda{q}, beta{q} and beta_a{q}")
        comps.append(WeibullComponent(**vals))
    kw["components"] = tuple(comps)
    return ScenarioConfig(**kw)


def cmd_truth(args):
    scenarios = read_config(args.config, required=("taus",))
    out = []
    seeds = []
    for name, d in scenarios.items():
        cfg = _config(d)
        seeds.append(str(cfg.seed))
        for tau in cfg.taus:
            tv = true_values(cfg, tau)
            row = {"scenario": name, "tau": _tau_label(tau), "copula": str(cfg.dgp_copula),
                   "pi_t": tv.pi_t, "pi_c": tv.pi_c, "NB": tv.nb, "WR": tv.wr, "WO": tv.wo}
            out.append(row)
    emit(out, ["scenario", "tau", "copula", "pi_t", "pi_c", "NB", "WR", "WO"], args.out,
         header_comment=f"seed={','.join(seeds)}")
    return 0


def cmd_simulate(args):
    scenarios = read_config(args.config, required=("taus", "reps"))
    out = []
    notes = []
    for name, d in scenarios.items():
        cfg = _config(d)
        if args.threads:
            cfg = replace(cfg, workers=args.threads)
        s = run_scenario(cfg)
        notes.append(f"{name}: seed={cfg.seed} lambda_c={s.lambda_c:.6g} censoring={s.censoring_achieved:.3f}")
        for r in s.rows:
            out.append({"scenario": name, "tau": _tau_label(r.tau), "method": METHOD_LABEL.get(r.method, r.method),
                        "estimand": r.estimand, "true": r.true_value, "rbias_pct": r.rbias_pct,
                        "mcsd": r.mcsd, "ase": r.ase, "coverage": r.coverage, "re": r.re, "n_ok": r.n_ok})
        for (tau, method), lst in s.failures.items():
            print(f"note: {name} tau={_tau_label(tau)} {method}: {len(lst)} failed replications", file=sys.stderr)
    emit(out, ["scenario", "tau", "method", "estimand", "true", "rbias_pct", "mcsd", "ase", "coverage", "re",
               "n_ok"], args.out, header_comment="; ".join(notes))
    return 0


def _config(d):
    try:
        return scenario_from_dict(d)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None


# --------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="winstat", description="Restricted-time win statistics under censoring.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate NB/WR/WO from a long-format CSV")
    e.add_argument("csv")
    e.add_argument("--tau", required=True, help="comma-separated restriction times")
    e.add_argument("--method", default="ipcw,m-ipcw")
    e.add_argument("--censor", choices=("km", "cox"), default="cox")
    e.add_argument("--margin", choices=("cox", "exponential"), default="cox")
    e.add_argument("--copula", default="gumbel", help="comma-separated working copula families")
    e.add_argument("--priority", default="1,2", help="event_type codes, highest priority first")
    e.add_argument("--covariates", default=None, help="covariate columns (default: all after event_type)")
    e.add_argument("--eps", type=float, default=DEFAULT_EPS)
    e.add_argument("--conf-level", type=float, default=0.95)
    e.add_argument("--seed", type=int, default=None, help="accepted for interface symmetry; estimation is deterministic")
    e.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")
    e.add_argument("--out", default=None, help="write the result table as CSV")
    e.add_argument("--dump-records", default=None, help="write the restricted records as long-format CSV")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario from a config file")
    s.add_argument("config")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("truth", help="true NB/WR/WO under the simulation DGP")
    t.add_argument("config")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_truth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError, ArithmeticError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
