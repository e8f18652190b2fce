"""Regenerate the bundled synthetic long-format data set and its golden output.

    python scripts/make_example_data.py
"""

from pathlib import Path

import numpy as np

from winstat.cli import main, write_long_csv
from winstat.estimation import LongRow
from winstat.simulation import ScenarioConfig, calibrate_lambda_c, generate_arm, to_long_rows

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "winstat" / "data" / "windat_synthetic.csv"
GOLDEN = ROOT / "tests" / "golden" / "estimate_tau36.csv"
SEED = 20250101
ADMIN_END = 48.0


def build():
    cfg = ScenarioConfig(n_per_arm=300, target_censoring=0.40, seed=SEED)
    lam = calibrate_lambda_c(cfg, cfg.target_censoring)
    rng = np.random.default_rng(SEED)
    sims = [generate_arm(rng, cfg.n_per_arm, arm, cfg, lam) for arm in (1, 0)]
    rows = []
    for r in to_long_rows(sims, id_offset=1):
        cov = tuple(round(c, 4) for c in r.covariates)
        if r.event_type == 0:
            # administrative end of study at 48 months
            end = min(r.time, ADMIN_END)
            rows.append(LongRow(r.id, r.arm, 0, round(end, 4), int(r.time >= ADMIN_END), cov))
        elif r.time <= ADMIN_END:
            rows.append(r._replace(time=round(r.time, 4), covariates=cov))
    return rows


if __name__ == "__main__":
    DATA.parent.mkdir(parents=True, exist_ok=True)
    write_long_csv(build(), DATA, ["Z1", "Z2", "Z3"])
    main(["estimate", str(DATA), "--tau", "36", "--out", str(GOLDEN)])
