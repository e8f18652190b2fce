import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from winstat.copula import CopulaSpec, copula_cdf, frank_tau
from winstat.estimation import restrict
from winstat.simulation import (
    DEFAULT_COMPONENTS,
    ScenarioConfig,
    _run_chunk,
    calibrate_lambda_c,
    censoring_proportion,
    draw_covariates,
    draw_event_times,
    generate_arm,
    run_replication,
    run_scenario,
    sample_copula,
    to_long_rows,
    true_bundle,
    with_overrides,
)
from winstat.truth import true_values


def kendall(x, y):
    return stats.kendalltau(x, y)[0]


class TestCopulaSampler:
    @pytest.mark.parametrize("spec, tau", [
        (CopulaSpec("independence"), 0.0),
        (CopulaSpec("gumbel", 2.0), 0.5),                  # 1 - 1/theta
        (CopulaSpec("clayton", 1.0), 1.0 / 3.0),           # theta / (theta + 2)
        (CopulaSpec("frank", 5.0), frank_tau(5.0)),
        (CopulaSpec("plackett", 4.0), None),
    ])
    def test_kendall_tau(self, spec, tau):
        rng = np.random.default_rng(1)
        v = sample_copula(rng, spec, 100_000, 2)
        assert v.shape == (100_000, 2)
        assert np.all((v > 0) & (v < 1))
        if tau is not None:
            assert abs(kendall(v[:, 0], v[:, 1]) - tau) < 0.01

    @pytest.mark.parametrize("spec", [CopulaSpec("gumbel", 1.6), CopulaSpec("plackett", 4.0),
                                      CopulaSpec("frank", -3.0), CopulaSpec("clayton", 0.5)])
    def test_joint_cdf(self, spec):
        # [DERIVED] empirical P(V1 <= a, V2 <= b) against the closed form
        rng = np.random.default_rng(2)
        v = sample_copula(rng, spec, 200_000, 2)
        for a, b in ((0.3, 0.6), (0.5, 0.5), (0.8, 0.2)):
            emp = np.mean((v[:, 0] <= a) & (v[:, 1] <= b))
            se = np.sqrt(emp * (1 - emp) / v.shape[0])
            assert abs(emp - float(copula_cdf(spec, a, b))) < 4 * se

    def test_gumbel_one_is_uniform(self):
        v = sample_copula(np.random.default_rng(3), CopulaSpec("gumbel", 1.0), 50_000, 2)
        assert abs(kendall(v[:, 0], v[:, 1])) < 0.01

    def test_no_sampler(self):
        with pytest.raises(ValueError):
            sample_copula(np.random.default_rng(0), CopulaSpec("plackett", 2.0), 10, 3)


class TestDGP:
    def test_marginal_survival(self):
        # [DERIVED] P(T1 > 12) by quadrature over the covariate law
        cfg = ScenarioConfig()
        rng = np.random.default_rng(4)
        n = 100_000
        for arm in (1, 0):
            Z = draw_covariates(rng, n, cfg)
            T = draw_event_times(rng, Z, arm, cfg)
            m = DEFAULT_COMPONENTS[0].model(arm)
            exact = 0.0
            for z1, p1 in ((0, 0.5), (1, 0.5)):
                for z3, p3 in ((0, 0.6), (1, 0.4)):
                    f = lambda z2: float(m.survival(12.0, np.array([z1, z2, z3])))  # noqa: E731
                    exact += p1 * p3 * integrate.quad(f, 0, 1)[0]
            emp = np.mean(T[:, 0] > 12.0)
            assert abs(emp - exact) < 4 * np.sqrt(exact * (1 - exact) / n)

    def test_long_rows(self):
        cfg = ScenarioConfig(n_per_arm=20, lambda_c=0.005)
        rng = np.random.default_rng(5)
        sims = [generate_arm(rng, 20, a, cfg, 0.005) for a in (1, 0)]
        rows = to_long_rows(sims)
        records = restrict(rows, 24.0, (1, 2))
        assert len(records) == 40
        T = np.vstack([s.T for s in sims])
        C = np.concatenate([s.C for s in sims])
        by_id = {r.subject_id: r for r in records}
        for k in range(40):
            r = by_id[str(k)]
            for q in range(2):
                assert r.y_tilde[q] == pytest.approx(min(T[k, q], C[k], 24.0))
                assert r.delta[q] == int(T[k, q] <= min(C[k], 24.0))

    def test_censoring_proportion(self):
        T = np.array([[10.0, 40.0], [5.0, 6.0], [50.0, 60.0]])
        C = np.array([20.0, 7.0, 30.0])
        # censored before month 36 with an unresolved component: subjects 1 and 3
        assert censoring_proportion(T, C) == pytest.approx(2 / 3)


@pytest.fixture(scope="module")
def cfg():
    return ScenarioConfig(calibration_n=100_000)


@pytest.fixture(scope="module")
def small():
    cfg = ScenarioConfig(n_per_arm=60, lambda_c=0.003, taus=(24.0,), reps=4, seed=11)
    return cfg, {24.0: true_values(cfg, 24.0)}


class TestCalibration:
    def test_target_met(self, cfg):
        lam = calibrate_lambda_c(cfg, 0.20)
        rng = np.random.default_rng(6)
        sims = [generate_arm(rng, 100_000, a, cfg, lam) for a in (1, 0)]
        achieved = censoring_proportion(np.vstack([s.T for s in sims]), np.concatenate([s.C for s in sims]))
        assert 0.19 <= achieved <= 0.21

    def test_deterministic_and_monotone(self, cfg):
        a = calibrate_lambda_c(cfg, 0.40)
        assert calibrate_lambda_c(cfg, 0.40) == a
        assert calibrate_lambda_c(cfg, 0.20) < a < calibrate_lambda_c(cfg, 0.80)

    def test_bad_target(self, cfg):
        with pytest.raises(ValueError):
            calibrate_lambda_c(cfg, 1.0)


class TestHarness:
    def test_seeded_replications(self, small):
        cfg, truth = small
        a = run_replication(cfg, cfg.lambda_c, 2, truth)
        b = run_replication(cfg, cfg.lambda_c, 2, truth)
        c = run_replication(cfg, cfg.lambda_c, 3, truth)
        assert a.values == b.values
        assert a.values != c.values

    def test_blocking_does_not_matter(self, small):
        # worker processes receive contiguous index blocks
        cfg, truth = small
        whole = _run_chunk((cfg, cfg.lambda_c, [0, 1, 2], truth))
        split = _run_chunk((cfg, cfg.lambda_c, [0, 1], truth)) + _run_chunk((cfg, cfg.lambda_c, [2], truth))
        assert [r.values for r in whole] == [r.values for r in split]

    def test_summary(self, small):
        cfg, truth = small
        s = run_scenario(cfg, truth, keep_replications=True)
        assert len(s.replications) == 4
        assert len(s.rows) == 2 * 3
        for method in ("ipcw", "m-ipcw"):
            r = s.row(24.0, method, "NB")
            vals = [rep.values[(24.0, method)]["nb"] for rep in s.replications
                    if (24.0, method) in rep.values]
            assert r.n_ok == len(vals)
            assert_allclose(r.mcsd, np.std(vals, ddof=1))
            assert r.true_value == truth[24.0].nb
            assert 0.0 <= r.coverage <= 1.0
        ipcw, mi = s.row(24.0, "ipcw", "WR"), s.row(24.0, "m-ipcw", "WR")
        assert_allclose(mi.re, ipcw.mcsd ** 2 / mi.mcsd ** 2)
        assert np.isnan(ipcw.re)
        with pytest.raises(KeyError):
            s.row(12.0, "ipcw", "NB")

    def test_single_replication(self, small):
        cfg, truth = small
        s = run_scenario(with_overrides(cfg, reps=1), truth)
        r = s.row(24.0, "ipcw", "NB")
        assert r.n_ok == 1 and r.mcsd == 0.0

    def test_true_bundle(self):
        cfg = ScenarioConfig()
        b = true_bundle(cfg, 0.002, n=(3, 4))
        z = np.array([1.0, 0.5, 0.0])
        assert b.G(1, np.array(10.0), z) == pytest.approx(np.exp(-10 * 0.002 * np.exp(0.8 + 0.5)))
        assert b.censoring[1].influence_functional(np.array([1.0]), z[None], np.array([1.0])).shape == (3,)
        assert b.copula[0] == cfg.dgp_copula


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_per_arm=1), dict(reps=0), dict(working="M9"),
                                    dict(taus=(40.0,)), dict(target_censoring=1.0), dict(components=())])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ScenarioConfig(**kw)

    def test_overrides(self):
        cfg = with_overrides(ScenarioConfig(), reps=3)
        assert cfg.reps == 3 and ScenarioConfig().reps == 100

    def test_weibull_validation(self):
        from winstat.simulation import WeibullComponent

        with pytest.raises(ValueError):
            WeibullComponent(0.0, 1.0, (0, 0, 0), 0.0)

    def test_working_configs_share_data(self):
        # same seed -> same simulated data for every working configuration
        cfg = ScenarioConfig(n_per_arm=100, lambda_c=0.003, taus=(12.0,), methods=("ipcw",))
        a = run_replication(cfg, 0.003, 0)
        b = run_replication(with_overrides(cfg, working="M2"), 0.003, 0)
        assert_array_equal(a.values[(12.0, "ipcw")]["nb"], b.values[(12.0, "ipcw")]["nb"])
