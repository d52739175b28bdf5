import math

import numpy as np
import pytest

from sqtunnel.ammonia import (
    NU_EXP_GHZ, AmmoniaConfig, SpectroscopicTargets, barrier_mev, doublet_point, fit_rm_parameters,
    inversion_frequency, locate_barrier, model_splittings, ratio_scan, run_ammonia_pipeline, scan_spread,
    stopping_rule_scan,
)
from sqtunnel.errors import DomainError, FitFailure, OrderingError, StageError
from sqtunnel.potentials import RosenMorseDouble, rm_derived_geometry

TARGETS = SpectroscopicTargets(0.8, 33.0, 950.0)


@pytest.mark.parametrize("tau_ps, ghz", [(13.4578, 23.65), (1000 / math.pi, 1.0), (13.86, 22.97)])
def test_inversion_frequency(tau_ps, ghz):
    assert inversion_frequency(tau_ps) == pytest.approx(ghz, abs=5e-3)


def test_inversion_frequency_domain():
    with pytest.raises(DomainError):
        inversion_frequency(0.0)


class TestTargets:
    def test_ordering(self):
        with pytest.raises(OrderingError):
            SpectroscopicTargets(40.0, 33.0, 950.0)
        with pytest.raises(DomainError):
            SpectroscopicTargets(-0.8, 33.0, 950.0)

    def test_model_splittings_consistent(self, nh3_units):
        m = model_splittings(RosenMorseDouble(398.0, 2810.0, 0.17, 2.22), nh3_units)
        w = m.levels
        assert np.all(np.diff(w) > 0)
        assert (m.delta_e0, m.delta_e1, m.pair_gap) == (w[1] - w[0], w[3] - w[2], w[3] - w[0])
        assert m.delta_e0 == pytest.approx(0.78229256, rel=1e-6)


@pytest.fixture(scope="module")
def fit():
    return fit_rm_parameters(TARGETS)


class TestFit:
    def test_ground_splitting_matched(self, fit):
        assert fit.mode == "splitting"
        assert fit.potential.A == 398.0
        assert fit.model.delta_e0 == pytest.approx(0.8, rel=1e-6)
        assert fit.potential.B == pytest.approx(2797.25, abs=0.05)
        assert fit.to_dict()["B"] == fit.potential.B

    def test_idempotent(self, nh3_units):
        # fitting to the splitting a potential produces returns that potential
        m = model_splittings(RosenMorseDouble(398.0, 2810.0, 0.17, 2.22), nh3_units)
        refit = fit_rm_parameters(SpectroscopicTargets(m.delta_e0, 33.0, 950.0))
        assert refit.potential.B == pytest.approx(2810.0, rel=1e-8)

    def test_larger_splitting_means_lower_barrier(self, fit):
        wide = fit_rm_parameters(SpectroscopicTargets(1.6, 33.0, 950.0))
        assert wide.model.delta_e0 == pytest.approx(1.6, rel=1e-6)
        assert barrier_mev(wide.potential) < barrier_mev(fit.potential)

    def test_unreachable_target(self):
        with pytest.raises(FitFailure) as info:
            fit_rm_parameters(SpectroscopicTargets(50.0, 60.0, 950.0))
        assert info.value.best["A"] == 398.0

    def test_bad_options(self):
        with pytest.raises(DomainError):
            fit_rm_parameters(TARGETS, mode="simplex")
        with pytest.raises(DomainError):
            fit_rm_parameters(TARGETS, A_anchor=2000.0)
        with pytest.raises(DomainError):
            fit_rm_parameters(TARGETS, B_bounds=(3000.0, 2200.0))

    @pytest.mark.slow
    def test_weighted_mode(self):
        fit = fit_rm_parameters(TARGETS, mode="weighted", grid_points=3001)
        assert fit.mode == "weighted"
        assert abs(fit.residuals[0]) < 1e-3
        assert fit.objective == pytest.approx(float(np.dot([100, 1, 1], fit.residuals**2)))


class TestBarrierScans:
    @pytest.mark.parametrize("mev", [39.5, 98.0, 286.5])
    def test_locate_barrier(self, mev):
        B = locate_barrier(mev)
        assert barrier_mev(RosenMorseDouble(398.0, B, 0.17, 2.22)) == pytest.approx(mev, rel=1e-10)

    def test_published_points(self):
        # the lowest height sits at the lower end of the B sweep; the highest is 71.6 % of the well depth
        assert locate_barrier(39.5) == pytest.approx(680.476, abs=1e-3)
        geo = rm_derived_geometry(RosenMorseDouble(398.0, locate_barrier(286.5), 0.17, 2.22))
        assert geo["V0"] / geo["VD"] == pytest.approx(0.716, abs=5e-4)

    def test_unreachable_height(self):
        with pytest.raises(DomainError):
            locate_barrier(-5.0)

    def test_ratio_scan_rows(self, nh3_units):
        rows = ratio_scan([1500.0, 2810.0], units=nh3_units)
        assert [r["B"] for r in rows] == [1500.0, 2810.0]
        for r in rows:
            assert r["ratio"] == pytest.approx(0.5 * r["period"] / r["tau_bar"])
            assert r["delta_e"] == pytest.approx(r["E1"] - r["E0"])
        assert abs(rows[1]["ratio"] - math.pi / 2) < abs(rows[0]["ratio"] - math.pi / 2)

    def test_stopping_rule(self, nh3_units):
        pt = doublet_point(RosenMorseDouble(398.0, 2810.0, 0.17, 2.22), nh3_units)
        rows = stopping_rule_scan(pt, 11)
        assert rows[0]["x_f"] == pt.turning.b_inner and rows[0]["tau_bar"] == pt.tau_bar
        assert rows[-1]["x_f"] == pytest.approx(rm_derived_geometry(pt.potential)["x0"])
        assert np.all(np.diff([r["tau_bar"] for r in rows]) > 0)
        assert 0 < scan_spread(rows) < 0.05


class TestPipeline:
    def test_default_report(self, ammonia_report):
        rep = ammonia_report
        assert rep.fit is not None and rep.levels[0].delta_e == pytest.approx(0.8, rel=1e-6)
        assert rep.tau_bar == pytest.approx(13.275, abs=1e-3)
        assert rep.nu_sq == pytest.approx(inversion_frequency(rep.tau_bar))
        assert rep.nu_exp == NU_EXP_GHZ
        assert rep.ratio == pytest.approx(math.pi / 2, rel=2e-3)
        d = rep.to_dict()
        assert d["nu_sq_vs_exp"] == pytest.approx(rep.nu_sq / 23.79 - 1)
        assert d["ensemble"] is None and len(d["config_digest"]) == 64

    def test_fixed_parameters_skip_fit(self):
        rep = run_ammonia_pipeline(AmmoniaConfig(A=398.0, B=2810.0))
        assert rep.fit is None
        assert rep.tau_bar == pytest.approx(13.5754, abs=1e-3)

    def test_ensemble_stage(self):
        cfg = AmmoniaConfig(A=398.0, B=2810.0, ensemble_n=200, ensemble_dt_ps=1e-4, workers=1)
        rep = run_ammonia_pipeline(cfg)
        assert rep.ensemble["n"] + rep.ensemble["timed_out"] == 200
        assert rep.ensemble["mean"] == pytest.approx(rep.tau_bar, rel=0.25)
        assert rep.tail["n_exceed"] >= 100

    def test_config_validation(self):
        with pytest.raises(DomainError):
            AmmoniaConfig(A=398.0)
        with pytest.raises(DomainError):
            AmmoniaConfig(ensemble_n=-1)
        assert "workers" not in AmmoniaConfig(workers=3).to_dict()

    @pytest.mark.parametrize("cfg, stage, cause", [
        (AmmoniaConfig(A=900.0, B=400.0), "potential", DomainError),
        (AmmoniaConfig(targets=SpectroscopicTargets(50.0, 60.0, 950.0)), "fit", FitFailure),
    ])
    def test_stage_errors(self, cfg, stage, cause):
        with pytest.raises(StageError) as info:
            run_ammonia_pipeline(cfg)
        assert info.value.stage == stage and isinstance(info.value.cause, cause)
        assert str(info.value).startswith(f"[{stage}] {cause.__name__}")
