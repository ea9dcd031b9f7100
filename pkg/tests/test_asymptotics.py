import math

import numpy as np
import pytest

from volterra_ldp.asymptotics import (
    EpsilonLadder,
    LimitLaw,
    closed_form_limits,
    default_ladder_values,
    exp_tight_statistics,
    limit_cond_cov_estimate,
    limit_cov_estimate,
    limit_cov_functional,
    limit_cov_path,
    limit_cross_estimate,
    limit_kernel_estimate,
    limit_path_cov_estimate,
    speed_exponent_fit,
)
from volterra_ldp.conditioning import FunctionalConditionalLaw, functional_gram
from volterra_ldp.exceptions import UnsupportedExampleError, ValidationError
from volterra_ldp.models import (
    Brownian,
    ConditioningSet,
    FBm,
    Indicator,
    IntegratedVolterra,
    LinearDecay,
    MFoldIBM,
    ProcessModel,
)
from volterra_ldp.numerics import quad_value

GSET = ConditioningSet((Indicator(), LinearDecay()), (0.0, 0.0))
SHORT = EpsilonLadder((1e-1, 1e-2, 1e-3))


def test_ladder_defaults_and_checks():
    vals = default_ladder_values()
    assert len(vals) == 7 and vals[0] == pytest.approx(0.1) and vals[-1] == pytest.approx(1e-4)
    with pytest.raises(ValidationError):
        EpsilonLadder((0.1, 0.2))
    with pytest.raises(ValidationError):
        EpsilonLadder((0.1, -1.0))
    with pytest.raises(ValidationError):
        EpsilonLadder((2.0, 1.0)).check_horizon(1.0)


def test_fbm_ratio_exact_at_every_eps():
    model = ProcessModel(FBm(0.75))
    est = limit_cov_estimate(model, 0.75, 1.0, 0.5, SHORT)
    np.testing.assert_allclose(est.ratios, FBm(0.75).covariance(1.0, 0.5), rtol=1e-8)
    assert est.converged


def test_mfold_kbar_converges():
    est = limit_cov_estimate(ProcessModel(MFoldIBM(1)), 1.0, 1.0, 1.0)
    assert est.converged
    assert est.extrapolation == pytest.approx(1.0, rel=1e-3)


def test_wrong_exponent_not_converged():
    est = limit_cov_estimate(ProcessModel(FBm(0.75)), 0.25, 1.0, 1.0)
    assert not est.converged
    assert est.ratios[-1] < est.ratios[0]


def test_cross_limits():
    fbm = limit_cross_estimate(ProcessModel(FBm(0.75)), Indicator(), 0.75, 1.0)
    assert np.all(np.diff(fbm.ratios) < 0) and fbm.ratios[-1] < 0.2
    m1 = ProcessModel(MFoldIBM(1))
    assert limit_cross_estimate(m1, Indicator(), 1.0, 1.0).extrapolation == pytest.approx(1.0, rel=1e-3)
    assert limit_cross_estimate(m1, LinearDecay(), 1.0, 1.0).extrapolation == pytest.approx(0.5, rel=1e-3)


def test_functional_limit_fbm_is_kbar():
    model = ProcessModel(FBm(0.75), 1.0, 1.0, 1.0)
    law = closed_form_limits("fbm", model, GSET, "functional")
    assert law.kbar(0.7, 0.3) == pytest.approx(model.covariance(0.7, 0.3))
    est = limit_cond_cov_estimate(FunctionalConditionalLaw(model, GSET), 0.75, 1.0, 1.0)
    assert est.extrapolation == pytest.approx(1.0, rel=1e-2)


def test_mfold_functional_constant():
    model = ProcessModel(MFoldIBM(1), 1.0, 1.0, 1.0)
    law = closed_form_limits("mfold", model, GSET, "functional")
    assert law.a == pytest.approx(0.5, abs=1e-10)
    assert law.kbar(0.4, 0.5) == pytest.approx(0.1)


def test_integrated_brownian_constant_matches_formula():
    model = ProcessModel(IntegratedVolterra(Brownian()), 1.0, 1.0, 1.0)
    law = closed_form_limits("integrated", model, GSET, "functional")
    A = np.array([1.0, 0.5])
    C = functional_gram(model, GSET)
    expected = quad_value(lambda u: np.ones_like(u), 0.0, 1.0) - A @ np.linalg.solve(C, A)
    assert law.a == pytest.approx(expected, abs=1e-10)


def test_limit_cov_functional_helper():
    C = np.array([[2.0, 1.0], [1.0, 2 / 3]])
    val = limit_cov_functional(lambda t, s: t * s, lambda t: np.array([1.0, 0.5]) * t, C, 1.0, 1.0)
    assert val == pytest.approx(0.5)


def test_path_limits():
    m = ProcessModel(MFoldIBM(1), 1.0, 1.0, 1.0)
    law = closed_form_limits("mfold", m, kind="path")
    assert law.kbar(0.6, 0.5) == pytest.approx(0.5 * 0.3)
    m0 = ProcessModel(MFoldIBM(1), 1.0, 1.0, 0.0)
    assert closed_form_limits("mfold", m0, kind="path").kbar(1.0, 1.0) == 0.0
    f = ProcessModel(FBm(0.75), 1.0, 1.0, 1.0)
    ups = closed_form_limits("fbm", f, kind="path")
    cH = FBm(0.75).c_H
    integral = quad_value(lambda u: (1 - u) ** 0.25 * (0.5 - u) ** 0.25, 0.0, 0.5, tol=1e-13)
    assert ups.kbar(1.0, 0.5) == pytest.approx(0.5 * f.covariance(1.0, 0.5) + 0.5 * cH**2 * integral, rel=1e-9)
    est = limit_path_cov_estimate(f, 0.75, 1.0, 0.5)
    assert est.extrapolation == pytest.approx(ups.kbar(1.0, 0.5), rel=1e-2)


def test_path_limit_coefficient_switch():
    f = ProcessModel(FBm(0.75), 1.0, 1.0, 2.0)
    default = closed_form_limits("fbm", f, kind="path").kbar(1.0, 1.0)
    literal = closed_form_limits("fbm", f, kind="path", paper_literal_coefficients=True).kbar(1.0, 1.0)
    cH = FBm(0.75).c_H
    kk = cH**2 * quad_value(lambda u: (1 - u) ** 0.5, 0.0, 1.0, tol=1e-13)
    assert default == pytest.approx(0.2 * kk + 0.8, rel=1e-10)
    assert literal == pytest.approx(0.8 * kk + 0.8, rel=1e-10)
    Kbar = closed_form_limits("fbm", f).kernel_limit
    assert limit_cov_path(f, f.covariance, Kbar, 1.0, 1.0) == pytest.approx(default, rel=1e-8)


def test_kernel_limits():
    cH = FBm(0.75).c_H
    est = limit_kernel_estimate(ProcessModel(FBm(0.75)), 0.75, 1.0, 0.0)
    assert est.extrapolation == pytest.approx(cH, rel=1e-2)
    m = limit_kernel_estimate(ProcessModel(MFoldIBM(1)), 1.0, 1.0, 0.5)
    np.testing.assert_allclose(m.ratios, 0.5 * np.sqrt(m.eps), rtol=1e-6)
    assert limit_kernel_estimate(ProcessModel(MFoldIBM(1)), 1.0, 0.5, 0.5).extrapolation == 0.0
    with pytest.raises(ValidationError):
        limit_kernel_estimate(ProcessModel(MFoldIBM(1)), 1.0, 0.2, 0.5)


def test_closed_form_errors():
    with pytest.raises(UnsupportedExampleError):
        closed_form_limits("fbm", ProcessModel(MFoldIBM(1)))
    with pytest.raises(UnsupportedExampleError):
        closed_form_limits("rough", ProcessModel(MFoldIBM(1)))
    with pytest.raises(ValidationError):
        closed_form_limits("mfold", ProcessModel(MFoldIBM(1)), kind="functional")


def test_limit_law_from_ladder_grid_only():
    grid = np.array([0.5, 1.0])
    law = LimitLaw.from_ladder(ProcessModel(Brownian()), 0.5, grid)
    np.testing.assert_allclose(law.gram(grid).entries, np.minimum.outer(grid, grid), rtol=1e-6)
    with pytest.raises(ValidationError):
        law.kbar(0.3, 0.5)


@pytest.mark.parametrize(
    "fam,expected,tol",
    [(FBm(0.6), 1.2, 0.02), (Brownian(), 1.0, 0.02), (MFoldIBM(1), 2.0, 0.05)],
    ids=["fbm0.6", "brownian", "mfold1"],
)
def test_speed_exponent(fam, expected, tol):
    slope, r2 = speed_exponent_fit(ProcessModel(fam))
    assert abs(slope - expected) <= tol and r2 > 0.999


def test_exp_tight_brownian_is_flat():
    rep = exp_tight_statistics(ProcessModel(Brownian()), 0.5, SHORT, n_grid=5)
    np.testing.assert_allclose(rep.sup_var, 1.0, rtol=1e-8)
    np.testing.assert_allclose(rep.sup_kernel, 1.0, rtol=1e-8)
    assert rep.sup_cross is None
    assert abs(rep.slopes["var"]) < 1e-6


def test_exp_tight_fbm_with_functionals():
    model = ProcessModel(FBm(0.75), 1.0, 1.0, 1.0)
    rep = exp_tight_statistics(model, 0.75, SHORT, n_grid=5, gset=GSET)
    assert rep.sup_cross is not None
    assert min(rep.slopes[k] for k in ("var", "kernel", "cross")) >= -0.05
    # without the eps Jacobian the kernel statistic grows like 1/eps
    assert rep.slopes["kernel_unscaled"] == pytest.approx(-1.0, abs=0.01)
    assert math.isfinite(rep.slopes["cross"])
