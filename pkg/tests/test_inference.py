import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siomed import Dataset, dgp
from siomed.basis import build_basis, fit_standardization
from siomed.config import SieveConfig
from siomed.estimands import mediation_effects
from siomed.exceptions import BootstrapUnstableError, InsufficientDataError
from siomed.inference import (
    KappaComponents,
    bootstrap_ci,
    chi_values,
    efficiency_loss_diagnostic,
    fit_representer,
    influence_and_variance,
    kappa_values,
)
from siomed.nuisance import LinearFit
from siomed.pipeline import run_pipeline
from siomed.seriesreg import fit_series
from tests.conftest import complete_sample, dgp_sample

Z95 = 1.959963984540054


class _Fn:
    """Known function exposed through the fitted-function interface."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, points, arms=None):
        return np.asarray(self.fn(np.atleast_2d(points)), dtype=float)


def _const(c):
    return _Fn(lambda p: np.full(p.shape[0], c))


def test_kappa_collapses_to_eta_when_residuals_vanish():
    base = complete_sample(50, 0)
    data = Dataset.build(base.r, base.t, base.m, np.full(base.n, 3.0), base.x, base.z, base.missable)
    comps = KappaComponents(_Fn(lambda p: 1 + p[:, 0] ** 2), _Fn(lambda p: np.exp(p[:, 0])), _const(3.0), _const(3.0))
    np.testing.assert_allclose(kappa_values(data, comps), 3.0)


def test_kappa_control_rows_have_no_b2_term():
    data = complete_sample(80, 1)
    comps = KappaComponents(_const(2.0), _const(1e6), _Fn(lambda p: p[:, 0]), _const(0.5))
    k = kappa_values(data, comps)
    ctrl = data.t == 0
    np.testing.assert_allclose(k[ctrl], 0.5 + 2.0 * (data.m[ctrl] - 0.5))


def test_kappa_zero_on_incomplete_rows():
    data, _ = dgp_sample(1, 300, 0.6, 0)
    comps = KappaComponents(_const(2.0), _const(2.0), _const(1.0), _const(1.0))
    assert np.all(kappa_values(data, comps)[data.r == 0] == 0.0)


def _oracle_truth_fits():
    full = lambda f: _Fn(lambda p: f(p))  # noqa: E731
    comps = KappaComponents(
        full(lambda x: dgp.true_b1(1, x)),
        full(lambda p: dgp.true_b2(1, p[:, 0], p[:, 1:])),
        full(lambda p: dgp.true_gamma(1, p[:, 0], p[:, 1:])),
        full(lambda x: dgp.true_eta(1, x)),
    )
    return comps


def test_oracle_kappa_and_chi_means_match_truth():
    data, latent = dgp_sample(1, 100_000, 0.6, 11)
    full = data.with_complete(latent.x_full)
    kappa = kappa_values(full, _oracle_truth_fits())
    assert abs(kappa.mean() - 2.5) <= 3 * kappa.std(ddof=1) / math.sqrt(full.n)
    e1 = _Fn(lambda x: 1.0 / dgp.true_propensity(1, x))
    chi1 = chi_values(full, e1, _Fn(lambda x: dgp.true_mu(1, 1, x)), 1)
    assert abs(chi1.mean() - 4.0) <= 3 * chi1.std(ddof=1) / math.sqrt(full.n)


def test_chi_examples():
    base = complete_sample(60, 2)
    mu = _Fn(lambda x: 1 + x[:, 0])
    data = Dataset.build(base.r, base.t, base.m, 1 + base.x[:, 0], base.x, base.z, base.missable)
    np.testing.assert_allclose(chi_values(data, _const(7.0), mu, 1), 1 + data.x[:, 0])
    chi = chi_values(base, _const(7.0), mu, 1)
    other = base.t == 0
    np.testing.assert_allclose(chi[other], 1 + base.x[other, 0])


def _shadow_is_covariate_sample(n, seed):
    """R == 1 and Z equal to the only covariate, so instrument and weight points coincide."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    t = rng.binomial(1, 0.5, n)
    m = x + t + rng.normal(size=n)
    y = m + x + rng.normal(size=n)
    return Dataset.build(np.ones(n), t, m, y, x, x)


def test_representer_zero_target_gives_zero():
    data, _ = dgp_sample(1, 500, 0.6, 3)
    q = fit_standardization(build_basis("polynomial", [1] * 5, 5), data.weight_points[data.r == 1])
    p = fit_standardization(build_basis("polynomial", [1] * 5, 5), data.conditioning_points)
    rho = fit_representer(data, np.zeros(data.n), q, p)
    for coef in rho.coefficients.values():
        np.testing.assert_allclose(coef, 0.0, atol=1e-14)


def test_representer_reduces_to_projection_when_bases_coincide():
    data = _shadow_is_covariate_sample(400, 4)
    np.testing.assert_array_equal(data.weight_points, data.conditioning_points)
    basis = fit_standardization(build_basis("polynomial", [2, 2, 2], 3), data.weight_points)
    target = np.sin(data.y) + data.m * data.x[:, 0]
    rho = fit_representer(data, target, basis, basis)
    ref = fit_series(target, data.weight_points, basis, data.t)
    np.testing.assert_allclose(rho.predict(data.weight_points, data.t), ref.predict(data.weight_points, data.t),
                               atol=1e-8)


def test_representer_is_stationary():
    from siomed.basis import LinkSpec
    from siomed.smd import SmdProblem, smd_gradient

    data, _ = dgp_sample(1, 800, 0.6, 5)
    q = fit_standardization(build_basis("polynomial", [2] * 5, 5), data.weight_points[data.r == 1])
    p = fit_standardization(build_basis("polynomial", [2] * 5, 5), data.conditioning_points)
    target = data.r * (data.y + data.m)
    rho = fit_representer(data, target, q, p)
    problem = SmdProblem(np.zeros(data.n), data.r, data.weight_points, q, data.conditioning_points, p,
                         LinkSpec("identity"), data.t, target)
    for g in smd_gradient(problem, rho.coefficients).values():
        assert np.max(np.abs(g)) <= 1e-8


def test_complete_data_influence_reduces_to_kappa():
    data = complete_sample(600, 6)
    res = run_pipeline(data, unit_weights=True)
    np.testing.assert_array_equal(res.influence.psi, res.fits["kappa"] - res.estimates.theta)


@pytest.fixture(scope="module")
def dgp1_result():
    data, _ = dgp_sample(1, 1000, 0.6, 0)
    return data, run_pipeline(data)


def test_plugin_interval_shape(dgp1_result):
    data, res = dgp1_result
    sig = res.report.diagnostics["sigma"]
    for row in res.report.rows:
        assert row.ci_low <= row.point <= row.ci_high
        assert row.ci_high - row.ci_low == pytest.approx(2 * Z95 * sig[row.estimand] / math.sqrt(data.n), rel=1e-12)
        assert row.se >= 0 and row.method == "plugin"


def test_psi_centered_within_two_se(dgp1_result):
    data, res = dgp1_result
    psi = res.influence.psi
    assert abs(psi.mean()) <= 2 * psi.std(ddof=1) / math.sqrt(data.n)


def test_effect_variances_use_influence_differences(dgp1_result):
    data, res = dgp1_result
    inf = res.influence
    for name, diff in (("nie", inf.phi1 - inf.psi), ("nde", inf.psi - inf.phi0), ("ate", inf.phi1 - inf.phi0)):
        assert res.report.row(name).se == pytest.approx(math.sqrt(np.mean(diff**2) / data.n), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(1e-3, 1e3))
def test_variance_nonnegative(seed, scale):
    data, _ = dgp_sample(1, 200, 0.6, 0)
    rng = np.random.default_rng(seed)
    vecs = [scale * rng.normal(size=data.n) for _ in range(6)]
    _, rep = influence_and_variance(data, data.r, mediation_effects(1.0, 0.0, 2.0), *vecs)
    assert all(r.se >= 0 for r in rep.rows)
    assert all(s >= 0 for s in rep.diagnostics["sigma"].values())


def test_zero_influence_flagged_degenerate():
    data, _ = dgp_sample(1, 200, 0.6, 0)
    zeros = [np.zeros(data.n)] * 6
    _, rep = influence_and_variance(data, data.r, mediation_effects(0.0, 0.0, 0.0), *zeros)
    assert rep.diagnostics["degenerate"] == ["theta", "alpha0", "alpha1", "nie", "nde", "ate"]


def test_report_serialization(tmp_path, dgp1_result):
    _, res = dgp1_result
    res.report.to_csv(tmp_path / "r.csv")
    res.report.to_json(tmp_path / "r.json")
    import pandas as pd

    frame = pd.read_csv(tmp_path / "r.csv", float_precision="round_trip")
    assert list(frame.columns) == ["estimand", "point", "se", "ci_low", "ci_high", "method", "n", "diagnostics"]
    np.testing.assert_array_equal(frame["point"].to_numpy(), [r.point for r in res.report.rows])
    blob = json.loads((tmp_path / "r.json").read_text())
    assert blob["n"] == 1000 and len(blob["estimates"]) == 6


def _point_pipeline(sample):
    return run_pipeline(sample, SieveConfig(), inference=False).estimates


def test_bootstrap_single_resample_is_degenerate():
    data, _ = dgp_sample(1, 300, 0.6, 0)
    rep = bootstrap_ci(data, _point_pipeline, n_boot=1, seed=0)
    assert all(r.se == 0.0 for r in rep.rows)
    assert rep.diagnostics["degenerate"] and rep.diagnostics["below_recommended_resamples"]


def test_bootstrap_deterministic_and_thread_independent():
    data, _ = dgp_sample(1, 300, 0.6, 1)
    a = bootstrap_ci(data, _point_pipeline, n_boot=8, seed=3)
    b = bootstrap_ci(data, _point_pipeline, n_boot=8, seed=3, threads=2)
    assert a.as_dict() == b.as_dict()


def test_bootstrap_counts_failures_and_refuses_when_unstable():
    data, _ = dgp_sample(1, 300, 0.6, 2)
    calls = {"k": 0}

    def flaky(sample, every):
        calls["k"] += 1
        if calls["k"] % every == 0:
            raise InsufficientDataError("arm empty")
        return _point_pipeline(sample)

    rep = bootstrap_ci(data, lambda s: flaky(s, 20), n_boot=20, seed=0, point=_point_pipeline(data))
    assert rep.diagnostics["failures"] == 1
    with pytest.raises(BootstrapUnstableError):
        bootstrap_ci(data, lambda s: flaky(s, 2), n_boot=20, seed=0, point=_point_pipeline(data))


@pytest.mark.slow
def test_bootstrap_se_close_to_plugin(dgp1_result):
    data, res = dgp1_result
    rep = bootstrap_ci(data, _point_pipeline, n_boot=200, seed=0, point=res.estimates)
    for name in ("theta", "alpha0", "alpha1", "ate"):
        ratio = rep.row(name).se / res.report.row(name).se
        assert 0.7 <= ratio <= 1.3, (name, ratio)


def test_efficiency_loss_zero_without_missingness():
    data, latent = dgp_sample(1, 2000, 1.0, 0)
    full = data.with_complete(latent.x_full)
    res = run_pipeline(full, SieveConfig())
    no_missing = replace(latent, delta=np.ones(full.n))
    out = efficiency_loss_diagnostic(full, no_missing, res.fits["kappa_components"], res.influence.representer_projection,
                                     res.estimates.theta)
    assert out["loss"] == 0.0 and out["sigma2_full"] > 0


def test_efficiency_loss_needs_latent_truth(dgp1_result):
    data, res = dgp1_result
    with pytest.raises(ValueError, match="latent"):
        efficiency_loss_diagnostic(data, None, res.fits["kappa_components"], res.influence.representer_projection,
                                   res.estimates.theta)


def test_fitted_representer_is_linear_fit(dgp1_result):
    _, res = dgp1_result
    assert isinstance(res.fits["rho"], LinearFit)
    assert set(res.fits["rho"].coefficients) == {0, 1}
