import csv
import os

import numpy as np
import pytest
from scipy.stats import norm

from conftest import make_dataset
from recanting_twins.data import Dataset
from recanting_twins.estimator import (DegenerateVarianceError, EffectEstimates, Inference,
                                       cross_fit, estimate, test_intermediate_confounding)
from recanting_twins.identification import (PATHS, TARGETS, Contrast, PATH_WEIGHTS, Target,
                                            combine, eif_values)
from recanting_twins.nuisance import FoldError, LearnerSpec
from recanting_twins.simulation import (NULL_SCM, SETTINGS, replication_seed,
                                        simulate_observed, true_nuisance_values,
                                        truth_by_enumeration)

FIXED = LearnerSpec(family="interactions", selection="fixed")
RECORDS = os.path.join(os.path.dirname(__file__), "..", "results", "acceptance", "records.csv")


@pytest.fixture(scope="module")
def est_small(sim_small):
    return estimate(sim_small, q=3, spec=FIXED, seed=4)


def test_same_inputs_give_identical_estimates(sim_small, est_small):
    again = estimate(sim_small, q=3, spec=FIXED, seed=4)
    assert again.to_dict() == est_small.to_dict()
    for k in est_small.eif:
        assert np.array_equal(again.eif[k], est_small.eif[k])


def test_one_step_is_plugin_plus_mean_influence(est_small):
    for t in TARGETS:
        inf = est_small.target(t)
        assert abs(inf.estimate - inf.plugin - np.mean(est_small.eif[t])) < 1e-14


def test_components_telescope_to_ate(est_small):
    ate = est_small.path("ate")
    parts = [est_small.path(p) for p in PATHS[:-1]]
    assert abs(sum(p.estimate for p in parts) - ate.estimate) < 1e-12
    assert abs(sum(p.plugin for p in parts) - ate.plugin) < 1e-12
    total = sum(est_small.eif[p] for p in PATHS[:-1])
    np.testing.assert_allclose(total, est_small.eif["ate"], atol=1e-10)


def test_path_influence_is_signed_target_sum(est_small):
    for p in PATHS:
        signed = sum(s * est_small.eif[t] for t, s in PATH_WEIGHTS[p].items())
        np.testing.assert_array_equal(est_small.eif[p], signed)


def test_ci_width_uses_normal_quantile(est_small):
    inf = est_small.path("p2")
    phi = est_small.eif["p2"]
    se = np.std(phi, ddof=1) / np.sqrt(len(phi))
    assert inf.se == pytest.approx(se, rel=1e-12)
    assert inf.ci_hi - inf.estimate == pytest.approx(norm.ppf(0.975) * se, rel=1e-12)


def test_wider_level_contains_narrower(sim_small):
    e95 = estimate(sim_small, q=3, spec=FIXED, seed=4, alpha=0.05)
    e99 = estimate(sim_small, q=3, spec=FIXED, seed=4, alpha=0.01)
    for p in PATHS:
        a, b = e95.path(p), e99.path(p)
        assert b.ci_lo <= a.ci_lo and a.ci_hi <= b.ci_hi


def test_default_setting_intervals_finite(sim_medium):
    est = estimate(sim_medium, q=5, spec=FIXED, seed=0)
    for p in PATHS:
        inf = est.path(p)
        assert np.isfinite(inf.ci_lo) and np.isfinite(inf.ci_hi)
        assert inf.ci_hi > inf.ci_lo
    assert isinstance(est, EffectEstimates)
    assert len(est.families) == 5


def test_null_dgm_estimates_near_zero():
    data = simulate_observed(NULL_SCM, 3000, seed=21)
    est = estimate(data, q=5, spec=FIXED, seed=1)
    for p in PATHS:
        inf = est.path(p)
        assert abs(inf.estimate) <= 3 * inf.se, p


def test_single_fold_fits_full_sample(sim_small):
    est = estimate(sim_small, q=1, spec=FIXED)
    assert est.q == 1 and len(est.families) == 1
    assert abs(est.path("ate").estimate - sum(est.path(p).estimate for p in PATHS[:-1])) < 1e-12


def test_swapped_contrast_negates_ate(sim_small):
    fwd = estimate(sim_small, q=3, spec=FIXED, seed=4)
    rev = estimate(sim_small, q=3, spec=FIXED, seed=4, contrast=Contrast(0, 1))
    assert rev.path("ate").estimate == pytest.approx(-fwd.path("ate").estimate, abs=1e-12)


def test_invalid_arguments(sim_small):
    with pytest.raises(ValueError):
        estimate(sim_small, alpha=1.5)
    with pytest.raises(ValueError):
        cross_fit(sim_small, q=0)


def test_fold_error_when_a_level_is_too_rare():
    data = make_dataset(n=60, seed=1)
    z = data.z.copy()
    z[:] = np.where(z == 2, 0, z)
    z[0] = 2                                   # a single row carries level 2
    rare = Dataset(data.w, data.a, z, data.m, data.y, 3, data.k_m)
    with pytest.raises(FoldError, match="fewer folds"):
        estimate(rare, q=5, spec=LearnerSpec(family="main", selection="fixed"))


def test_format_matches_report_style():
    inf = Inference(0.0160, 0.0021, 0.0119, 0.0201, 7.6, 0.0, 0.0155)
    assert inf.format() == "0.0160 (0.0119, 0.0201)"
    assert inf.covers(0.012) and not inf.covers(0.03)


# -- confounding test ---------------------------------------------------------

def _with_int(est, inf):
    paths = dict(est.paths, int=inf)
    return EffectEstimates(est.targets, paths, est.n, est.q, est.seed, est.alpha)


def test_zero_confounding_estimate_gives_unit_p(est_small):
    inf = Inference(0.0, 0.01, -0.02, 0.02, 0.0, 1.0, 0.0)
    z, p = test_intermediate_confounding(_with_int(est_small, inf))
    assert z == 0.0 and p == 1.0


def test_zero_se_is_rejected(est_small):
    inf = Inference(0.1, 0.0, 0.1, 0.1, float("nan"), float("nan"), 0.1)
    with pytest.raises(DegenerateVarianceError):
        test_intermediate_confounding(_with_int(est_small, inf))


def test_confounding_test_matches_wald(est_small):
    z, p = test_intermediate_confounding(est_small)
    inf = est_small.path("int")
    assert z == pytest.approx(inf.estimate / inf.se)
    assert p == pytest.approx(inf.p_value)


def test_oracle_power_of_confounding_test_is_low():
    # Efficient SE from true nuisances: psi_int = -0.0067 sits about 0.4 SE from 0 at n=5000
    cfg = SETTINGS["default"]
    data = simulate_observed(cfg, 200_000, seed=5)
    nv = true_nuisance_values(cfg, data.w)
    truth = truth_by_enumeration(cfg, 200_000, seed=0)
    phis = {t: eif_values(t, nv, data.a, data.z, data.m, data.y, truth.targets[t.value])
            for t in TARGETS}
    se = np.std(combine(phis, "int")) / np.sqrt(5000)
    shift = abs(truth.value("int")) / se
    power = norm.sf(1.96 - shift) + norm.cdf(-1.96 - shift)
    assert 0.05 < power < 0.15


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="oracle power at n=5000 is about 7%, far below 50%")
def test_confounding_power_under_default_setting():
    rejections = 0
    for rep in range(100):
        data = simulate_observed(SETTINGS["default"], 5000,
                                 replication_seed(77, "default", 5000, rep))
        _, p = test_intermediate_confounding(estimate(data, spec=FIXED, seed=rep))
        rejections += p < 0.05
    assert rejections > 50


def _study_cell(setting, path, n="5000", mode="X"):
    if not os.path.exists(RECORDS):
        pytest.skip("acceptance study records not present")
    with open(RECORDS, newline="") as fh:
        rows = [r for r in csv.DictReader(fh)
                if (r["setting"], r["covariate_mode"], r["n"], r["path"]) == (setting, mode, n, path)]
    if len(rows) < 100:
        pytest.skip("acceptance study cell incomplete")
    return rows[:100]


def test_no_mediator_effect_interval_covers_zero():
    rows = _study_cell("setting2", "p4")
    covers = sum(float(r["ci_lo"]) <= 0 <= float(r["ci_hi"]) for r in rows)
    assert covers >= 90


def test_confounding_test_size_without_intermediate_effect():
    rows = _study_cell("setting3", "int")
    rejections = sum(abs(float(r["estimate"]) / float(r["se"])) > norm.ppf(0.975) for r in rows)
    assert rejections <= 10
