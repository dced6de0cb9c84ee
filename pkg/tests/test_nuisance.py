import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from recanting_twins import glm
from recanting_twins.data import Dataset
from recanting_twins.nuisance import (Block, FoldError, LearnerSpec, NuisanceValues, block_d,
                                      cv_select, expand, fit_nuisances, learner_specs,
                                      perturb, predict_all)
from recanting_twins.simulation import SETTINGS, p_y, simulate_observed

from conftest import make_dataset


def test_learner_spec_validation():
    with pytest.raises(ValueError):
        LearnerSpec(family="forest")
    with pytest.raises(ValueError):
        LearnerSpec(cv_folds=1)
    assert LearnerSpec(selection="fixed", cv_folds=1).family == "interactions"
    specs = learner_specs({"d": LearnerSpec("main", "fixed")})
    assert specs["d"].family == "main" and specs["b"].selection == "cv-select"
    with pytest.raises(ValueError):
        learner_specs({"e": LearnerSpec()})


def test_interaction_expansion_skips_indicator_pairs():
    x = np.array([[1.0, 2.0, 1.0, 0.0], [0.0, 3.0, 0.0, 1.0]])
    blk = Block(x, ("a", "w0", "z", "z"), (True, False, True, True))
    out = expand(blk, "interactions")
    # main (4) + a*w0, w0*z1, w0*z2 (3) + w0^2 (1)
    assert out.shape == (2, 8)
    np.testing.assert_array_equal(out[:, 4], x[:, 0] * x[:, 1])
    np.testing.assert_array_equal(out[:, -1], x[:, 1] ** 2)
    assert expand(blk, "intercept").shape == (2, 0)
    np.testing.assert_array_equal(expand(blk, "main"), x)


def test_cv_select_prefers_signal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 2))
    y = 2 * x[:, 0] + rng.normal(size=400) * 0.5
    blk = Block(x, ("w0", "w1"), (False, False))
    fam, losses = cv_select(["intercept", "main"], blk, y, "gaussian")
    assert fam == "main" and losses["main"] < losses["intercept"]


def test_cv_select_single_candidate_skips_fitting():
    blk = Block(np.zeros((3, 1)), ("w0",), (False,))
    assert cv_select(["main"], blk, np.zeros(3), "binary") == ("main", {})


def test_cv_select_noise_picks_intercept_mostly():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(200, 3))
        y = (rng.random(200) < 0.4).astype(float)
        fam, _ = cv_select(["intercept", "main", "interactions"],
                           Block(x, ("w0", "w1", "w2"), (False,) * 3), y, "binary", seed=seed)
        wins += fam == "intercept"
    assert wins > 10


def test_fit_on_simulated_sample_is_normalised():
    d = simulate_observed(SETTINGS["default"], 2000, seed=2)
    fit = fit_nuisances(d, LearnerSpec("main", "fixed"))
    nv = predict_all(fit, d.w)
    np.testing.assert_allclose(nv.g.sum(axis=2), 1.0, atol=1e-10)
    np.testing.assert_allclose(nv.hs.sum(axis=3), 1.0, atol=1e-10)
    np.testing.assert_allclose(nv.h.sum(axis=2), 1.0, atol=1e-10)
    for p in (nv.b1, nv.c1):
        assert p.min() >= 0.001 and p.max() <= 0.999


def test_constant_outcome():
    base = make_dataset(300, seed=1)
    d = Dataset(base.w, base.a, base.z, base.m, np.ones(base.n), base.k_z, base.k_m)
    nv = predict_all(fit_nuisances(d, LearnerSpec("main", "fixed")), d.w)
    assert nv.d.min() > 1 - 1e-5
    np.testing.assert_allclose(nv.e(), 1.0, atol=1e-5)


def test_continuous_outcome_uses_least_squares():
    d = make_dataset(300, seed=2, binary_y=False)
    fit = fit_nuisances(d, LearnerSpec("main", "fixed"))
    assert fit.d.kind == "gaussian" and not fit.binary_outcome


def test_missing_level_is_fold_error():
    d = make_dataset(60, seed=3)
    keep = np.flatnonzero(d.z != 2)
    with pytest.raises(FoldError, match="intermediate"):
        fit_nuisances(d.subset(keep))


def test_outcome_regression_matches_structural_truth():
    # The analyst sees cos(X1) in place of X1, which makes the main-effects
    # logistic model for d correctly specified.
    cfg = SETTINGS["default"]
    sim = simulate_observed(cfg, 100_000, seed=3)
    d = Dataset(np.c_[np.cos(sim.w[:, 0]), sim.w[:, 1:]], sim.a, sim.z, sim.m, sim.y, 4, 4)
    fit = fit_nuisances(d, LearnerSpec("main", "fixed"))
    q = stats.beta.ppf([0.25, 0.5, 0.75], 2, 3)
    xs = np.array([[x1, x2, x3] for x1 in q for x2 in q for x3 in q])
    ws = np.c_[np.cos(xs[:, 0]), xs[:, 1:]]
    n = len(xs)
    errs = []
    for a in (0, 1):
        for z in range(4):
            for m in range(4):
                if np.sum((d.a == a) & (d.z == z) & (d.m == m)) < 0.01 * d.n:
                    continue
                pred = fit.d.predict(block_d(ws, np.full(n, a), np.full(n, z), np.full(n, m), 4, 4))
                errs.append(np.abs(pred - p_y(cfg, a, z, m, xs)))
    errs = np.concatenate(errs)
    assert errs.mean() < 0.01
    assert errs.max() < 0.02


def test_nested_regression_matches_two_stage_oracle():
    d = simulate_observed(SETTINGS["default"], 100_000, seed=4)
    fit = fit_nuisances(d, LearnerSpec("interactions", "fixed"))
    nv = predict_all(fit, d.w)
    rows = np.arange(d.n)
    pseudo = nv.d[rows, 0, d.z, d.m]
    treated = d.a == 1
    feats = np.c_[d.w, d.w ** 2]
    two = glm.fit_binary_glm(feats[treated], pseudo[treated])
    g = np.linspace(0.15, 0.65, 5)
    xs = np.array([[x1, x2, x3] for x1 in g for x2 in g for x3 in g])
    oracle = glm.predict_binary(two.coef, np.c_[xs, xs ** 2])
    assert np.max(np.abs(predict_all(fit, xs).e(1, 0) - oracle)) < 0.01


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(2, 4), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_marginal_mediator_law_matches_loop(n, kz, km, seed):
    rng = np.random.default_rng(seed)
    g = rng.dirichlet(np.ones(kz), size=(n, 2))
    hs = rng.dirichlet(np.ones(km), size=(n, 2, kz))
    d = rng.random((n, 2, kz, km))
    nv = NuisanceValues(rng.random(n), rng.random((n, kz, km)), g, hs, d)
    brute = np.zeros((n, 2, km))
    for i in range(n):
        for a in range(2):
            for z in range(kz):
                brute[i, a] += g[i, a, z] * hs[i, a, z]
    np.testing.assert_array_equal(nv.h, np.einsum("naz,nazm->nam", g, hs))
    np.testing.assert_allclose(nv.h, brute, atol=1e-15)
    loop_e = sum(d[:, 0, z, m] * g[:, 1, z] * hs[:, 1, z, m] for z in range(kz) for m in range(km))
    np.testing.assert_allclose(nv.e(1, 0), loop_e, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(0.01, 0.99)),
       st.floats(0.0, 0.3))
def test_perturbation_keeps_laws_valid(p, eps):
    n = 4
    g = p / p.sum(axis=1, keepdims=True)
    g2 = np.stack([g, g[::-1]], axis=1)
    hs = np.broadcast_to(g2[:, :, :, None] * 0 + g2[:, :, None, :], (n, 2, 3, 3)).copy()
    nv = NuisanceValues(p[:, 0], np.broadcast_to(p[:, :1, None], (n, 3, 3)).copy(), g2, hs,
                        np.broadcast_to(p[:, None, :, None], (n, 2, 3, 3)).copy())
    out = perturb(nv, eps)
    np.testing.assert_allclose(out.g.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.hs.sum(axis=3), 1.0, atol=1e-12)
    if eps == 0.0:
        np.testing.assert_allclose(out.d, nv.d, atol=1e-12)
        np.testing.assert_allclose(out.g, nv.g, atol=1e-12)
