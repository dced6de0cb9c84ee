from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recanting_twins.identification import (PATHS, PATH_WEIGHTS, TARGETS, Contrast,
                                            PathEffects, Target, conditional_mean, decompose,
                                            eif_values, expected_eif, plugin_value,
                                            remainder_probe, s2p_triple_sum)
from recanting_twins.nuisance import NuisanceValues
from recanting_twins.simulation import SETTINGS, draw_x, true_nuisance_values


def random_values(seed, n=6, kz=3, km=4, d=None):
    rng = np.random.default_rng(seed)
    g = rng.dirichlet(np.ones(kz), size=(n, 2))
    hs = rng.dirichlet(np.ones(km), size=(n, 2, kz))
    dd = rng.random((n, 2, kz, km)) if d is None else np.full((n, 2, kz, km), float(d))
    return NuisanceValues(rng.uniform(0.1, 0.9, n), rng.uniform(0.1, 0.9, (n, kz, km)),
                          g, hs, dd)


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-5, 5, allow_nan=False))
def test_constant_outcome_gives_constant_targets(seed, c):
    nv = random_values(seed, d=c)
    for t in TARGETS:
        np.testing.assert_allclose(conditional_mean(t, nv), c, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_no_exposure_effect_equalises_targets(seed):
    nv = random_values(seed)
    nv.g[:, 1] = nv.g[:, 0]
    nv.hs[:, 1] = nv.hs[:, 0]
    nv.d[:, 1] = nv.d[:, 0]
    vals = {t: plugin_value(t, nv) for t in TARGETS}
    eff = decompose(vals)
    np.testing.assert_allclose(list(eff.as_dict().values()), 0.0, atol=1e-13)
    # S1P, S2P and S3PP decouple Z from M, so they share a value of their own
    assert vals[Target.S1P] == pytest.approx(vals[Target.S3PP], abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-3, 3, allow_nan=False))
def test_constant_outcome_zero_influence(seed, c):
    nv = random_values(seed, d=c)
    rng = np.random.default_rng(seed)
    n = nv.n
    a, z, m = rng.integers(0, 2, n), rng.integers(0, 3, n), rng.integers(0, 4, n)
    for t in TARGETS:
        np.testing.assert_allclose(eif_values(t, nv, a, z, m, np.full(n, c), c), 0.0,
                                   atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_s2p_triple_sum_coincides(seed):
    nv = random_values(seed)
    for con in (Contrast(), Contrast(0, 1)):
        np.testing.assert_allclose(conditional_mean(Target.S2P, nv, con),
                                   s2p_triple_sum(nv, con), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_binary_outcome_targets_in_unit_interval(seed):
    nv = random_values(seed)
    for t in TARGETS:
        v = conditional_mean(t, nv)
        assert v.min() >= 0 and v.max() <= 1


def test_endpoint_targets_are_marginal_means():
    nv = random_values(3)
    brute = np.zeros(nv.n)
    for z in range(3):
        for m in range(4):
            brute += nv.d[:, 1, z, m] * nv.g[:, 1, z] * nv.hs[:, 1, z, m]
    np.testing.assert_allclose(conditional_mean(Target.S0, nv), brute)


def test_swapped_contrast_mirrors_endpoints():
    nv = random_values(4)
    swapped = Contrast(a_prime=0, a_star=1)
    assert plugin_value(Target.S0, nv, swapped) == pytest.approx(plugin_value(Target.S4, nv))
    assert plugin_value(Target.S4, nv, swapped) == pytest.approx(plugin_value(Target.S0, nv))
    with pytest.raises(ValueError):
        Contrast(1, 1)


# -- closed-form micro example ------------------------------------------------

B1 = F(2, 5)
G = {0: (F(3, 4), F(1, 4)), 1: (F(1, 3), F(2, 3))}
HS = {(0, 0): (F(4, 5), F(1, 5)), (0, 1): (F(1, 2), F(1, 2)),
      (1, 0): (F(2, 3), F(1, 3)), (1, 1): (F(1, 4), F(3, 4))}
D = {(0, 0, 0): F(1, 10), (0, 0, 1): F(3, 10), (0, 1, 0): F(1, 2), (0, 1, 1): F(7, 10),
     (1, 0, 0): F(1, 5), (1, 0, 1): F(2, 5), (1, 1, 0): F(3, 5), (1, 1, 1): F(9, 10)}


def _micro_nv():
    g = np.array([[[float(v) for v in G[a]] for a in (0, 1)]])
    hs = np.array([[[[float(v) for v in HS[a, z]] for z in (0, 1)] for a in (0, 1)]])
    d = np.array([[[[float(D[a, z, m]) for m in (0, 1)] for z in (0, 1)] for a in (0, 1)]])
    return NuisanceValues(np.array([float(B1)]), np.full((1, 2, 2), 0.5), g, hs, d)


def _s3_display(obs_a, obs_z, obs_m, y, theta, ap=1, as_=0):
    """The four-term closed form for S3, term by term, in exact arithmetic."""
    b = {1: B1, 0: 1 - B1}
    total = F(0)
    for z in (0, 1):
        for m in (0, 1):
            i_a_zm = int(obs_a == as_ and obs_z == z and obs_m == m)
            total += F(i_a_zm) / (HS[as_, z][m] * b[as_]) * (y - D[as_, z, m]) * HS[ap, z][m]
            total += F(int(obs_a == as_)) / b[as_] * (int(obs_z == z) - G[as_][z]) \
                * D[as_, z, m] * HS[ap, z][m]
            total += F(int(obs_a == ap and obs_z == z)) / (G[ap][z] * b[ap]) \
                * (int(obs_m == m) - HS[ap, z][m]) * D[as_, z, m] * G[as_][z]
            total += D[as_, z, m] * G[as_][z] * HS[ap, z][m]
    return total - theta


@pytest.mark.parametrize("obs,expected", [
    ((0, 1, 1, F(1)), F(137, 120)),
    ((1, 0, 1, F(0)), F(43, 80)),
])
def test_s3_micro_example_matches_hand_value(obs, expected):
    theta = F(1, 2)
    a, z, m, y = obs
    assert _s3_display(a, z, m, y, theta) == expected
    phi = eif_values(Target.S3, _micro_nv(), [a], [z], [m], [float(y)], float(theta))
    assert phi[0] == pytest.approx(float(expected), abs=1e-12)


# -- decomposition ------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=7, max_size=7))
def test_decomposition_telescopes(vals):
    eff = decompose(dict(zip(TARGETS, vals)))
    scale = max(1.0, max(abs(v) for v in vals))
    assert abs(eff.residual()) <= 1e-12 * scale


def test_equal_targets_give_zero_effects():
    eff = decompose({t: 0.3 for t in TARGETS})
    assert all(v == 0 for v in eff.as_dict().values())


def test_decompose_requires_all_targets():
    with pytest.raises(KeyError):
        decompose({Target.S0: 1.0})


def test_path_weights_cover_every_target_once_in_ate():
    total = {t: 0 for t in TARGETS}
    for p in PATHS[:-1]:
        for t, s in PATH_WEIGHTS[p].items():
            total[t] += s
    assert total == {t: PATH_WEIGHTS["ate"].get(t, 0) for t in TARGETS}
    assert isinstance(decompose({t: 1.0 for t in TARGETS}), PathEffects)


# -- remainder behaviour ------------------------------------------------------

@pytest.fixture(scope="module")
def true_values():
    x = draw_x(np.random.default_rng(9), 20_000)
    return true_nuisance_values(SETTINGS["default"], x)


def test_true_influence_has_mean_zero_given_covariates(true_values):
    for t in TARGETS:
        theta = plugin_value(t, true_values)
        assert abs(expected_eif(t, true_values, true_values, theta)) < 1e-12


def test_zero_perturbation_has_zero_error(true_values):
    for t in TARGETS:
        deb, plug = remainder_probe(t, true_values, 0.0)
        assert abs(deb) < 1e-12 and abs(plug) < 1e-12


def test_debiased_error_is_second_order(true_values):
    deb1, plug1 = remainder_probe(Target.S3PP, true_values, 0.1)
    deb2, plug2 = remainder_probe(Target.S3PP, true_values, 0.05)
    assert 2.5 <= deb1 / deb2 <= 6
    assert 1.5 <= plug1 / plug2 <= 2.5
    assert abs(deb1) < abs(plug1)


def test_probe_rejects_large_eps(true_values):
    with pytest.raises(ValueError):
        remainder_probe(Target.S1, true_values, 0.5)
