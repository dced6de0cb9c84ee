"""Identification functionals, their influence functions, and the path decomposition.

Seven counterfactual means are identified from the nuisances in
:mod:`recanting_twins.nuisance`.  With ``d_s = d(a*, z, m, W)``:

======  ==============================================================
S0      sum d(a', z, m) g(z | a') h*(m | a', z)
S1      sum d_s g(z | a') h*(m | a', z)
S1P     sum d_s g(z | a') h(m | a')
S2P     sum d_s g(z | a*) h(m | a')
S3PP    sum d_s g(z | a*) h*(m | a', z') g(z' | a*)
S3      sum d_s g(z | a*) h*(m | a', z)
S4      sum d(a*, z, m) g(z | a*) h*(m | a*, z)
======  ==============================================================

The sums run over every categorical level, so no Monte Carlo is
involved anywhere in estimation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .nuisance import NuisanceValues, perturb


class Target(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    S1P = "S1P"
    S2P = "S2P"
    S3PP = "S3PP"
    S3 = "S3"
    S4 = "S4"


TARGETS = tuple(Target)
PATHS = ("p1", "p2", "p3", "p4", "int", "ate")

# Each path effect as a signed sum of target means.  The two middle
# targets of the twin construction share the S2P functional, so it
# cancels out of the intermediate-confounding term.
PATH_WEIGHTS = {
    "p1": {Target.S0: 1, Target.S1: -1},
    "p2": {Target.S1P: 1, Target.S2P: -1},
    "p3": {Target.S2P: 1, Target.S3PP: -1},
    "p4": {Target.S3: 1, Target.S4: -1},
    "int": {Target.S1: 1, Target.S1P: -1, Target.S3PP: 1, Target.S3: -1},
    "ate": {Target.S0: 1, Target.S4: -1},
}


@dataclass(frozen=True)
class Contrast:
    """Reference exposure levels: ``a_prime`` (treated) vs ``a_star`` (control)."""

    a_prime: int = 1
    a_star: int = 0

    def __post_init__(self):
        if {self.a_prime, self.a_star} != {0, 1}:
            raise ValueError("a_prime and a_star must be 0 and 1 in some order")


DEFAULT_CONTRAST = Contrast()


def _as_target(t) -> Target:
    return t if isinstance(t, Target) else Target(t)


def _q(nv: NuisanceValues, ap: int, as_: int) -> np.ndarray:
    """sum_z' h*(m | a', z') g(z' | a*): mediator law under a twin drawn at a*."""
    return np.einsum("nzm,nz->nm", nv.hs[:, ap], nv.g[:, as_])


def conditional_mean(target, nv: NuisanceValues,
                     contrast: Contrast = DEFAULT_CONTRAST) -> np.ndarray:
    """Per-row conditional functional given W, shape ``(n,)``."""
    t = _as_target(target)
    ap, as_ = contrast.a_prime, contrast.a_star
    ds = nv.d[:, as_]
    if t is Target.S0:
        return nv.mean_outcome(ap)
    if t is Target.S4:
        return nv.mean_outcome(as_)
    if t is Target.S1:
        return np.einsum("nzm,nz,nzm->n", ds, nv.g[:, ap], nv.hs[:, ap])
    if t in (Target.S1P, Target.S2P):
        aj = ap if t is Target.S1P else as_
        return np.einsum("nzm,nz,nm->n", ds, nv.g[:, aj], nv.h[:, ap])
    if t is Target.S3PP:
        return np.einsum("nzm,nz,nm->n", ds, nv.g[:, as_], _q(nv, ap, as_))
    if t is Target.S3:
        return np.einsum("nzm,nz,nzm->n", ds, nv.g[:, as_], nv.hs[:, ap])
    raise ValueError(f"unknown target {target!r}")


def s2p_triple_sum(nv: NuisanceValues, contrast: Contrast = DEFAULT_CONTRAST) -> np.ndarray:
    """The S2P functional written with a twin drawn at a' (z') and Z at a*."""
    ap, as_ = contrast.a_prime, contrast.a_star
    return np.einsum("nzm,nz,nwm,nw->n", nv.d[:, as_], nv.g[:, as_], nv.hs[:, ap], nv.g[:, ap])


def plugin_value(target, nv: NuisanceValues, contrast: Contrast = DEFAULT_CONTRAST) -> float:
    """Empirical mean of :func:`conditional_mean` over the rows of ``nv``."""
    return float(np.mean(conditional_mean(target, nv, contrast)))


def eif_values(target, nv: NuisanceValues, a, z, m, y, theta: float,
               contrast: Contrast = DEFAULT_CONTRAST, cond=None) -> np.ndarray:
    """Estimated efficient influence function at each observation.

    Parameters
    ----------
    target : Target
    nv : NuisanceValues
        Nuisances evaluated at each row's covariates.
    a, z, m, y : array_like
        Observed exposure, intermediate and mediator codes, and outcome.
    theta : float
        Plug-in value the function is centred at.
    cond : ndarray, optional
        Precomputed :func:`conditional_mean` for these rows.

    Returns
    -------
    ndarray, shape (n,)
    """
    t = _as_target(target)
    ap, as_ = contrast.a_prime, contrast.a_star
    a = np.asarray(a)
    z = np.asarray(z, dtype=np.intp)
    m = np.asarray(m, dtype=np.intp)
    y = np.asarray(y, dtype=float)
    n = nv.n
    rows = np.arange(n)
    if cond is None:
        cond = conditional_mean(t, nv, contrast)
    is_p = (a == ap).astype(float)
    is_s = (a == as_).astype(float)
    ds = nv.d[:, as_]
    d_obs = ds[rows, z, m]

    if t in (Target.S0, Target.S4):
        lvl = ap if t is Target.S0 else as_
        ind = is_p if t is Target.S0 else is_s
        return ind / nv.b(lvl) * (y - cond) + cond - theta

    if t is Target.S1:
        c_p = nv.c(ap)[rows, z, m]
        c_s = nv.c(as_)[rows, z, m]
        t1 = is_s / nv.b(ap) * c_p / c_s * (y - d_obs)
        t2 = is_p / nv.b(ap) * (d_obs - cond)
        return t1 + t2 + cond - theta

    # Categorical probabilities that divide are floored like b and c.
    g_s = nv.g[:, as_]
    b_s = nv.b(as_)
    b_p = nv.b(ap)
    hs_s_obs = np.maximum(nv.hs[rows, as_, z, m], nv.clip)
    g_s_obs = np.maximum(g_s[rows, z], nv.clip)

    if t in (Target.S1P, Target.S2P):
        aj = ap if t is Target.S1P else as_
        g_j = nv.g[:, aj]
        h_p = nv.h[:, ap]
        w1 = g_j[rows, z] * h_p[rows, m] / (g_s_obs * hs_s_obs * b_s)
        t1 = is_s * w1 * (y - d_obs)
        t2 = (a == aj) / nv.b(aj) * (np.einsum("nm,nm->n", ds[rows, z], h_p) - cond)
        t3 = is_p / b_p * (np.einsum("nz,nz->n", ds[rows, :, m], g_j) - cond)
        return t1 + t2 + t3 + cond - theta

    hs_p_z = nv.hs[rows, ap, z]                   # h*(. | a', Z, W), shape (n, k_m)
    g_ratio = g_s[rows, z] / (np.maximum(nv.g[rows, ap, z], nv.clip) * b_p)

    if t is Target.S3PP:
        q = _q(nv, ap, as_)
        f = np.einsum("nzm,nz->nm", ds, g_s)      # sum_z d_s(z, m) g(z | a*)
        t1 = is_s / (hs_s_obs * b_s) * (y - d_obs) * q[rows, m]
        t2 = is_s / b_s * (np.einsum("nm,nm->n", ds[rows, z], q) - cond)
        inner = np.einsum("nm,nm->n", f, hs_p_z)
        t3 = is_p * g_ratio * (f[rows, m] - inner)
        t4 = is_s / b_s * (inner - cond)
        return t1 + t2 + t3 + t4 + cond - theta

    if t is Target.S3:
        t1 = is_s / (hs_s_obs * b_s) * (y - d_obs) * hs_p_z[rows, m]
        inner = np.einsum("nm,nm->n", ds[rows, z], hs_p_z)
        t2 = is_s / b_s * (inner - cond)
        t3 = is_p * g_ratio * (d_obs - inner)
        return t1 + t2 + t3 + cond - theta

    raise ValueError(f"unknown target {target!r}")


@dataclass(frozen=True)
class PathEffects:
    """Path-specific effects and the average treatment effect.

    ``psi_int`` measures intermediate confounding; it is zero when the
    exposure-affected intermediate does not confound the mediator-outcome
    relation.
    """

    psi_p1: float
    psi_p2: float
    psi_p3: float
    psi_p4: float
    psi_int: float
    ate: float

    def as_dict(self) -> dict:
        return {p: getattr(self, f.name) for p, f in zip(PATHS, fields(self))}

    def residual(self) -> float:
        """Components minus the ATE; zero up to rounding."""
        return self.psi_p1 + self.psi_p2 + self.psi_p3 + self.psi_p4 + self.psi_int - self.ate


def combine(values: Mapping, path: str):
    """Signed combination of per-target values (scalars or arrays) for one path."""
    out = 0.0
    for tgt, sign in PATH_WEIGHTS[path].items():
        out = out + sign * values[tgt]
    return out


def decompose(thetas: Mapping) -> PathEffects:
    """Path effects from a complete mapping of target means."""
    thetas = {_as_target(k): v for k, v in thetas.items()}
    missing = [t.value for t in TARGETS if t not in thetas]
    if missing:
        raise KeyError(f"missing targets: {missing}")
    return PathEffects(*(float(combine(thetas, p)) for p in PATHS))


def expected_eif(target, nv_eval: NuisanceValues, nv_true: NuisanceValues, theta: float,
                 contrast: Contrast = DEFAULT_CONTRAST) -> float:
    """Population mean of the influence function built from ``nv_eval``.

    The observed-data law is taken from ``nv_true``: every (a, z, m) cell
    is weighted by ``b g h*`` and ``Y`` is replaced by the true regression,
    which is exact because the influence function is linear in ``Y``.
    Only the covariate distribution is averaged empirically.
    """
    n, kz, km = nv_true.n, nv_true.k_z, nv_true.k_m
    cond = conditional_mean(target, nv_eval, contrast)
    total = np.zeros(n)
    for a in (0, 1):
        for z in range(kz):
            for m in range(km):
                wt = nv_true.b(a) * nv_true.g[:, a, z] * nv_true.hs[:, a, z, m]
                phi = eif_values(target, nv_eval, np.full(n, a), np.full(n, z),
                                 np.full(n, m), nv_true.d[:, a, z, m], theta, contrast, cond)
                total += wt * phi
    return float(np.mean(total))


def remainder_probe(target, nv_true: NuisanceValues, eps: float,
                    binary_outcome: bool = True,
                    contrast: Contrast = DEFAULT_CONTRAST):
    """Estimation error after perturbing every nuisance by ``eps``.

    Returns
    -------
    (debiased_error, plugin_error) : (float, float)
        ``theta(eta_eps) + E phi(eta_eps) - theta(eta)`` and
        ``theta(eta_eps) - theta(eta)``, both averaged over the covariate
        rows of ``nv_true``.
    """
    if not 0.0 <= eps <= 0.3:
        raise ValueError("eps must lie in [0, 0.3]")
    nv_eps = perturb(nv_true, eps, binary_outcome)
    theta0 = plugin_value(target, nv_true, contrast)
    theta_eps = plugin_value(target, nv_eps, contrast)
    corr = expected_eif(target, nv_eps, nv_true, theta_eps, contrast)
    return theta_eps + corr - theta0, theta_eps - theta0
