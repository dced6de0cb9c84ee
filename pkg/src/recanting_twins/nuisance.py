"""Conditional-model nuisances for the recanting-twin functionals.

Five models are fitted:

``b``       P(A=1 | W)
``c``       P(A=1 | Z, M, W)
``g``       P(Z=z | A, W)            (multinomial over ``k_z`` levels)
``h_star``  P(M=m | A, Z, W)         (multinomial over ``k_m`` levels)
``d``       E(Y | A, Z, M, W)        (logistic for binary Y, else least squares)

The marginal mediator law ``h(m | a, W)`` and the nested regression
``e(a', W)`` are derived from ``(g, h_star, d)`` by exact summation,
which keeps every functional mutually compatible.

Each model is chosen from a small library of GLM feature families by
cross-validated risk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Mapping

import numpy as np
from scipy.special import expit, logit

from . import glm
from .data import Dataset, assign_folds

FAMILIES = ("intercept", "main", "interactions")
NUISANCES = ("b", "c", "g", "h_star", "d")
DEFAULT_CLIP = 0.001
DEFAULT_RIDGE = 1e-8


class FoldError(RuntimeError):
    """A training split does not contain every category level."""


@dataclass(frozen=True)
class LearnerSpec:
    """How one nuisance model is fitted.

    With ``selection="cv-select"`` the family is picked from
    ``candidates`` by ``cv_folds``-fold cross-validated loss (negative
    log-likelihood, or squared error for a continuous outcome).  With
    ``selection="fixed"``, ``family`` is used directly.
    """

    family: str = "interactions"
    selection: str = "cv-select"
    candidates: tuple = FAMILIES
    cv_folds: int = 5

    def __post_init__(self):
        if self.selection not in ("fixed", "cv-select"):
            raise ValueError(f"unknown selection {self.selection!r}")
        bad = [f for f in (self.family, *self.candidates) if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown learner family {bad[0]!r}")
        if self.selection == "cv-select" and (self.cv_folds < 2 or not self.candidates):
            raise ValueError("cv-select needs cv_folds >= 2 and at least one candidate")


def learner_specs(spec: LearnerSpec | Mapping | None = None) -> dict:
    """Expand ``None``, a single spec, or a partial mapping to all five nuisances."""
    if spec is None:
        spec = LearnerSpec()
    if isinstance(spec, LearnerSpec):
        return {k: spec for k in NUISANCES}
    out = {k: LearnerSpec() for k in NUISANCES}
    for k, v in spec.items():
        if k not in out:
            raise ValueError(f"unknown nuisance {k!r}")
        out[k] = v
    return out


# -- feature families ---------------------------------------------------------

@dataclass(frozen=True)
class Block:
    """Base feature matrix with a group label and binary flag per column.

    Pairwise products are formed only between columns of different
    groups with at least one non-binary column, so indicator codes are
    never crossed into near-saturated cell models.  Only non-binary
    columns are squared.
    """

    x: np.ndarray
    groups: tuple
    binary: tuple


def expand(block: Block, family: str) -> np.ndarray:
    x = block.x
    if family == "intercept":
        return np.empty((x.shape[0], 0))
    if family == "main":
        return x
    if family != "interactions":
        raise ValueError(f"unknown family {family!r}")
    cols = [x]
    p = x.shape[1]
    pairs = [(i, j) for i, j in combinations(range(p), 2)
             if block.groups[i] != block.groups[j]
             and not (block.binary[i] and block.binary[j])]
    if pairs:
        ii, jj = map(np.array, zip(*pairs))
        cols.append(x[:, ii] * x[:, jj])
    sq = [i for i in range(p) if not block.binary[i]]
    if sq:
        cols.append(x[:, sq] ** 2)
    return np.hstack(cols)


@dataclass
class Learner:
    """A fitted GLM on a standardized expansion of a base block."""

    kind: str                     # "binary" | "multinomial" | "gaussian"
    family: str
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    k: int = 2
    converged: bool = True

    def design(self, block: Block) -> np.ndarray:
        return (expand(block, self.family) - self.center) / self.scale

    def predict(self, block: Block) -> np.ndarray:
        x = self.design(block)
        if self.kind == "binary":
            return glm.predict_binary(self.coef, x)
        if self.kind == "multinomial":
            return glm.predict_multinomial(self.coef, x)
        return glm.predict_linear(self.coef, x)


def fit_learner(block: Block, target, kind: str, family: str, k: int = 2,
                ridge: float = DEFAULT_RIDGE) -> Learner:
    x = expand(block, family)
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x - center) / scale
    if kind == "binary":
        fit = glm.fit_binary_glm(xs, target, ridge)
    elif kind == "multinomial":
        fit = glm.fit_multinomial(xs, target, k, ridge)
    elif kind == "gaussian":
        fit = glm.fit_least_squares(xs, target, ridge)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return Learner(kind, family, fit.coef, center, scale, k, fit.converged)


def _loss(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    if kind == "gaussian":
        return float(np.mean((target - pred) ** 2))
    if kind == "binary":
        p = np.clip(pred, 1e-15, 1 - 1e-15)
        return float(-np.mean(target * np.log(p) + (1 - target) * np.log1p(-p)))
    p = np.clip(pred[np.arange(len(target)), target.astype(int)], 1e-15, None)
    return float(-np.mean(np.log(p)))


def cv_select(candidates, block: Block, target, kind: str, k: int = 2,
              folds: int = 5, seed: int = 0, ridge: float = DEFAULT_RIDGE):
    """Family with the lowest cross-validated loss.

    Ties go to the earlier candidate.  A candidate whose fit fails on any
    fold scores ``inf``.  A single candidate is returned without fitting.

    Returns
    -------
    (family, losses) : (str, dict)
    """
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("need at least one candidate")
    if len(candidates) == 1:
        return candidates[0], {}
    target = np.asarray(target)
    n = len(target)
    fa = assign_folds(n, min(folds, n), seed)
    losses = {}
    for fam in candidates:
        total = 0.0
        try:
            for q in range(fa.q):
                tr, va = fa.training(q), fa.validation(q)
                sub = Block(block.x[tr], block.groups, block.binary)
                lrn = fit_learner(sub, target[tr], kind, fam, k, ridge)
                pred = lrn.predict(Block(block.x[va], block.groups, block.binary))
                total += _loss(kind, pred, target[va]) * len(va)
            losses[fam] = total / n
        except glm.FitError:
            losses[fam] = np.inf
    best = candidates[0]
    for fam in candidates[1:]:
        if losses[fam] < losses[best]:
            best = fam
    return best, losses


def fit_with_spec(spec: LearnerSpec, block: Block, target, kind: str, k: int = 2,
                  seed: int = 0, ridge: float = DEFAULT_RIDGE) -> Learner:
    if spec.selection == "fixed":
        family = spec.family
    else:
        family, _ = cv_select(spec.candidates, block, target, kind, k,
                              spec.cv_folds, seed, ridge)
    return fit_learner(block, target, kind, family, k, ridge)


# -- feature blocks per nuisance ----------------------------------------------

def _indicators(v: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(v)[:, None] == np.arange(1, k)[None, :]).astype(float)


def _w_part(w):
    w = np.asarray(w, dtype=float)
    return w, tuple(f"w{j}" for j in range(w.shape[1])), (False,) * w.shape[1]


def block_b(w) -> Block:
    x, gr, bi = _w_part(w)
    return Block(x, gr, bi)


def block_c(w, z, m, k_z, k_m) -> Block:
    x, gr, bi = _w_part(w)
    return Block(np.hstack([x, _indicators(z, k_z), _indicators(m, k_m)]),
                 gr + ("z",) * (k_z - 1) + ("m",) * (k_m - 1),
                 bi + (True,) * (k_z + k_m - 2))


def block_g(w, a) -> Block:
    x, gr, bi = _w_part(w)
    return Block(np.hstack([np.asarray(a, float)[:, None], x]), ("a",) + gr, (True,) + bi)


def block_h(w, a, z, k_z) -> Block:
    # Z enters as its level score so that sparse (a, z, m) cells borrow
    # strength from neighbouring levels.
    x, gr, bi = _w_part(w)
    zs = np.asarray(z, float)[:, None]
    return Block(np.hstack([np.asarray(a, float)[:, None], x, zs]),
                 ("a",) + gr + ("z",), (True,) + bi + (k_z <= 2,))


def block_d(w, a, z, m, k_z, k_m) -> Block:
    x, gr, bi = _w_part(w)
    return Block(
        np.hstack([np.asarray(a, float)[:, None], x, _indicators(z, k_z), _indicators(m, k_m)]),
        ("a",) + gr + ("z",) * (k_z - 1) + ("m",) * (k_m - 1),
        (True,) + bi + (True,) * (k_z + k_m - 2))


# -- fitted nuisances and their evaluations -----------------------------------

@dataclass
class NuisanceValues:
    """Nuisance evaluations for a set of rows, tabulated over all levels.

    Attributes
    ----------
    b1 : (n,)              P(A=1 | W), clipped to [clip, 1 - clip]
    c1 : (n, k_z, k_m)     P(A=1 | z, m, W), clipped likewise
    g : (n, 2, k_z)        P(Z=z | a, W)
    hs : (n, 2, k_z, k_m)  P(M=m | a, z, W)
    d : (n, 2, k_z, k_m)   E(Y | a, z, m, W)
    """

    b1: np.ndarray
    c1: np.ndarray
    g: np.ndarray
    hs: np.ndarray
    d: np.ndarray
    clip: float = DEFAULT_CLIP

    @property
    def n(self) -> int:
        return self.b1.shape[0]

    @property
    def k_z(self) -> int:
        return self.g.shape[2]

    @property
    def k_m(self) -> int:
        return self.hs.shape[3]

    def b(self, a: int) -> np.ndarray:
        return self.b1 if a == 1 else 1.0 - self.b1

    def c(self, a: int) -> np.ndarray:
        return self.c1 if a == 1 else 1.0 - self.c1

    @property
    def h(self) -> np.ndarray:
        """Marginal mediator law P(M=m | a, W), shape (n, 2, k_m)."""
        return np.einsum("naz,nazm->nam", self.g, self.hs)

    def e(self, a_prime: int = 1, a_star: int = 0) -> np.ndarray:
        """E{ E(Y | a*, Z, M, W) | a', W }."""
        return np.einsum("nzm,nz,nzm->n", self.d[:, a_star], self.g[:, a_prime],
                         self.hs[:, a_prime])

    def mean_outcome(self, a: int) -> np.ndarray:
        """E(Y | a, W) obtained by marginalizing ``d`` over ``(g, h_star)``."""
        return np.einsum("nzm,nz,nzm->n", self.d[:, a], self.g[:, a], self.hs[:, a])

    def take(self, idx) -> "NuisanceValues":
        return NuisanceValues(self.b1[idx], self.c1[idx], self.g[idx], self.hs[idx],
                              self.d[idx], self.clip)

    @classmethod
    def empty(cls, n: int, k_z: int, k_m: int, clip: float = DEFAULT_CLIP):
        return cls(np.empty(n), np.empty((n, k_z, k_m)), np.empty((n, 2, k_z)),
                   np.empty((n, 2, k_z, k_m)), np.empty((n, 2, k_z, k_m)), clip)

    def put(self, idx, other: "NuisanceValues") -> None:
        self.b1[idx] = other.b1
        self.c1[idx] = other.c1
        self.g[idx] = other.g
        self.hs[idx] = other.hs
        self.d[idx] = other.d


def clip_probability(p, clip: float) -> np.ndarray:
    return np.clip(p, clip, 1.0 - clip)


@dataclass
class NuisanceFit:
    b: Learner
    c: Learner
    g: Learner
    h_star: Learner
    d: Learner
    k_z: int
    k_m: int
    clip: float = DEFAULT_CLIP
    binary_outcome: bool = True
    families: dict = field(default_factory=dict)


def check_levels(train: Dataset) -> None:
    missing = []
    if np.unique(train.a).size < 2:
        missing.append("exposure")
    if np.unique(train.z).size < train.k_z:
        missing.append("intermediate")
    if np.unique(train.m).size < train.k_m:
        missing.append("mediator")
    if missing:
        raise FoldError("training split lacks levels of: " + ", ".join(missing))


def fit_nuisances(train: Dataset, spec=None, clip: float = DEFAULT_CLIP,
                  seed: int = 0, ridge: float = DEFAULT_RIDGE) -> NuisanceFit:
    """Fit ``b, c, g, h_star, d`` on ``train``.

    Raises
    ------
    FoldError
        If ``train`` misses a level of A, Z or M present in the full
        category space.
    """
    if train.n == 0:
        raise FoldError("empty training split")
    check_levels(train)
    specs = learner_specs(spec)
    w, a, z, m, y = train.w, train.a, train.z, train.m, train.y
    kz, km = train.k_z, train.k_m
    seeds = np.random.SeedSequence(seed).generate_state(5)
    d_kind = "binary" if train.binary_outcome else "gaussian"

    b = fit_with_spec(specs["b"], block_b(w), a.astype(float), "binary", seed=int(seeds[0]),
                      ridge=ridge)
    c = fit_with_spec(specs["c"], block_c(w, z, m, kz, km), a.astype(float), "binary",
                      seed=int(seeds[1]), ridge=ridge)
    g = fit_with_spec(specs["g"], block_g(w, a), z, "multinomial", kz,
                      seed=int(seeds[2]), ridge=ridge)
    hs = fit_with_spec(specs["h_star"], block_h(w, a, z, kz), m, "multinomial", km,
                       seed=int(seeds[3]), ridge=ridge)
    d = fit_with_spec(specs["d"], block_d(w, a, z, m, kz, km), y, d_kind,
                      seed=int(seeds[4]), ridge=ridge)
    fams = dict(b=b.family, c=c.family, g=g.family, h_star=hs.family, d=d.family)
    return NuisanceFit(b, c, g, hs, d, kz, km, clip, train.binary_outcome, fams)


def predict_all(fit: NuisanceFit, w) -> NuisanceValues:
    """Tabulate every nuisance for covariate rows ``w`` over all (a, z, m)."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, kz, km = w.shape[0], fit.k_z, fit.k_m
    ones = np.ones(n)

    b1 = clip_probability(fit.b.predict(block_b(w)), fit.clip)

    zz, mm = np.meshgrid(np.arange(kz), np.arange(km), indexing="ij")
    zz, mm = zz.ravel(), mm.ravel()
    ncell = kz * km
    w_rep = np.tile(w, (ncell, 1))
    z_rep = np.repeat(zz, n)
    m_rep = np.repeat(mm, n)
    c1 = fit.c.predict(block_c(w_rep, z_rep, m_rep, kz, km))
    c1 = clip_probability(c1, fit.clip).reshape(kz, km, n).transpose(2, 0, 1)

    g = np.stack([fit.g.predict(block_g(w, a * ones)) for a in (0, 1)], axis=1)

    hs = np.empty((n, 2, kz, km))
    for a in (0, 1):
        w_z = np.tile(w, (kz, 1))
        pr = fit.h_star.predict(block_h(w_z, np.full(n * kz, a), np.repeat(np.arange(kz), n), kz))
        hs[:, a] = pr.reshape(kz, n, km).transpose(1, 0, 2)

    d = np.empty((n, 2, kz, km))
    for a in (0, 1):
        pr = fit.d.predict(block_d(w_rep, np.full(n * ncell, a), z_rep, m_rep, kz, km))
        d[:, a] = pr.reshape(kz, km, n).transpose(2, 0, 1)

    return NuisanceValues(b1, c1, g, hs, d, fit.clip)


def perturb(nv: NuisanceValues, eps: float, binary_outcome: bool = True) -> NuisanceValues:
    """Scale every nuisance by ``1 + eps`` on its link scale.

    Binary probabilities are perturbed on the logit scale, categorical
    laws by tempering ``p ** (1 + eps)`` and renormalizing, and a
    continuous regression multiplicatively.
    """
    s = 1.0 + eps

    def bern(p):
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return expit(s * logit(p))

    def cat(p, axis):
        lp = s * np.log(np.clip(p, 1e-300, None))
        lp -= lp.max(axis=axis, keepdims=True)
        q = np.exp(lp)
        return q / q.sum(axis=axis, keepdims=True)

    d = bern(nv.d) if binary_outcome else nv.d * s
    return replace(nv, b1=bern(nv.b1), c1=bern(nv.c1), g=cat(nv.g, 2),
                   hs=cat(nv.hs, 3), d=d)
