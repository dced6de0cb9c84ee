"""Synthetic data, ground-truth oracles, and the replication study.

Structural model (``X`` has three independent Be(2, 3) coordinates)::

    A | X        ~ Bern(expit(0.5 X1 + 0.5 X2 - 1))
    Z | A, X     ~ Bin(3, expit(-1.7 + kappa A + 0.5 X3^2))
    M | Z, A, X  ~ Bin(3, expit(-1.5 + lambda1 Z + lambda2 A + 0.4 X2 + 0.2 X3))
    Y | M, Z, A, X ~ Bern(expit(0.4 M + gamma1 Z + gamma2 A - 0.5 cos X1 - 1.5))

with ``kappa = 1.5`` unless overridden.  Every draw is a threshold of
uniform exogenous errors, so counterfactuals under different exposure
settings share the same noise.

Two oracles give the true path effects.  :func:`truth_by_enumeration`
sums the identification formulas over all levels with the true
conditionals.  :func:`truth_by_counterfactuals` simulates nested
counterfactual outcomes and recanting twins from the structural
equations and never touches the identification formulas.
"""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import binom

from .data import Dataset
from .identification import PATHS, TARGETS, PathEffects, combine, conditional_mean
from .nuisance import NuisanceValues

N_TRIALS = 3
K = N_TRIALS + 1
CHUNK = 200_000


@dataclass(frozen=True)
class ScmConfig:
    """Coefficients of the structural model.

    ``covariate_mode`` is ``"X"`` (the analyst sees X) or ``"W"`` (the
    analyst sees the transformed covariates ``W = f(X)``; data are still
    generated from X).
    """

    lambda1: float = 1.2
    lambda2: float = 1.5
    gamma1: float = 1.2
    gamma2: float = 1.2
    covariate_mode: str = "X"
    seed: int = 0
    kappa: float = 1.5

    def __post_init__(self):
        if self.covariate_mode not in ("X", "W"):
            raise ValueError(f"covariate_mode must be 'X' or 'W', got {self.covariate_mode!r}")


SETTINGS = {
    "default": ScmConfig(),
    "setting1": ScmConfig(lambda1=0.0),
    "setting2": ScmConfig(lambda2=0.0),
    "setting3": ScmConfig(gamma1=0.0),
    "setting4": ScmConfig(gamma2=0.0),
}
STUDY_SETTINGS = ("setting1", "setting2", "setting3", "setting4")

# Paths whose true effect vanishes in each setting.
NULL_PATHS = {
    "setting1": ("p3",),
    "setting2": ("p4",),
    "setting3": ("p2", "int"),
    "setting4": ("p1",),
}

NULL_SCM = ScmConfig(lambda1=0.0, lambda2=0.0, gamma1=0.0, gamma2=0.0, kappa=0.0)


def get_setting(name: str) -> ScmConfig:
    try:
        return SETTINGS[name]
    except KeyError:
        raise ValueError(f"unknown setting {name!r}; choose from {sorted(SETTINGS)}") from None


# -- structural probabilities -------------------------------------------------

def p_a(x):
    return expit(0.5 * x[:, 0] + 0.5 * x[:, 1] - 1.0)


def p_z(cfg: ScmConfig, a, x):
    return expit(-1.7 + cfg.kappa * a + 0.5 * x[:, 2] ** 2)


def p_m(cfg: ScmConfig, a, z, x):
    return expit(-1.5 + cfg.lambda1 * z + cfg.lambda2 * a + 0.4 * x[:, 1] + 0.2 * x[:, 2])


def p_y(cfg: ScmConfig, a, z, m, x):
    return expit(0.4 * m + cfg.gamma1 * z + cfg.gamma2 * a - 0.5 * np.cos(x[:, 0]) - 1.5)


def transform_w(x) -> np.ndarray:
    """Analyst-visible covariates in ``"W"`` mode."""
    return np.column_stack([np.exp(x[:, 0] - 1.0), (x[:, 0] + x[:, 1] ** 2) / 4.0,
                            np.sin(x[:, 2])])


def _binomial(u, p):
    """Binomial(3, p) as the number of uniforms below p; ``u`` is (n, 3)."""
    return np.sum(u < p[:, None], axis=1)


def draw_x(rng, n: int) -> np.ndarray:
    return rng.beta(2.0, 3.0, size=(n, 3))


def simulate_observed(cfg: ScmConfig, n: int, seed: int | None = None) -> Dataset:
    """Draw ``n`` observations from the structural model.

    The outcome data depend only on ``seed`` (``cfg.seed`` when omitted),
    so the two covariate modes of a configuration share the same draws.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = draw_x(rng, n)
    u_a = rng.random(n)
    u_z = rng.random((n, N_TRIALS))
    u_m = rng.random((n, N_TRIALS))
    u_y = rng.random(n)
    a = (u_a < p_a(x)).astype(np.int64)
    z = _binomial(u_z, p_z(cfg, a, x))
    m = _binomial(u_m, p_m(cfg, a, z, x))
    y = (u_y < p_y(cfg, a, z, m, x)).astype(float)
    if cfg.covariate_mode == "W":
        return Dataset(transform_w(x), a, z, m, y, K, K, ("w1", "w2", "w3"))
    return Dataset(x, a, z, m, y, K, K, ("x1", "x2", "x3"))


def true_nuisance_values(cfg: ScmConfig, x) -> NuisanceValues:
    """Exact conditionals of the structural model at covariates ``x``.

    ``c`` follows from Bayes' rule so that all five nuisances describe
    one joint law.  No clipping is applied.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    lv = np.arange(K)
    b1 = p_a(x)
    g = np.empty((n, 2, K))
    hs = np.empty((n, 2, K, K))
    d = np.empty((n, 2, K, K))
    for a in (0, 1):
        g[:, a] = binom.pmf(lv[None, :], N_TRIALS, p_z(cfg, a, x)[:, None])
        for z in lv:
            hs[:, a, z] = binom.pmf(lv[None, :], N_TRIALS, p_m(cfg, a, z, x)[:, None])
            for m in lv:
                d[:, a, z, m] = p_y(cfg, a, z, m, x)
    joint1 = b1[:, None, None] * g[:, 1, :, None] * hs[:, 1]
    joint0 = (1 - b1)[:, None, None] * g[:, 0, :, None] * hs[:, 0]
    c1 = joint1 / (joint1 + joint0)
    return NuisanceValues(b1, c1, g, hs, d, clip=0.0)


# -- truth oracles ------------------------------------------------------------

class _Moments:
    """Running mean and variance per key, combined chunk by chunk."""

    def __init__(self):
        self.n = 0
        self.mean = {}
        self.m2 = {}

    def add(self, values: dict) -> None:
        k = len(next(iter(values.values())))
        for key, v in values.items():
            mu = float(np.mean(v))
            m2 = float(np.sum((v - mu) ** 2))
            if self.n == 0:
                self.mean[key], self.m2[key] = mu, m2
            else:
                delta = mu - self.mean[key]
                tot = self.n + k
                self.mean[key] += delta * k / tot
                self.m2[key] += m2 + delta ** 2 * self.n * k / tot
        self.n += k

    def se(self) -> dict:
        return {key: float(np.sqrt(v / (self.n - 1) / self.n)) for key, v in self.m2.items()}


@dataclass
class Truth:
    """True effects with Monte Carlo standard errors.

    ``targets`` holds counterfactual means keyed by target name; the
    counterfactual oracle also reports both twin-based S2 means as
    ``"S2P_prime"`` and ``"S2P_dprime"``.
    """

    effects: PathEffects
    se: dict
    targets: dict
    target_se: dict
    n_mc: int
    method: str

    def value(self, path: str) -> float:
        return self.effects.as_dict()[path]


def _chunks(n_mc: int):
    done = 0
    while done < n_mc:
        k = min(CHUNK, n_mc - done)
        yield k
        done += k


def truth_by_enumeration(cfg: ScmConfig, n_mc: int = 2_000_000, seed: int | None = None) -> Truth:
    """Average the identification formulas, evaluated with the true conditionals,
    over ``n_mc`` covariate draws."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    acc = _Moments()
    for k in _chunks(n_mc):
        nv = true_nuisance_values(cfg, draw_x(rng, k))
        vals = {t.value: conditional_mean(t, nv) for t in TARGETS}
        by_t = {t: vals[t.value] for t in TARGETS}
        vals.update({p: combine(by_t, p) for p in PATHS})
        acc.add(vals)
    se = acc.se()
    thetas = {t.value: acc.mean[t.value] for t in TARGETS}
    effects = PathEffects(*(acc.mean[p] for p in PATHS))
    return Truth(effects, {p: se[p] for p in PATHS}, thetas,
                 {t: se[t] for t in thetas}, n_mc, "enumeration")


def counterfactual_outcomes(cfg: ScmConfig, x, rng) -> dict:
    """Nested counterfactual outcomes for one batch of units.

    ``Z(1)`` and ``Z(0)`` share their exogenous noise; the twins ``T(1)``
    and ``T(0)`` are fresh draws from the law of ``Z(a)`` given X.
    Mediator and outcome noise are shared across all arms.
    """
    n = x.shape[0]
    u_z = rng.random((n, N_TRIALS))
    u_t1 = rng.random((n, N_TRIALS))
    u_t0 = rng.random((n, N_TRIALS))
    u_m = rng.random((n, N_TRIALS))
    u_y = rng.random(n)
    one, zero = np.ones(n), np.zeros(n)

    z1 = _binomial(u_z, p_z(cfg, one, x))
    z0 = _binomial(u_z, p_z(cfg, zero, x))
    t1 = _binomial(u_t1, p_z(cfg, one, x))
    t0 = _binomial(u_t0, p_z(cfg, zero, x))

    def med(a, z):
        return _binomial(u_m, p_m(cfg, a, z, x))

    def out(a, z, m):
        return (u_y < p_y(cfg, a, z, m, x)).astype(float)

    m1z1 = med(one, z1)
    m1t1 = med(one, t1)
    m1z0 = med(one, z0)
    return {
        "S0": out(one, z1, m1z1),
        "S1": out(zero, z1, m1z1),
        "S1P": out(zero, z1, m1t1),
        "S2P_prime": out(zero, z0, m1t1),
        "S2P_dprime": out(zero, t0, m1z1),
        "S3PP": out(zero, t0, m1z0),
        "S3": out(zero, z0, m1z0),
        "S4": out(zero, z0, med(zero, z0)),
    }


def truth_by_counterfactuals(cfg: ScmConfig, n_mc: int = 2_000_000,
                             seed: int | None = None) -> Truth:
    """Mean contrasts of simulated counterfactual outcomes."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    acc = _Moments()
    for k in _chunks(n_mc):
        y = counterfactual_outcomes(cfg, draw_x(rng, k), rng)
        vals = dict(y)
        vals["p1"] = y["S0"] - y["S1"]
        vals["p2"] = y["S1P"] - y["S2P_prime"]
        vals["p3"] = y["S2P_dprime"] - y["S3PP"]
        vals["p4"] = y["S3"] - y["S4"]
        vals["int"] = y["S1"] - y["S1P"] + y["S2P_prime"] - y["S2P_dprime"] + y["S3PP"] - y["S3"]
        vals["ate"] = y["S0"] - y["S4"]
        vals["twin_gap"] = y["S2P_prime"] - y["S2P_dprime"]
        acc.add(vals)
    se = acc.se()
    names = list(y)
    effects = PathEffects(*(acc.mean[p] for p in PATHS))
    tse = {k: se[k] for k in names}
    tse["twin_gap"] = se["twin_gap"]
    tgt = {k: acc.mean[k] for k in names}
    tgt["twin_gap"] = acc.mean["twin_gap"]
    return Truth(effects, {p: se[p] for p in PATHS}, tgt, tse, n_mc, "counterfactual")


# -- replication study --------------------------------------------------------

RECORD_FIELDS = ("setting", "covariate_mode", "n", "rep", "path", "truth", "estimate", "se",
                 "ci_lo", "ci_hi", "covered", "plugin_estimate")
FAILURE_FIELDS = ("setting", "covariate_mode", "n", "rep", "error")
METRIC_FIELDS = ("setting", "covariate_mode", "n", "path", "reps", "failures", "bias",
                 "root_n_bias", "sd", "coverage", "status")
PLOT_FIELDS = ("setting", "covariate_mode", "n", "path", "metric", "value")
PLOT_METRICS = ("bias", "root_n_bias", "sd", "coverage")
MAX_FAILURE_RATE = 0.05


class StudyError(RuntimeError):
    pass


def replication_seed(base_seed: int, setting: str, n: int, rep: int) -> int:
    """Stable 63-bit seed derived from the replication coordinates."""
    key = f"{base_seed}|{setting}|{n}|{rep}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class EstimatorConfig:
    q: int = 5
    alpha: float = 0.05
    spec: object = None


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _replicate_one(job):
    setting, mode, n, rep, base_seed, est_cfg, truth = job
    from .estimator import estimate

    cfg = replace(get_setting(setting), covariate_mode=mode)
    seed = replication_seed(base_seed, setting, n, rep)
    try:
        data = simulate_observed(cfg, n, seed)
        est = estimate(data, q=est_cfg.q, spec=est_cfg.spec, alpha=est_cfg.alpha, seed=seed)
    except Exception as exc:  # recorded and skipped
        return None, [setting, mode, str(n), str(rep), f"{type(exc).__name__}: {exc}"]
    rows = []
    for p in PATHS:
        inf = est.paths[p]
        tv = truth[p]
        rows.append([setting, mode, str(n), str(rep), p, _fmt(tv), _fmt(inf.estimate),
                     _fmt(inf.se), _fmt(inf.ci_lo), _fmt(inf.ci_hi),
                     str(int(inf.covers(tv))), _fmt(inf.plugin)])
    return rows, None


def failures_path(records_path) -> str:
    root, _ = os.path.splitext(str(records_path))
    return root + ".failures.csv"


def _read_csv(path, fields) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != tuple(fields):
            raise StudyError(f"{path}: unexpected header {header}")
        return [r for r in reader if r]


def _done_keys(records_path) -> set:
    keys = set()
    if os.path.exists(records_path):
        per = {}
        for r in _read_csv(records_path, RECORD_FIELDS):
            per.setdefault(tuple(r[:4]), set()).add(r[4])
        keys |= {k for k, ps in per.items() if ps == set(PATHS)}
    fp = failures_path(records_path)
    if os.path.exists(fp):
        keys |= {tuple(r[:4]) for r in _read_csv(fp, FAILURE_FIELDS)}
    return keys


@dataclass
class StudyResult:
    records_path: str
    metrics: list
    truths: dict = field(default_factory=dict)
    new_replications: int = 0


def run_study(settings, ns, reps: int, records_path, modes=("X", "W"),
              est_cfg: EstimatorConfig = EstimatorConfig(), base_seed: int = 0,
              n_mc: int = 2_000_000, resume: bool = False, workers: int = 1,
              progress=None) -> StudyResult:
    """Simulate, estimate and score every (setting, mode, n, rep) cell.

    Records are appended as replications finish, so an interrupted run
    can continue with ``resume=True``.  Without ``resume`` existing
    record and failure files are replaced.  Truths come from
    :func:`truth_by_enumeration` with one truth per setting.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    for s in settings:
        get_setting(s)
    records_path = str(records_path)
    fpath = failures_path(records_path)
    if not resume:
        for p in (records_path, fpath):
            if os.path.exists(p):
                os.remove(p)
    done = _done_keys(records_path) if resume else set()

    truths = {}
    for s in settings:
        truths[s] = truth_by_enumeration(get_setting(s), n_mc,
                                         seed=replication_seed(base_seed, s, 0, -1))
    jobs = []
    for s in settings:
        tv = truths[s].effects.as_dict()
        for mode in modes:
            for n in ns:
                for rep in range(reps):
                    if (s, mode, str(n), str(rep)) not in done:
                        jobs.append((s, mode, int(n), rep, base_seed, est_cfg, tv))

    for p, flds in ((records_path, RECORD_FIELDS), (fpath, FAILURE_FIELDS)):
        if not os.path.exists(p):
            with open(p, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(flds)

    if workers > 1:
        pool = ProcessPoolExecutor(workers)
        results = pool.map(_replicate_one, jobs)
    else:
        pool = None
        results = map(_replicate_one, jobs)
    try:
        for i, (rows, fail) in enumerate(results):
            target, payload = (records_path, rows) if rows else (fpath, [fail])
            with open(target, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows(payload)
            if progress is not None:
                progress(i + 1, len(jobs))
    finally:
        if pool is not None:
            pool.shutdown()
    return StudyResult(records_path, compute_metrics(records_path), truths, len(jobs))


def load_records(records_path) -> list:
    """Parse and check a record file; duplicate keys are an error."""
    rows = _read_csv(records_path, RECORD_FIELDS)
    if not rows:
        raise StudyError(f"{records_path}: no records")
    seen = set()
    out = []
    for r in rows:
        if len(r) != len(RECORD_FIELDS):
            raise StudyError(f"{records_path}: malformed row {r}")
        key = tuple(r[:5])
        if key in seen:
            raise StudyError(f"{records_path}: duplicate record {key}")
        seen.add(key)
        out.append(dict(setting=r[0], covariate_mode=r[1], n=int(r[2]), rep=int(r[3]),
                        path=r[4], truth=float(r[5]), estimate=float(r[6]), se=float(r[7]),
                        ci_lo=float(r[8]), ci_hi=float(r[9]), covered=int(r[10]),
                        plugin_estimate=float(r[11])))
    return out


def _failure_counts(records_path) -> dict:
    fp = failures_path(records_path)
    counts = {}
    if os.path.exists(fp):
        for r in _read_csv(fp, FAILURE_FIELDS):
            key = (r[0], r[1], int(r[2]))
            counts[key] = counts.get(key, 0) + 1
    return counts


def compute_metrics(records_path) -> list:
    """Bias, root-n bias, SD and coverage per (setting, mode, n, path).

    A cell is marked ``"failed"`` when more than 5% of its replications
    failed.
    """
    recs = load_records(records_path)
    fails = _failure_counts(records_path)
    cells = {}
    for r in recs:
        cells.setdefault((r["setting"], r["covariate_mode"], r["n"], r["path"]), []).append(r)
    order = {p: i for i, p in enumerate(PATHS)}
    out = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], order.get(k[3], 99), k[3])):
        s, mode, n, path = key
        rs = cells[key]
        err = np.array([r["estimate"] - r["truth"] for r in rs])
        est = np.array([r["estimate"] for r in rs])
        nf = fails.get((s, mode, n), 0)
        bias = float(np.mean(err))
        status = "failed" if nf > MAX_FAILURE_RATE * (len(rs) + nf) else "ok"
        out.append(dict(setting=s, covariate_mode=mode, n=n, path=path, reps=len(rs),
                        failures=nf, bias=bias, root_n_bias=float(np.sqrt(n) * bias),
                        sd=float(np.std(est, ddof=1)) if len(rs) > 1 else float("nan"),
                        coverage=float(np.mean([r["covered"] for r in rs])),
                        status=status))
    return out


def write_metrics(metrics: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for row in metrics:
            w.writerow([_fmt(row[f]) if isinstance(row[f], (float, np.floating)) else row[f]
                        for f in METRIC_FIELDS])


def write_plot_data(metrics: list, path) -> None:
    """Long-format metrics: one row per (setting, mode, n, path, metric)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_FIELDS)
        for row in metrics:
            for metric in PLOT_METRICS:
                w.writerow([row["setting"], row["covariate_mode"], row["n"], row["path"],
                            metric, _fmt(row[metric])])


def config_dict(cfg: ScmConfig) -> dict:
    return asdict(cfg)
