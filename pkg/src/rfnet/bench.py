"""Synthetic bicluster benchmark and the RFN / RFNn / FA / PCA comparison."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import metric_co, metric_er, metric_sp
from .model import center, estep_stats, fa_em_fit, posterior_moments
from .numerics import derive_rng, sym_eig
from .projection import ProjectionKind
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

SUITES = {
    "D1": (1.0, 10, 10),
    "D2": (5.0, 10, 10),
    "D3": (10.0, 10, 10),
    "D4": (1.0, 15, 5),
    "D5": (5.0, 15, 5),
    "D6": (10.0, 15, 5),
    "D7": (1.0, 5, 15),
    "D8": (5.0, 5, 15),
    "D9": (10.0, 5, 15),
}
# std of the non-member components of the spanning vectors
DATASET_SPREAD = {1: 0.01, 2: 0.5}
METHODS = ("RFN", "RFNn", "FA", "PCA")


class UnknownSuite(KeyError):
    pass


@dataclass(frozen=True)
class BenchSpec:
    """Recipe for one synthetic instance.

    Each bicluster is the outer product of a sample vector and a feature
    vector. On members, sample entries are the per-sample signal strength
    ``N(strength_mean, strength_std^2)`` and feature entries the pattern
    ``N(member_mean, member_std^2)``; all other components are
    ``N(0, spread_std^2)``. Background noise is ``N(0, sigma^2)``.
    """

    sigma: float
    n1: int
    n2: int
    rows: int = 100
    cols: int = 100
    large_range: tuple = (20, 30)
    small_range: tuple = (3, 8)
    spread_std: float = 0.01
    member_mean: float = 1.0
    member_std: float = 0.1
    strength_mean: float = 1.0
    strength_std: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.sigma < 0 or self.spread_std < 0:
            raise ValueError("standard deviations must be >= 0")
        for lo, hi in (self.large_range, self.small_range):
            if not 1 <= lo <= hi:
                raise ValueError(f"bad size range ({lo}, {hi})")
        if max(self.large_range[1], self.small_range[1]) > min(self.rows, self.cols):
            raise ValueError("bicluster sizes exceed the matrix dimensions")


@dataclass
class Instance:
    data: np.ndarray
    sample_masks: np.ndarray  # (n1 + n2, rows) bool
    feature_masks: np.ndarray  # (n1 + n2, cols) bool


def named_suite(suite_id: str, dataset: int = 1, seed: int = 0) -> BenchSpec:
    try:
        sigma, n1, n2 = SUITES[suite_id.upper()]
    except KeyError:
        raise UnknownSuite(f"unknown suite {suite_id!r}; expected one of {', '.join(SUITES)}") from None
    if dataset not in DATASET_SPREAD:
        raise ValueError(f"dataset must be 1 or 2, got {dataset}")
    return BenchSpec(sigma=sigma, n1=n1, n2=n2, spread_std=DATASET_SPREAD[dataset],
                     seed=seed, name=suite_id.upper())


def gen_instance(spec: BenchSpec, rng: Optional[np.random.Generator] = None) -> Instance:
    """Draw one data matrix with implanted biclusters."""
    if rng is None:
        rng = derive_rng(spec.seed)
    n, m = spec.rows, spec.cols
    k = spec.n1 + spec.n2
    X = np.zeros((n, m))
    smask = np.zeros((k, n), dtype=bool)
    fmask = np.zeros((k, m), dtype=bool)
    for b in range(k):
        lo, hi = spec.large_range if b < spec.n1 else spec.small_range
        ns = int(rng.integers(lo, hi + 1))
        nf = int(rng.integers(lo, hi + 1))
        rows = rng.choice(n, size=ns, replace=False)
        cols = rng.choice(m, size=nf, replace=False)
        s = rng.normal(0.0, spec.spread_std, n) if spec.spread_std > 0 else np.zeros(n)
        f = rng.normal(0.0, spec.spread_std, m) if spec.spread_std > 0 else np.zeros(m)
        s[rows] = rng.normal(spec.strength_mean, spec.strength_std, ns)
        f[cols] = rng.normal(spec.member_mean, spec.member_std, nf)
        X += np.outer(s, f)
        smask[b, rows] = True
        fmask[b, cols] = True
    if spec.sigma > 0:
        X += rng.normal(0.0, spec.sigma, (n, m))
    return Instance(X, smask, fmask)


def pca_fit(V: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``l`` principal axes of centered ``V`` and the projections onto them."""
    V = np.asarray(V, dtype=np.float64)
    if not 1 <= l <= min(V.shape):
        raise ValueError(f"l must lie in [1, {min(V.shape)}], got {l}")
    _, vecs = sym_eig(V.T @ V / V.shape[0])
    components = vecs[:, :l]
    return components, V @ components


@dataclass
class MetricsReport:
    method: str
    units: int
    suite: str
    SP: float
    ER: float
    CO: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.SP <= 100.0:
            raise ValueError("SP must be a percentage")


@dataclass
class BenchOptions:
    """Per-method settings shared by every cell of a benchmark."""

    rfn: TrainConfig = field(default_factory=lambda: TrainConfig(estep="projection"))
    fa_iterations: int = 500
    fa_rho: float = 0.1
    er_normalization: str = "frobenius"


def evaluate_method(method: str, V: np.ndarray, units: int, seed: int,
                    options: Optional[BenchOptions] = None, suite: str = "") -> MetricsReport:
    """Fit one method on one instance and score it."""
    options = options or BenchOptions()
    Vc, _ = center(V)
    norm = options.er_normalization
    if method in ("RFN", "RFNn"):
        kind = ProjectionKind.RECTIFY_NORMALIZE if method == "RFN" else ProjectionKind.RECTIFY
        cfg = replace(options.rfn, l=units, projection=kind, seed=seed)
        model, code, trace = train(Vc, cfg, center_data=False)
        return MetricsReport(method, units, suite, metric_sp(code, exact_zero=True),
                             metric_er(Vc, model, code, norm), metric_co(Vc, model, trace.final["S"]))
    if method == "FA":
        model = fa_em_fit(Vc, units, options.fa_iterations, rho=options.fa_rho, seed=seed)
        code, Sigma = posterior_moments(model, Vc)
        _, S = estep_stats(Vc, code, Sigma)
        return MetricsReport(method, units, suite, metric_sp(code, exact_zero=False),
                             metric_er(Vc, model, code, norm), metric_co(Vc, model, S))
    if method == "PCA":
        comps, code = pca_fit(Vc, units)
        return MetricsReport(method, units, suite, metric_sp(code, exact_zero=False),
                             metric_er(Vc, comps, code, norm), None)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


@dataclass
class CellSummary:
    method: str
    units: int
    suite: str
    count: int
    SP: float
    SP_std: float
    ER: float
    ER_std: float
    CO: Optional[float]
    CO_std: Optional[float]
    failures: list = field(default_factory=list)


def _mean_std(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return math.nan, math.nan
    return float(xs.mean()), float(xs.std())


def summarize(reports: Sequence[MetricsReport], method: str, units: int, suite: str,
              failures: Optional[list] = None) -> CellSummary:
    sp = _mean_std([r.SP for r in reports])
    er = _mean_std([r.ER for r in reports])
    cos = [r.CO for r in reports if r.CO is not None]
    co = _mean_std(cos) if cos else (None, None)
    return CellSummary(method, units, suite, len(reports), sp[0], sp[1], er[0], er[1],
                       co[0], co[1], list(failures or []))


def _suite_key(name: str) -> int:
    # named suites D1..D9 map to 1..9; custom specs share key 0
    return int(name[1:]) if name.upper() in SUITES else 0


def instance_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    """Stream for instance ``index`` of ``suite``, shared by every method and command."""
    return derive_rng(seed, _suite_key(suite), index)


def _run_one(args):
    method, spec, units, seed, inst, options = args
    data = gen_instance(spec, instance_rng(seed, spec.name, inst)).data
    fit_seed = int(derive_rng(seed, _suite_key(spec.name), inst, 1).integers(2**31))
    try:
        return evaluate_method(method, data, units, fit_seed, options, spec.name), None
    except Exception as exc:  # recorded per cell, never fatal
        return None, f"{spec.name}#{inst}: {type(exc).__name__}: {exc}"


def run_benchmark(suites: Iterable[str], units: Iterable[int], methods: Iterable[str],
                  instances_per_suite: int = 20, seed: int = 0, dataset: int = 1,
                  options: Optional[BenchOptions] = None, workers: int = 1,
                  ) -> tuple[list, list]:
    """Run every (method, units, suite) cell.

    Instance ``k`` of suite ``Dj`` is generated from a stream derived from
    ``(seed, j, k)``, so all methods see the same matrices and the results
    depend neither on ``workers`` nor on the order of ``suites``.

    Returns
    -------
    cells : list of CellSummary
        One per (method, units, suite), in that nesting order.
    reports : list of MetricsReport
        Every successful per-instance score.
    """
    options = options or BenchOptions()
    suites = [s.upper() for s in suites]
    specs = [named_suite(s, dataset, seed) for s in suites]
    methods = [m for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    jobs = []
    keys = []
    for method in methods:
        for u in units:
            for spec in specs:
                for inst in range(instances_per_suite):
                    jobs.append((method, spec, int(u), seed, inst, options))
                    keys.append((method, int(u), spec.name))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        results = [_run_one(j) for j in jobs]

    grouped: dict = {}
    for key, (report, failure) in zip(keys, results):
        ok, bad = grouped.setdefault(key, ([], []))
        if report is not None:
            ok.append(report)
        else:
            bad.append(failure)
            log.warning("benchmark failure: %s %s", key, failure)
    cells = [summarize(ok, *key, failures=bad) for key, (ok, bad) in grouped.items()]
    reports = [r for ok, _ in grouped.values() for r in ok]
    return cells, reports


def overall(reports: Sequence[MetricsReport], method: str, units: int) -> CellSummary:
    """Pool all suites for one (method, units) pair."""
    sel = [r for r in reports if r.method == method and r.units == units]
    return summarize(sel, method, units, "ALL")


TABLE_COLUMNS = ("method", "units", "suite", "n", "SP", "SP_std", "ER", "ER_std", "CO", "CO_std")


def format_table(cells: Sequence[CellSummary], sep: str = "\t") -> str:
    def fmt(x):
        return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"

    lines = [sep.join(TABLE_COLUMNS)]
    for c in cells:
        lines.append(sep.join([c.method, str(c.units), c.suite, str(c.count), fmt(c.SP), fmt(c.SP_std),
                               fmt(c.ER), fmt(c.ER_std), fmt(c.CO), fmt(c.CO_std)]))
    return "\n".join(lines) + "\n"
