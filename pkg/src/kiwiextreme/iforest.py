"""Isolation Forest scoring with rank-based contamination thresholding.

Path lengths are normalised by ``c(n) = 2 H(n - 1) - 2 (n - 1) / n`` with the
harmonic number approximated as ``H(i) = ln(i) + 0.5772156649``; ``c(n)`` is
defined as 0 for ``n <= 1``. A leaf holding ``k`` unseparated training
instances contributes ``c(k)`` on top of its depth.

Tree ``i`` of a forest draws all of its randomness from
``numpy.random.default_rng(SeedSequence([rng_seed, i]))``, so trees can be
built in any order (or in parallel) and still reproduce bit for bit.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid, EmptyCatalog, TooFewRows
from .preprocess import ClimateSeries

EULER_GAMMA = 0.5772156649
DEFAULT_GRID = tuple(round(0.005 * k, 3) for k in range(1, 11))
REPORT_HEADER = ("station_id", "date", "variable", "score", "mean_path", "flag")


def harmonic(i):
    return np.log(i) + EULER_GAMMA


def expected_path_c(n):
    """Average unsuccessful-search path length in a BST of ``n`` keys.

    Accepts a scalar or an array; ``n <= 1`` maps to 0.
    """
    arr = np.asarray(n, dtype=float)
    out = np.zeros_like(arr)
    big = arr > 1
    m = arr[big]
    out[big] = 2.0 * harmonic(m - 1.0) - 2.0 * (m - 1.0) / m
    return float(out) if out.ndim == 0 else out


def anomaly_score(mean_path, n: int):
    """``2 ** (-mean_path / c(n))``: 1 for instant isolation, 0.5 at the average depth."""
    if n < 2:
        raise ValueError("anomaly_score needs n >= 2")
    return np.exp2(-np.asarray(mean_path, dtype=float) / expected_path_c(n))


@dataclass
class ForestConfig:
    n_trees: int = 100
    subsample_size: int = 256
    contamination: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.n_trees) < 1:
            raise ConfigInvalid("n_trees must be >= 1")
        if int(self.subsample_size) < 2:
            raise ConfigInvalid("subsample_size must be >= 2")
        if not 0.0 < float(self.contamination) < 0.5:
            raise ConfigInvalid("contamination must lie in (0, 0.5)")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigInvalid("rng_seed must be a 64-bit unsigned integer")

    def with_contamination(self, contamination: float) -> "ForestConfig":
        return ForestConfig(self.n_trees, self.subsample_size, contamination, self.rng_seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(
            n_trees=int(d.get("n_trees", 100)),
            subsample_size=int(d.get("subsample_size", 256)),
            contamination=float(d.get("contamination", 0.01)),
            rng_seed=int(d.get("rng_seed", 0)),
        )


@dataclass
class FeatureMatrix:
    values: np.ndarray
    row_keys: list[tuple[str, dt.date]] = field(default_factory=list)
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("feature matrix must be 2-D with at least one column")
        if np.isnan(v).any():
            raise ValueError("feature matrix contains MISSING values")
        self.values = v
        if not self.columns:
            self.columns = tuple(f"x{j}" for j in range(v.shape[1]))
        if self.row_keys and len(self.row_keys) != len(v):
            raise ValueError("row_keys length does not match the number of rows")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


@dataclass
class IsolationTree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray
    max_depth: int

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def route(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row of ``X`` lands in."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.intp)
        active = np.arange(len(X))
        while active.size:
            f = self.feature[node[active]]
            internal = f >= 0
            active, f = active[internal], f[internal]
            if not active.size:
                break
            cur = node[active]
            go_left = X[active, f] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        leaf = self.route(X)
        return self.depth[leaf] + expected_path_c(self.size[leaf])


def build_tree(sample, rng: np.random.Generator, max_depth: int) -> IsolationTree:
    """Grow one isolation tree on ``sample`` (rows are instances).

    A node becomes a leaf when it holds one instance, when every feature has
    zero range inside it, or at ``max_depth``. Otherwise a feature is chosen
    uniformly among those with nonzero range and split at a uniform draw from
    the open interval (min, max); rows with value < split go left.
    """
    X = np.asarray(sample, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ValueError("cannot build a tree on an empty sample")

    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(len(X), 0), np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        d = depth[node]
        if len(idx) <= 1 or d >= max_depth:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if not splittable.size:
            continue
        f = int(splittable[rng.integers(splittable.size)])
        a, b = lo[f], hi[f]
        p = rng.uniform(a, b)
        while not a < p < b:
            p = rng.uniform(a, b)
        go_left = sub[:, f] < p
        li, ri = idx[go_left], idx[~go_left]
        ln, rn = new_node(len(li), d + 1), new_node(len(ri), d + 1)
        feature[node], threshold[node] = f, p
        left[node], right[node] = ln, rn
        stack.append((rn, ri))
        stack.append((ln, li))

    return IsolationTree(
        np.array(feature, dtype=np.intp), np.array(threshold, dtype=float),
        np.array(left, dtype=np.intp), np.array(right, dtype=np.intp),
        np.array(size, dtype=np.intp), np.array(depth, dtype=float), int(max_depth),
    )


def path_length(tree: IsolationTree, x) -> float:
    """Depth of the leaf ``x`` reaches plus ``c`` of that leaf's instance count."""
    return float(tree.path_lengths(np.atleast_2d(x))[0])


class IsolationForest:
    """An ensemble of isolation trees fitted on seeded subsamples."""

    def __init__(self, config: ForestConfig):
        self.config = config
        self.trees: list[IsolationTree] = []
        self.sample_size = 0

    def fit(self, X) -> "IsolationForest":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = len(X)
        if n < 2:
            raise TooFewRows(f"need at least 2 rows, got {n}")
        psi = min(int(self.config.subsample_size), n)
        max_depth = math.ceil(math.log2(psi))
        self.sample_size = psi
        self.trees = []
        for i in range(int(self.config.n_trees)):
            rng = np.random.default_rng(np.random.SeedSequence([int(self.config.rng_seed), i]))
            rows = np.sort(rng.choice(n, size=psi, replace=False)) if psi < n else np.arange(n)
            self.trees.append(build_tree(X[rows], rng, max_depth))
        return self

    def mean_path(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.path_lengths(X)
        return total / len(self.trees)

    def score(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(scores, mean_path)`` for every row of ``X``."""
        mp = self.mean_path(X)
        return anomaly_score(mp, self.sample_size), mp


def n_flags(contamination: float, n_rows: int) -> int:
    # rounding first keeps e.g. 0.07 * 100 from ceiling to 8
    return min(n_rows, math.ceil(round(contamination * n_rows, 9)))


def top_k_flags(scores: np.ndarray, k: int) -> np.ndarray:
    """Flag the ``k`` highest scores; ties go to the earlier row."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    flags = np.zeros(len(scores), dtype=bool)
    flags[order[:k]] = True
    return flags


@dataclass
class AnomalyReport:
    row_keys: list[tuple[str, dt.date]]
    scores: np.ndarray
    mean_path: np.ndarray
    flags: np.ndarray
    threshold: float
    config: ForestConfig
    variable: str = ""
    values: np.ndarray | None = None
    # +1 above the station-variable median, -1 below, 0 at it (univariate only)
    sides: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.scores)

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())

    def dates(self) -> list[dt.date]:
        return [k[1] for k in self.row_keys]

    def with_contamination(self, contamination: float) -> "AnomalyReport":
        """Re-threshold the same scores at another contamination level."""
        cfg = self.config.with_contamination(contamination)
        flags = top_k_flags(self.scores, n_flags(contamination, self.n_rows))
        return AnomalyReport(
            self.row_keys, self.scores, self.mean_path, flags, _threshold(self.scores, flags),
            cfg, self.variable, self.values, self.sides,
        )

    def to_csv(self) -> str:
        out = io.StringIO(newline="")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for (sid, day), s, mp, f in zip(self.row_keys, self.scores, self.mean_path, self.flags):
            w.writerow([sid, _iso(day), self.variable, repr(float(s)), repr(float(mp)), int(f)])
        return out.getvalue()

    def to_json(self) -> str:
        doc = {
            "variable": self.variable,
            "config": self.config.to_dict(),
            "threshold": self.threshold,
            "n_rows": self.n_rows,
            "n_flagged": self.n_flagged,
            "rows": [
                {"station_id": sid, "date": _iso(day), "score": float(s),
                 "mean_path": float(mp), "flag": bool(f)}
                for (sid, day), s, mp, f in zip(self.row_keys, self.scores, self.mean_path, self.flags)
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def _iso(day) -> str:
    return day.isoformat() if hasattr(day, "isoformat") else str(day)


def _threshold(scores: np.ndarray, flags: np.ndarray) -> float:
    return float(scores[flags].min()) if flags.any() else float("inf")


def score_all(data: FeatureMatrix, config: ForestConfig) -> AnomalyReport:
    """Fit a forest on ``data`` and flag the top ``ceil(contamination * n)`` rows."""
    config.validate()
    if data.n_rows < 2:
        raise TooFewRows(f"need at least 2 rows, got {data.n_rows}")
    forest = IsolationForest(config).fit(data.values)
    scores, mp = forest.score(data.values)
    flags = top_k_flags(scores, n_flags(config.contamination, data.n_rows))
    keys = data.row_keys or [("", i) for i in range(data.n_rows)]
    return AnomalyReport(
        list(keys), scores, mp, flags, _threshold(scores, flags), config,
        variable="+".join(data.columns),
    )


def score_series(series: ClimateSeries, config: ForestConfig) -> AnomalyReport:
    """Univariate detection over the observed days of one daily series.

    MISSING days are skipped. Each row also records which side of the
    series median it falls on.
    """
    keep = np.flatnonzero(~np.isnan(series.values))
    values = series.values[keep]
    keys = [(series.station_id, series.date_at(i)) for i in keep]
    data = FeatureMatrix(values, keys, (str(series.variable),))
    report = score_all(data, config)
    report.values = values
    report.sides = np.sign(values - np.median(values)).astype(int) if len(values) else values
    return report


@dataclass
class TuningResult:
    best: float
    metrics: dict[float, "object"]
    report: AnomalyReport


def tune_contamination(
    data: FeatureMatrix | ClimateSeries, catalog: Sequence, grid: Sequence[float] = DEFAULT_GRID,
    config: ForestConfig | None = None, tolerance_days: int = 1,
) -> TuningResult:
    """Pick the contamination on ``grid`` with the best day-level F1 against the catalogue.

    The forest is fitted once; only the threshold changes across the grid.
    Equal F1 values resolve to the smaller contamination.
    """
    from .alignment import align

    if not catalog:
        raise EmptyCatalog("tuning needs at least one catalogued event")
    if not grid:
        raise ValueError("empty contamination grid")
    config = config or ForestConfig()
    grid = sorted(float(g) for g in grid)
    base = config.with_contamination(grid[0])
    if isinstance(data, ClimateSeries):
        report = score_series(data, base)
    else:
        report = score_all(data, base)
    metrics = {}
    best, best_f1, best_report = None, -1.0, None
    for g in grid:
        r = report.with_contamination(g)
        m = align(r, catalog, tolerance_days=tolerance_days)
        metrics[g] = m
        if m.f1 > best_f1:
            best, best_f1, best_report = g, m.f1, r
    return TuningResult(best, metrics, best_report)
