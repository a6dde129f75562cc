"""Functional ANOVA of a random-forest performance model.

Trees are grown on trial configurations expressed as positions within each
coordinate's domain. Every leaf therefore covers an axis-aligned box of
domain positions, and marginal predictions are exact box-volume weighted sums
over leaves rather than Monte-Carlo averages. Every domain value carries equal
weight.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateHistory
from .feature_space import COORDINATES, HYPERPARAMETERS, FeatureConfig, SearchSpace
from .tpe import TrialHistory


@dataclass
class RegressionTree:
    """Fitted tree plus its leaf boxes ``[lo, hi)`` in domain positions."""

    sizes: np.ndarray
    lo: np.ndarray  # (n_leaves, z)
    hi: np.ndarray  # (n_leaves, z)
    values: np.ndarray  # (n_leaves,)

    @property
    def n_leaves(self) -> int:
        return len(self.values)

    @property
    def volumes(self) -> np.ndarray:
        return np.prod((self.hi - self.lo) / self.sizes, axis=1)

    def predict(self, positions: np.ndarray) -> np.ndarray:
        positions = np.atleast_2d(positions)
        inside = (positions[:, None, :] >= self.lo[None]) & (positions[:, None, :] < self.hi[None])
        leaf = np.argmax(inside.all(axis=2), axis=1)
        return self.values[leaf]

    def mean(self) -> float:
        return float(self.volumes @ self.values)

    def variance(self) -> float:
        vol = self.volumes
        return float(vol @ self.values**2 - (vol @ self.values) ** 2)

    def marginal_table(self, dims: Sequence[int]) -> np.ndarray:
        """Mean prediction for every joint value of the coordinates ``dims``.

        Returns an array of shape ``[sizes[d] for d in dims]``.
        """
        dims = list(dims)
        frac = (self.hi - self.lo) / self.sizes
        rest = [d for d in range(len(self.sizes)) if d not in dims]
        weight = self.values * np.prod(frac[:, rest], axis=1)
        table = np.zeros([int(self.sizes[d]) for d in dims])
        for k in range(self.n_leaves):
            box = tuple(slice(int(self.lo[k, d]), int(self.hi[k, d])) for d in dims)
            table[box] += weight[k]
        return table


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    sizes: np.ndarray,
    min_leaf: int,
    max_features: int,
    rng: np.random.Generator,
) -> RegressionTree:
    z = X.shape[1]
    los, his, vals = [], [], []
    splittable = [d for d in range(z) if sizes[d] > 1]
    stack = [(np.arange(len(y)), np.zeros(z, dtype=int), sizes.astype(int).copy())]
    while stack:
        idx, lo, hi = stack.pop()
        split = None
        ys = y[idx]
        if len(idx) >= 2 * min_leaf and np.ptp(ys) > 0:
            order = rng.permutation(splittable)
            # try the sampled subset first, then the rest if it yields nothing
            for chunk in (order[:max_features], order[max_features:]):
                split = _best_split(X[idx], ys, chunk, min_leaf)
                if split is not None:
                    break
        if split is None:
            los.append(lo)
            his.append(hi)
            vals.append(float(ys.mean()))
            continue
        dim, cut = split
        left = X[idx, dim] <= cut
        lo_r, hi_l = lo.copy(), hi.copy()
        hi_l[dim] = cut + 1
        lo_r[dim] = cut + 1
        stack.append((idx[~left], lo_r, hi))
        stack.append((idx[left], lo, hi_l))
    return RegressionTree(sizes.astype(float), np.array(los), np.array(his), np.array(vals))


def _best_split(X: np.ndarray, y: np.ndarray, dims: Iterable[int], min_leaf: int) -> tuple[int, int] | None:
    """Lowest-SSE threshold split among ``dims``.

    Candidate cuts lie halfway (in domain positions) between consecutive
    distinct observed positions, so both child boxes are nonempty.
    """
    n = len(y)
    best, best_sse = None, np.inf
    total = y.sum()
    for dim in dims:
        order = np.argsort(X[:, dim], kind="stable")
        xs, ys = X[order, dim], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys**2)
        k = np.arange(1, n)  # left sizes
        valid = (xs[1:] != xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        left_sum, left_sq = csum[:-1], csq[:-1]
        sse = (left_sq - left_sum**2 / k) + (csq[-1] - left_sq - (total - left_sum) ** 2 / (n - k))
        sse = np.where(valid, sse, np.inf)
        i = int(np.argmin(sse))
        if sse[i] < best_sse - 1e-12:
            best_sse = sse[i]
            best = (int(dim), int((xs[i] + xs[i + 1]) // 2))
    return best


@dataclass
class PerformanceForest:
    space: SearchSpace
    trees: list[RegressionTree]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(self.space.domains[k]) for k in COORDINATES], dtype=float)

    def positions(self, configs: Sequence[FeatureConfig] | np.ndarray) -> np.ndarray:
        if isinstance(configs, np.ndarray):
            values = np.atleast_2d(configs)
        else:
            values = np.array([[getattr(c, k) for k in COORDINATES] for c in configs], dtype=float)
        return to_positions(values, self.space)

    def predict(self, configs) -> np.ndarray:
        pos = self.positions(configs)
        return np.mean([t.predict(pos) for t in self.trees], axis=0)


def to_positions(values: np.ndarray, space: SearchSpace) -> np.ndarray:
    out = np.empty_like(values, dtype=int)
    for d, name in enumerate(COORDINATES):
        dom = np.asarray(space.domains[name])
        pos = np.searchsorted(dom, values[:, d])
        if np.any(pos >= len(dom)) or np.any(dom[np.minimum(pos, len(dom) - 1)] != values[:, d]):
            raise ValueError(f"values of {name} outside its domain")
        out[:, d] = pos
    return out


def fit_forest(
    history: TrialHistory,
    n_trees: int = 30,
    min_leaf: int = 3,
    max_features: int | None = None,
    bootstrap: bool = True,
    seed: int = 0,
) -> PerformanceForest:
    """Fit regression trees mapping configurations to performance.

    Failed trials (non-finite performance) are left out. ``max_features``
    defaults to ``ceil(sqrt(z))`` coordinates per split.
    """
    X, y = history.matrix()
    keep = np.isfinite(y)
    X, y = X[keep], y[keep]
    if len(np.unique(y)) < 2:
        raise DegenerateHistory("need at least two distinct finite performances")
    space = history.space
    pos = to_positions(X, space)
    sizes = np.array([len(space.domains[k]) for k in COORDINATES])
    if max_features is None:
        max_features = math.ceil(math.sqrt(len(COORDINATES)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        rows = rng.integers(len(y), size=len(y)) if bootstrap else np.arange(len(y))
        trees.append(_grow(pos[rows], y[rows], sizes, min_leaf, max_features, rng))
    return PerformanceForest(space, trees)


@dataclass(frozen=True)
class MarginalPrediction:
    subset: tuple[str, ...]
    instantiation: tuple[int, ...]
    mean: float
    std: float


def marginal(forest: PerformanceForest, instantiation: Mapping[str, int]) -> MarginalPrediction:
    """Average predicted performance over all configurations that agree with
    ``instantiation`` on its coordinates."""
    if not instantiation:
        raise ValueError("instantiation must fix at least one coordinate")
    names = tuple(instantiation)
    dims = [COORDINATES.index(k) for k in names]
    index = tuple(forest.space.domains[k].index(v) for k, v in instantiation.items())
    per_tree = np.array([t.marginal_table(dims)[index] for t in forest.trees])
    return MarginalPrediction(names, tuple(instantiation.values()), float(per_tree.mean()), float(per_tree.std()))


def tree_effects(tree: RegressionTree, subsets: Iterable[Sequence[int]]) -> dict[tuple[int, ...], float]:
    """Exact variance contribution of each subset of coordinates for one tree.

    Effects are built bottom-up: the effect of ``U`` is its marginal table
    minus the effects of all proper subsets of ``U``.
    """
    effects: dict[tuple[int, ...], np.ndarray] = {(): np.array(tree.mean())}

    def effect(U: tuple[int, ...]) -> np.ndarray:
        if U in effects:
            return effects[U]
        f = tree.marginal_table(U)
        for r in range(len(U)):
            for W in itertools.combinations(U, r):
                sub = effect(W)
                shape = [f.shape[i] if U[i] in W else 1 for i in range(len(U))]
                f = f - sub.reshape(shape)
        effects[U] = f
        return f

    return {tuple(U): float(np.mean(effect(tuple(sorted(U))) ** 2)) for U in subsets}


@dataclass
class ImportanceReport:
    total_variance: float
    main: dict[str, float]
    pairwise: dict[tuple[str, str], float]
    marginals: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(repr=False)
    n_trees: int = 0

    @property
    def main_sum(self) -> float:
        return float(sum(self.main.values()))

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.main.items(), key=lambda kv: -kv[1])

    def to_text(self, labels: Mapping[str, str] | None = None, top_pairs: int = 10) -> str:
        labels = labels or {}
        width = max(len(labels.get(k, k)) for k in list(self.main) + ["All main effects"])
        lines = [f"Total performance variance: {self.total_variance:.4g}", ""]
        lines.append(f"{'':<{width}}  Contribution")
        lines.append(f"{'All main effects':<{width}}  {_pct(self.main_sum)}")
        for name, f in self.ranked():
            lines.append(f"{labels.get(name, name):<{width}}  {_pct(f)}")
        pairs = sorted(self.pairwise.items(), key=lambda kv: -kv[1])[:top_pairs]
        if pairs:
            lines += ["", "Largest pairwise effects"]
            for (a, b), f in pairs:
                lines.append(f"{a} x {b}: {_pct(f)}")
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {
            "total_variance": self.total_variance,
            "main": self.main,
            "pairwise": {f"{a},{b}": f for (a, b), f in self.pairwise.items()},
            "marginals": {
                k: {"values": v.tolist(), "mean": m.tolist(), "std": s.tolist()}
                for k, (v, m, s) in self.marginals.items()
            },
        }


def _pct(fraction: float) -> str:
    p = 100.0 * fraction
    return f"{p:.3g}%" if p < 10 else f"{p:.1f}%"


def decompose(forest: PerformanceForest, pairwise: bool = True) -> ImportanceReport:
    """Main and pairwise importance fractions averaged over trees.

    Trees whose prediction is constant over the space carry no variance and
    are skipped.
    """
    z = len(COORDINATES)
    active = [d for d in range(z) if forest.sizes[d] > 1]
    singles = [(d,) for d in range(z)]
    pairs = list(itertools.combinations(active, 2)) if pairwise else []
    main_acc = np.zeros(z)
    pair_acc = np.zeros(len(pairs))
    totals = []
    for tree in forest.trees:
        V = tree.variance()
        if V <= 1e-14 * max(1.0, tree.mean() ** 2):
            continue
        eff = tree_effects(tree, singles + pairs)
        main_acc += [eff[(d,)] / V for d in range(z)]
        pair_acc += [eff[p] / V for p in pairs]
        totals.append(V)
    if not totals:
        raise DegenerateHistory("forest predicts a constant performance")
    n = len(totals)
    marg = {}
    for d, name in enumerate(COORDINATES):
        tables = np.array([t.marginal_table([d]) for t in forest.trees])
        marg[name] = (np.asarray(forest.space.domains[name]), tables.mean(axis=0), tables.std(axis=0))
    return ImportanceReport(
        total_variance=float(np.mean(totals)),
        main={COORDINATES[d]: float(main_acc[d] / n) for d in range(z)},
        pairwise={(COORDINATES[a], COORDINATES[b]): float(pair_acc[i] / n) for i, (a, b) in enumerate(pairs)},
        marginals=marg,
        n_trees=n,
    )


@dataclass(frozen=True)
class SelectionResult:
    preselected_main: frozenset[str]
    preselected_pairwise: frozenset[str]
    selected: frozenset[str]
    binary: frozenset[str]
    integer: dict[str, int]
    epsilon: float

    def to_text(self) -> str:
        lines = [
            f"epsilon: {_pct(self.epsilon)}",
            f"main-effect preselection: {', '.join(sorted(self.preselected_main)) or '-'}",
            f"pairwise preselection: {', '.join(sorted(self.preselected_pairwise)) or '-'}",
            f"selected: {', '.join(sorted(self.selected)) or '-'}",
            f"selected binary features: {', '.join(sorted(self.binary)) or '-'}",
            "selected integer features: "
            + (", ".join(f"{k}={v}" for k, v in sorted(self.integer.items())) or "-"),
        ]
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "preselected_main": sorted(self.preselected_main),
            "preselected_pairwise": sorted(self.preselected_pairwise),
            "selected": sorted(self.selected),
            "binary": sorted(self.binary),
            "integer": dict(sorted(self.integer.items())),
        }


def select_features(
    report: ImportanceReport,
    epsilon: float = 0.005,
    candidates: Sequence[str] | None = None,
    space: SearchSpace | None = None,
    marginals: Mapping[str, tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None,
) -> SelectionResult:
    """Four-step threshold selection on the importance report.

    1. keep features whose main effect exceeds ``epsilon``;
    2. also keep features with any pairwise effect above ``epsilon``;
    3. of those, drop features whose predicted error is never strictly lower
       with the feature included than with ``theta = 0``; coordinates whose
       domain lacks 0 skip this step;
    4. split into binary features and integer features, the latter paired
       with the value of lowest predicted error.

    ``candidates`` defaults to every coordinate except the layer widths.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    marginals = marginals if marginals is not None else report.marginals
    candidates = list(candidates) if candidates is not None else [k for k in report.main if k not in HYPERPARAMETERS]
    cand = set(candidates)
    u1 = {k for k in candidates if report.main[k] > epsilon}
    u2 = {k for pair, f in report.pairwise.items() if f > epsilon for k in pair if k in cand}
    selected = set()
    for k in u1 | u2:
        values, mean, _ = marginals[k]
        values = list(values)
        if 0 not in values:
            selected.add(k)
            continue
        excluded = mean[values.index(0)]
        if any(m < excluded for v, m in zip(values, mean) if v != 0):
            selected.add(k)

    def is_binary(k: str) -> bool:
        if space is not None:
            return space.is_binary(k)
        return set(int(v) for v in marginals[k][0]) <= {0, 1}

    binary = {k for k in selected if is_binary(k)}
    integer = {}
    for k in selected - binary:
        values, mean, _ = marginals[k]
        integer[k] = int(values[int(np.argmin(mean))])
    return SelectionResult(frozenset(u1), frozenset(u2), frozenset(selected), frozenset(binary), integer, epsilon)
