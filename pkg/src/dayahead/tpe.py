"""Sequential model-based search over a discrete configuration space with a
Tree-structured Parzen Estimator.

All coordinates are finite integer domains and are modelled independently.
Small domains (binary flags, lag counts) use categorical estimators with an
add-one prior; wide ordinal domains (layer widths) use a discretised Gaussian
kernel around each observation plus one uniform prior component, so that
nearby widths share evidence.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .feature_space import COORDINATES, FeatureConfig, SearchSpace, sample_config

# domains up to this size are treated as categorical
CATEGORICAL_MAX = 16


@dataclass(frozen=True)
class Trial:
    config: FeatureConfig
    performance: float
    iteration: int
    duration: float = 0.0

    def to_json(self) -> str:
        perf = self.performance if math.isfinite(self.performance) else None
        return json.dumps(
            {"iteration": self.iteration, "config": self.config.as_dict(), "performance": perf, "duration": round(self.duration, 6)}
        )

    @classmethod
    def from_json(cls, line: str) -> "Trial":
        rec = json.loads(line)
        perf = rec["performance"]
        return cls(FeatureConfig(**rec["config"]), math.inf if perf is None else float(perf), int(rec["iteration"]), float(rec.get("duration", 0.0)))


@dataclass
class TrialHistory:
    space: SearchSpace
    trials: list[Trial] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def add(self, config: FeatureConfig, performance: float, duration: float = 0.0) -> Trial:
        trial = Trial(config, float(performance), len(self.trials) + 1, duration)
        self.trials.append(trial)
        return trial

    def best(self) -> Trial:
        # first minimum wins on ties
        return min(self.trials, key=lambda t: t.performance)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Configs as an ``(T, z)`` integer array and performances as ``(T,)``."""
        X = np.array([[getattr(t.config, k) for k in COORDINATES] for t in self.trials], dtype=float)
        y = np.array([t.performance for t in self.trials], dtype=float)
        return X.reshape(len(self.trials), len(COORDINATES)), y

    def dump(self, path: str | Path) -> None:
        Path(path).write_text("".join(t.to_json() + "\n" for t in self.trials))

    @classmethod
    def load(cls, path: str | Path, space: SearchSpace) -> "TrialHistory":
        trials = [Trial.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(space, trials)


@dataclass(frozen=True)
class TpeSettings:
    T: int = 1000
    n_startup: int = 20
    gamma: float = 0.25
    n_candidates: int = 24
    seed: int = 0
    # prefer candidates not yet evaluated; objectives here are deterministic
    skip_seen: bool = True

    def __post_init__(self):
        if self.T < 1 or self.n_startup < 1 or not 0 < self.gamma < 1 or self.n_candidates < 1:
            raise ValueError(f"invalid TPE settings {self}")


class _Parzen:
    """Probability table over one coordinate's domain."""

    def __init__(self, domain: tuple[int, ...], observed: Iterable[int]):
        k = len(domain)
        index = {v: i for i, v in enumerate(domain)}
        obs = np.array([index[v] for v in observed], dtype=int)
        if k <= CATEGORICAL_MAX:
            probs = np.bincount(obs, minlength=k).astype(float) + 1.0
        else:
            n = len(obs)
            sigma = max(1.0, k * (n + 1) ** -0.2 / 6.0)
            grid = np.arange(k)
            probs = np.full(k, 1.0 / k)
            if n:
                kern = np.exp(-0.5 * ((grid[None, :] - obs[:, None]) / sigma) ** 2)
                kern /= kern.sum(axis=1, keepdims=True)
                probs = probs + kern.sum(axis=0)
        self.domain = np.asarray(domain)
        self.probs = probs / probs.sum()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.domain), size=size, p=self.probs)

    def log_pdf(self, idx: np.ndarray) -> np.ndarray:
        return np.log(self.probs[idx])


def suggest(history: TrialHistory, settings: TpeSettings, rng: np.random.Generator) -> FeatureConfig:
    """Propose the next configuration given all completed trials.

    Below ``n_startup`` trials this is a uniform draw. Afterwards trials are
    split at the ``gamma`` quantile into a good set ``l`` (lowest
    performance values) and a bad set ``g``; ``n_candidates`` draws from
    ``l`` are scored by ``log l - log g`` and the best one is returned.
    With ``skip_seen`` the best candidate not already in the history wins,
    unless every candidate has been evaluated before.
    """
    space = history.space
    if len(history) < settings.n_startup:
        return sample_config(space, rng)

    ranked = sorted(history.trials, key=lambda t: t.performance)
    n_good = max(1, math.ceil(settings.gamma * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]

    score = np.zeros(settings.n_candidates)
    picks = {}
    for name in COORDINATES:
        domain = space.domains[name]
        l = _Parzen(domain, [getattr(t.config, name) for t in good])
        g = _Parzen(domain, [getattr(t.config, name) for t in bad])
        idx = l.sample(rng, settings.n_candidates)
        score += l.log_pdf(idx) - g.log_pdf(idx)
        picks[name] = l.domain[idx]
    if settings.skip_seen:
        seen = {t.config for t in history.trials}
        fresh = np.array([FeatureConfig(**{k: int(picks[k][i]) for k in COORDINATES}) not in seen
                          for i in range(settings.n_candidates)])
        if fresh.any():
            score = np.where(fresh, score, -np.inf)
    best = int(np.argmax(score))
    return FeatureConfig(**{k: int(picks[k][best]) for k in COORDINATES})


def optimize(
    objective: Callable[[FeatureConfig], float],
    space: SearchSpace,
    settings: TpeSettings,
    history: TrialHistory | None = None,
    log_path: str | Path | None = None,
    callback: Callable[[Trial], None] | None = None,
) -> tuple[FeatureConfig, TrialHistory]:
    """Run the search loop until ``settings.T`` trials exist.

    A passed ``history`` is resumed. Exceptions and non-finite values from
    ``objective`` are recorded as ``inf``. With ``log_path`` every trial is
    appended to a newline-delimited JSON log as soon as it finishes.
    """
    history = history if history is not None else TrialHistory(space)
    rng = np.random.default_rng(settings.seed)
    # replay the rng so a resumed run proposes what an uninterrupted one would
    replay = TrialHistory(space)
    for trial in history.trials:
        suggest(replay, settings, rng)
        replay.trials.append(trial)

    log = open(log_path, "a") if log_path is not None else None
    try:
        while len(history) < settings.T:
            config = suggest(history, settings, rng)
            start = time.perf_counter()
            try:
                perf = float(objective(config))
            except (ArithmeticError, ValueError, FloatingPointError):
                perf = math.inf
            if not math.isfinite(perf):
                perf = math.inf
            trial = history.add(config, perf, time.perf_counter() - start)
            if log is not None:
                log.write(trial.to_json() + "\n")
                log.flush()
            if callback is not None:
                callback(trial)
    finally:
        if log is not None:
            log.close()
    return history.best().config, history


def random_search(
    objective: Callable[[FeatureConfig], float], space: SearchSpace, T: int, seed: int
) -> tuple[FeatureConfig, TrialHistory]:
    """Uniform sampling baseline with the same bookkeeping as :func:`optimize`."""
    rng = np.random.default_rng(seed)
    history = TrialHistory(space)
    for _ in range(T):
        config = sample_config(space, rng)
        history.add(config, float(objective(config)))
    return history.best().config, history
