"""Reward normalization: traffic scaling per period, then minimax into [0, 1].

Traffic factors (alphas) are shared by all items; the minimax bounds are the
5th and 95th percentiles of each item's historical round profit.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MIN_HISTORY = 20


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationConfig:
    alphas: tuple[float, ...]
    r_min: tuple[float, ...]
    r_max: tuple[float, ...]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        r_min = tuple(float(x) for x in self.r_min)
        r_max = tuple(float(x) for x in self.r_max)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "r_min", r_min)
        object.__setattr__(self, "r_max", r_max)
        if not alphas:
            raise NormalizationError("alphas: need one factor per period")
        if any(not 0.0 < a <= 1.0 for a in alphas):
            raise NormalizationError(f"alphas: every factor must be in (0, 1], got {alphas}")
        if max(alphas) != 1.0:
            raise NormalizationError(f"alphas: largest factor must be exactly 1, got {max(alphas)}")
        if len(r_min) != len(r_max):
            raise NormalizationError("r_min and r_max must have one entry per item")
        for j, (lo, hi) in enumerate(zip(r_min, r_max)):
            if not lo < hi:
                raise NormalizationError(f"r_min[{j}]={lo} must be < r_max[{j}]={hi}")

    @property
    def n_items(self) -> int:
        return len(self.r_min)

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas), "r_min": list(self.r_min), "r_max": list(self.r_max)}


def traffic_normalize(profit, period: int, alphas: Sequence[float]):
    """Scale a round profit by the traffic factor of its period (1-based)."""
    if not 1 <= period <= len(alphas):
        raise NormalizationError(f"period {period} outside 1..{len(alphas)}")
    return alphas[period - 1] * profit


def minimax_normalize(value, r_min: float, r_max: float):
    """Affine map sending r_min to 0 and r_max to 1, clamped into [0, 1]."""
    if not r_min < r_max:
        raise NormalizationError(f"degenerate bounds r_min={r_min} r_max={r_max}")
    out = np.clip((np.asarray(value, dtype=np.float64) - r_min) / (r_max - r_min), 0.0, 1.0)
    return out if out.ndim else float(out)


def fit_quantiles(history: Mapping[int, Sequence[float]] | Sequence[Sequence[float]]
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-item 5th and 95th percentiles (linear interpolation)."""
    if isinstance(history, Mapping):
        items = [history[k] for k in sorted(history)]
    else:
        items = list(history)
    lows, highs = [], []
    for j, values in enumerate(items):
        values = np.asarray(values, dtype=np.float64)
        if values.size < MIN_HISTORY:
            raise NormalizationError(
                f"item {j}: need at least {MIN_HISTORY} historical profits, got {values.size}")
        lo, hi = np.percentile(values, [5, 95])
        if not lo < hi:
            raise NormalizationError(f"item {j}: degenerate quantiles ({lo}, {hi})")
        lows.append(lo)
        highs.append(hi)
    return np.array(lows), np.array(highs)


def fit_alphas(traffic_history: Sequence[Sequence[float]]) -> tuple[float, ...]:
    """Mean volume of each period divided by the largest period mean.

    ``traffic_history[l]`` holds the observed volumes of period ``l + 1``.
    """
    means = []
    for l, volumes in enumerate(traffic_history):
        volumes = np.asarray(volumes, dtype=np.float64)
        m = volumes.mean() if volumes.size else 0.0
        if not m > 0:
            raise NormalizationError(f"period {l + 1}: average traffic volume is zero")
        means.append(float(m))
    top = max(means)
    return tuple(m / top for m in means)


class Normalizer:
    """Composed traffic-then-minimax normalization for every item."""

    def __init__(self, config: NormalizationConfig):
        self.config = config

    def __call__(self, item: int, period: int, profit):
        scaled = traffic_normalize(profit, period, self.config.alphas)
        return minimax_normalize(scaled, self.config.r_min[item], self.config.r_max[item])

    def table(self, profits: np.ndarray, q: int) -> np.ndarray:
        """Normalize a ``(n_items, n_rounds, ...)`` profit table, rounds 1-based."""
        alphas = np.asarray(self.config.alphas)
        n_rounds = profits.shape[1]
        period_idx = np.arange(n_rounds) % q
        shape = (1, n_rounds) + (1,) * (profits.ndim - 2)
        scaled = alphas[period_idx].reshape(shape) * profits
        lo = np.asarray(self.config.r_min).reshape((-1,) + (1,) * (profits.ndim - 1))
        hi = np.asarray(self.config.r_max).reshape((-1,) + (1,) * (profits.ndim - 1))
        return np.clip((scaled - lo) / (hi - lo), 0.0, 1.0)


def read_history(path: str | Path) -> list[dict]:
    """Read a history table with columns ``item, period`` and ``profit`` and/or ``volume``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if not {"item", "period"} <= fields or not fields & {"profit", "volume"}:
            raise NormalizationError(
                f"{path}: history needs columns item, period and profit or volume; got {sorted(fields)}")
        rows = []
        for row in reader:
            out = {"item": int(row["item"]), "period": int(row["period"])}
            for key in ("profit", "volume"):
                if row.get(key) not in (None, ""):
                    out[key] = float(row[key])
            rows.append(out)
    return rows


def write_history(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["item", "period", "profit", "volume"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def fit_from_history(rows: Iterable[dict], n_items: int, q: int) -> NormalizationConfig:
    """Fit alphas from ``volume`` and per-item quantiles from ``profit``."""
    profits: dict[int, list[float]] = defaultdict(list)
    volumes: dict[int, list[float]] = defaultdict(list)
    for row in rows:
        if "profit" in row:
            profits[row["item"]].append(row["profit"])
        if "volume" in row:
            volumes[row["period"]].append(row["volume"])
    missing = [j for j in range(n_items) if j not in profits]
    if missing:
        raise NormalizationError(f"history has no profit rows for items {missing}")
    extra = sorted(set(volumes) - set(range(1, q + 1)))
    if extra:
        raise NormalizationError(f"history has volume rows for periods {extra} outside 1..{q}")
    alphas = fit_alphas([volumes.get(l, []) for l in range(1, q + 1)])
    lo, hi = fit_quantiles([profits[j] for j in range(n_items)])
    return NormalizationConfig(alphas, tuple(lo), tuple(hi))
