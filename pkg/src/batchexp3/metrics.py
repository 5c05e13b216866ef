"""Regret against the best fixed bid in hindsight, and run diagnostics.

Regret uses the common-random-number counterfactual table from the
simulator: the learner's realized value and every fixed bid's value are
read from the same replayed contests.  Regret can be negative on a single
realization when the learner switches bids well.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .feedback_pipeline import EventLog

GROUPS = ("profitable", "unprofitable", "low_traffic")


class MetricsError(ValueError):
    pass


def regret_bound(n_bids: int, q: int, horizon: int, delta: int, n_items: int = 1) -> float:
    """``n * (2 sqrt(q T |B| log|B|) + delta)``."""
    return n_items * (2.0 * math.sqrt(q * horizon * n_bids * math.log(n_bids)) + delta)


@dataclass
class RegretReport:
    best_bid_index: list[int]
    hindsight: list[float]
    realized: list[float]
    bound_per_item: float
    bid_cents: list[int] = field(default_factory=list)

    @property
    def per_item(self) -> list[float]:
        return [h - r for h, r in zip(self.hindsight, self.realized)]

    @property
    def total(self) -> float:
        return float(sum(self.per_item))

    @property
    def bound(self) -> float:
        return self.bound_per_item * len(self.hindsight)

    def write(self, path, unit: str = "") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item", "best_bid_index", "best_bid_cents", "hindsight", "realized",
                        "regret", "bound"])
            for j, (i, h, r) in enumerate(zip(self.best_bid_index, self.hindsight, self.realized)):
                cents = self.bid_cents[i] if self.bid_cents else ""
                w.writerow([j, i, cents, f"{h:.6f}", f"{r:.6f}", f"{h - r:.6f}",
                            f"{self.bound_per_item:.6f}"])
            w.writerow(["total", "", "", f"{sum(self.hindsight):.6f}", f"{sum(self.realized):.6f}",
                        f"{self.total:.6f}", f"{self.bound:.6f}"])


def compute_regret(event_log: EventLog, counterfactual: np.ndarray, q: int, delta: int,
                   bid_cents: Sequence[int] = (), up_to: int | None = None) -> RegretReport:
    """Regret from a ``(n_items, n_rounds, n_bids)`` counterfactual table.

    The realized value of each row is the table entry at the placed bid, so
    the table may hold raw profits or normalized rewards.  Only rounds
    ``<= up_to`` are counted when given.
    """
    cf = np.asarray(counterfactual)
    if cf.ndim != 3:
        raise MetricsError("counterfactual table must have shape (n_items, n_rounds, n_bids)")
    n_items, n_rounds, n_bids = cf.shape
    horizon = max((r.round for r in event_log.rows), default=0)
    if up_to is not None:
        horizon = min(horizon, up_to)
    if horizon > n_rounds:
        raise MetricsError(f"counterfactual table covers {n_rounds} rounds, log has {horizon}")
    seen = np.zeros((n_items, horizon), dtype=bool)
    realized = np.zeros(n_items)
    for r in event_log.rows:
        if r.round > horizon:
            continue
        if r.item >= n_items:
            raise MetricsError(f"no counterfactual rows for item {r.item}")
        realized[r.item] += cf[r.item, r.round - 1, r.bid_index]
        seen[r.item, r.round - 1] = True
    if not seen.all():
        raise MetricsError("event log is missing rows for some (round, item)")
    if not np.all(np.isfinite(cf[:, :horizon])):
        raise MetricsError("counterfactual table has missing entries")
    sums = cf[:, :horizon].sum(axis=1)
    best = sums.argmax(axis=1)
    hindsight = sums[np.arange(n_items), best]
    return RegretReport([int(b) for b in best], [float(h) for h in hindsight],
                        [float(x) for x in realized],
                        regret_bound(n_bids, q, horizon or q, delta), list(bid_cents))


def policy_entropy(row) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(row, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def policies_by_round(history, horizon: int) -> np.ndarray:
    """Policy in force at each round 1..horizon from committed snapshots.

    ``history`` is the scheduler's list of ``SnapshotRecord``.  A snapshot
    committed at the end of round ``r`` governs rounds ``> r``.
    """
    out = np.empty((horizon,) + history[0].probs.shape)
    idx = 0
    for t in range(1, horizon + 1):
        while idx + 1 < len(history) and history[idx + 1].round < t:
            idx += 1
        out[t - 1] = history[idx].probs
    return out


def scores_by_round(history, horizon: int) -> np.ndarray:
    out = np.empty((horizon,) + history[0].scores.shape)
    idx = 0
    for t in range(1, horizon + 1):
        while idx + 1 < len(history) and history[idx + 1].round < t:
            idx += 1
        out[t - 1] = history[idx].scores
    return out


def entropy_collapse_round(policies: np.ndarray, item: int = 0, fraction: float = 0.5) -> int | None:
    """First round whose policy entropy is below ``fraction * log|B|``; None if never."""
    n_bids = policies.shape[-1]
    threshold = fraction * math.log(n_bids)
    for t in range(policies.shape[0]):
        if policy_entropy(policies[t, item]) < threshold:
            return t + 1
    return None


def item_totals(event_log: EventLog, n_items: int) -> dict[str, np.ndarray]:
    clicks = np.zeros(n_items)
    costs = np.zeros(n_items)
    gain = np.zeros(n_items)
    for r in event_log.rows:
        clicks[r.item] += r.clicks
        costs[r.item] += r.payment_cents
        gain[r.item] += r.gain_cents
    return {"clicks": clicks, "costs": costs, "gain": gain}


def assign_groups(event_log: EventLog, n_items: int, traffic_threshold: float,
                  gain_to_cost_cutoff: float) -> list[str]:
    """Low traffic: total clicks below the threshold.  Profitable: the rest with
    gain-to-cost ratio at or above the cutoff."""
    tot = item_totals(event_log, n_items)
    groups = []
    for j in range(n_items):
        if tot["clicks"][j] < traffic_threshold:
            groups.append("low_traffic")
            continue
        cost, gain = tot["costs"][j], tot["gain"][j]
        ratio = gain / cost if cost > 0 else (math.inf if gain > 0 else 0.0)
        groups.append("profitable" if ratio >= gain_to_cost_cutoff else "unprofitable")
    return groups


def group_summary(event_log: EventLog, n_items: int, traffic_threshold: float,
                  gain_to_cost_cutoff: float, groups: Sequence[str] | None = None
                  ) -> dict[str, dict[str, float]]:
    """Percent of products, clicks, costs and gain held by each group.

    Empty groups appear with zeros.  A column whose total is zero is all zeros.
    """
    if groups is None:
        groups = assign_groups(event_log, n_items, traffic_threshold, gain_to_cost_cutoff)
    tot = item_totals(event_log, n_items)
    tot["products"] = np.ones(n_items)
    labels = np.asarray(groups)
    table = {}
    for g in GROUPS:
        mask = labels == g
        table[g] = {}
        for col in ("products", "clicks", "costs", "gain"):
            total = tot[col].sum()
            table[g][col] = float(100.0 * tot[col][mask].sum() / total) if total > 0 else 0.0
    return table


def write_group_summary(table: Mapping[str, Mapping[str, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "pct_products", "pct_clicks", "pct_costs", "pct_gain"])
        for g in GROUPS:
            row = table[g]
            w.writerow([g] + [f"{row[c]:.6f}" for c in ("products", "clicks", "costs", "gain")])


@dataclass
class HeatmapExport:
    """Bids (rows) by days (columns).  ``profit`` is rescaled into [-1, 1]."""

    name: str
    bid_cents: list[int]
    profit: np.ndarray
    placement: np.ndarray

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        paths = (out_dir / f"heatmap_profit_{self.name}.csv",
                 out_dir / f"heatmap_placement_{self.name}.csv")
        for path, grid, fmt in ((paths[0], self.profit, "{:.6f}"), (paths[1], self.placement, "{:d}")):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bid_cents"] + [f"day_{d + 1}" for d in range(grid.shape[1])])
                for b, row in zip(self.bid_cents, grid):
                    w.writerow([b] + [fmt.format(int(v) if fmt == "{:d}" else float(v)) for v in row])
        return paths


def rescale_max_abs(grid: np.ndarray) -> np.ndarray:
    m = np.abs(grid).max() if grid.size else 0.0
    return grid / m if m > 0 else np.zeros_like(grid, dtype=np.float64)


def _grids(rows, n_bids: int, n_days: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    total = np.zeros((n_bids, n_days))
    count = np.zeros((n_bids, n_days), dtype=np.int64)
    for r in rows:
        d = (r.round - 1) // q
        total[r.bid_index, d] += r.profit_cents
        count[r.bid_index, d] += 1
    mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return mean, count


def export_heatmaps(event_log: EventLog, bid_cents: Sequence[int], q: int, n_items: int,
                    groups: Sequence[str] | None = None) -> list[HeatmapExport]:
    """One profit and one placement grid per item, plus one per nonempty group."""
    n_bids = len(bid_cents)
    n_days = -(-max((r.round for r in event_log.rows), default=0) // q)
    by_item: dict[int, list] = {j: [] for j in range(n_items)}
    for r in event_log.rows:
        by_item[r.item].append(r)
    out = []
    for j in range(n_items):
        mean, count = _grids(by_item[j], n_bids, n_days, q)
        out.append(HeatmapExport(f"item{j}", list(bid_cents), rescale_max_abs(mean), count))
    if groups is not None:
        for g in GROUPS:
            members = [j for j in range(n_items) if groups[j] == g]
            if not members:
                continue
            rows = [r for j in members for r in by_item[j]]
            mean, count = _grids(rows, n_bids, n_days, q)
            out.append(HeatmapExport(f"group_{g}", list(bid_cents), rescale_max_abs(mean), count))
    return out
