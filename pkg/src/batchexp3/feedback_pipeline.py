"""Batch grid, delay queue and the two-stream bid/update schedule.

The bid stream runs every round (a 3-hour period by default) and samples from
the last committed policy snapshot.  The update stream runs once per batch
(one day, ``q`` rounds): at the end of batch ``k`` it normalizes and releases
the records of batch ``k - delta``, updates all items, and commits a new
snapshot.  Both streams are driven by one deterministic event loop.  At a day
boundary the update commits before the next bid is sampled.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .auction_sim import AggregatedOutcome, AuctionEnvironment, profit
from .bandit_core import (BidSpace, PlacedBid, ScoreTable, apply_batch_update,
                          init_learner, policy_matrix, sample_bids)
from .normalization import Normalizer
from .streams import sampling_stream

log = logging.getLogger(__name__)

EVENT_LOG_FORMAT = 1


class ScheduleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BatchGrid:
    """``horizon / q`` equal batches of ``q`` rounds, feedback delayed ``delta`` batches."""

    q: int
    delta: int
    horizon: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"q must be a positive integer, got {self.q}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.horizon < 1 or self.horizon % self.q:
            raise ValueError(f"horizon {self.horizon} must be a positive multiple of q={self.q}")

    @property
    def n_batches(self) -> int:
        return self.horizon // self.q

    def batch_index(self, t: int) -> int:
        if not 1 <= t <= self.horizon:
            raise ValueError(f"round {t} outside 1..{self.horizon}")
        return batch_index(t, self.q)

    def period(self, t: int) -> int:
        """Position of round ``t`` inside its batch, 1..q."""
        return (t - 1) % self.q + 1

    def is_boundary(self, t: int) -> bool:
        return t % self.q == 0

    def batch_rounds(self, k: int) -> range:
        return range((k - 1) * self.q + 1, k * self.q + 1)

    def release_boundary(self, t: int) -> int | None:
        """Batch whose end delivers round ``t``'s feedback, or None past the horizon."""
        k = self.batch_index(t) + self.delta
        return k if k <= self.n_batches else None


def batch_index(t: int, q: int) -> int:
    """Index ``ceil(t / q)`` of the batch containing round ``t``."""
    if t < 1:
        raise ValueError(f"round must be >= 1, got {t}")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return -(-t // q)


@dataclass
class PendingRecord:
    placed: PlacedBid
    outcome: AggregatedOutcome
    period: int
    normalized_reward: float | None = None

    @property
    def key(self) -> tuple[int, int]:
        return self.placed.round, self.placed.item


class DelayQueue:
    """Holds records until the boundary ``delta`` batches after their own."""

    def __init__(self, grid: BatchGrid):
        self.grid = grid
        self._pending: OrderedDict[int, list[PendingRecord]] = OrderedDict()
        self._keys: set[tuple[int, int]] = set()
        self.last_boundary = 0
        self.enqueued = 0
        self.released = 0
        self.discarded = 0

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._keys

    def enqueue(self, record: PendingRecord) -> None:
        k = self.grid.batch_index(record.placed.round)
        if k != self.last_boundary + 1:
            raise ScheduleError(
                f"round {record.placed.round} is in batch {k}, but batch "
                f"{self.last_boundary + 1} is executing")
        if record.key in self._keys:
            raise ScheduleError(f"duplicate record for (round, item) = {record.key}")
        self._pending.setdefault(k, []).append(record)
        self._keys.add(record.key)
        self.enqueued += 1

    def releasable_at(self, record: PendingRecord) -> int:
        return self.grid.batch_index(record.placed.round) + self.grid.delta

    def release_at_boundary(self, k: int) -> list[PendingRecord]:
        """Remove and return every record of batches ``<= k - delta``.

        Normally that is exactly batch ``k - delta``; older batches are only
        present after a failed update put its records back.
        """
        if k != self.last_boundary + 1:
            raise ScheduleError(f"boundary {k} called out of order (last was {self.last_boundary})")
        self.last_boundary = k
        out = []
        for b in [b for b in self._pending if b <= k - self.grid.delta]:
            out.extend(self._pending.pop(b))
        for rec in out:
            self._keys.discard(rec.key)
        self.released += len(out)
        return out

    def restore(self, records: Iterable[PendingRecord]) -> None:
        """Put back records whose update failed; they go out at the next boundary."""
        for rec in records:
            k = self.grid.batch_index(rec.placed.round)
            self._pending.setdefault(k, []).append(rec)
            self._keys.add(rec.key)
            self.released -= 1
        self._pending = OrderedDict(sorted(self._pending.items()))

    def load_state(self, records: Iterable[PendingRecord], last_boundary: int,
                   enqueued: int, released: int, discarded: int) -> None:
        """Reinstate a checkpointed queue."""
        self._pending.clear()
        self._keys.clear()
        for rec in records:
            self._pending.setdefault(self.grid.batch_index(rec.placed.round), []).append(rec)
            self._keys.add(rec.key)
        self._pending = OrderedDict(sorted(self._pending.items()))
        self.last_boundary = last_boundary
        self.enqueued, self.released, self.discarded = enqueued, released, discarded

    def discard_all(self) -> int:
        n = len(self._keys)
        self._pending.clear()
        self._keys.clear()
        self.discarded += n
        return n

    def tail(self) -> list[PendingRecord]:
        """Records not yet released, in batch order."""
        return [rec for b in sorted(self._pending) for rec in self._pending[b]]


@dataclass(frozen=True)
class EventRow:
    round: int
    period: int
    item: int
    bid_cents: int
    bid_index: int
    sampling_prob: float
    contest_size: int
    clicks: int
    payment_cents: int
    gain_cents: int
    snapshot_version: int
    release_batch: int | None

    @property
    def profit_cents(self) -> int:
        return self.gain_cents - self.payment_cents


@dataclass(frozen=True)
class UpdateEvent:
    """One non-sample event: a boundary commit, a failed update, a reset or a parameter change."""

    kind: str
    round: int
    batch: int
    released_count: int
    snapshot_version: int
    observed_through: int
    eta: float
    detail: str = ""


ROW_FIELDS = [f.name for f in fields(EventRow)]
UPDATE_FIELDS = [f.name for f in fields(UpdateEvent)]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class EventLog:
    rows: list[EventRow]
    updates: list[UpdateEvent]
    meta: dict

    @classmethod
    def empty(cls, meta: dict | None = None) -> "EventLog":
        return cls([], [], dict(meta or {}))

    def _header(self, title: str) -> str:
        lines = [f"# batchexp3 {title}", f"# format_version={EVENT_LOG_FORMAT}"]
        lines += [f"# {k}={self.meta[k]}" for k in sorted(self.meta)]
        return "\n".join(lines) + "\n"

    def rows_text(self) -> str:
        buf = io.StringIO()
        buf.write(self._header("event log"))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
        return buf.getvalue()

    def updates_text(self) -> str:
        buf = io.StringIO()
        buf.write(self._header("update log"))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(UPDATE_FIELDS)
        for u in self.updates:
            w.writerow([_fmt(getattr(u, f)) for f in UPDATE_FIELDS])
        return buf.getvalue()

    def write(self, events_path, updates_path) -> None:
        with open(events_path, "w", newline="") as fh:
            fh.write(self.rows_text())
        with open(updates_path, "w", newline="") as fh:
            fh.write(self.updates_text())

    @classmethod
    def read(cls, events_path, updates_path) -> "EventLog":
        meta, rows = _read_table(events_path)
        _, updates = _read_table(updates_path)
        ints = {"round", "period", "item", "bid_cents", "bid_index", "contest_size", "clicks",
                "payment_cents", "gain_cents", "snapshot_version", "batch", "released_count",
                "observed_through"}

        def conv(name, s):
            if name == "release_batch":
                return int(s) if s else None
            if name in ints:
                return int(s)
            if name in ("sampling_prob", "eta"):
                return float(s)
            return s

        return cls([EventRow(**{k: conv(k, v) for k, v in r.items()}) for r in rows],
                   [UpdateEvent(**{k: conv(k, v) for k, v in u.items()}) for u in updates],
                   meta)

    def item_rows(self, item: int) -> list[EventRow]:
        return [r for r in self.rows if r.item == item]


def _read_table(path) -> tuple[dict, list[dict]]:
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            if "=" in line:
                k, v = line[2:].split("=", 1)
                meta[k] = v
        else:
            body.append(line)
    meta.pop("format_version", None)
    return meta, list(csv.DictReader(body))


@dataclass
class SnapshotRecord:
    """A committed policy snapshot, kept in memory when ``keep_history`` is set."""

    version: int
    round: int
    eta: float
    scores: np.ndarray
    probs: np.ndarray


class BatchScheduler:
    """State of a running experiment: learner, delay queue, RNG streams and log.

    ``step()`` advances one round.  A failed update leaves the previous
    snapshot in force and puts its records back in the queue.
    """

    def __init__(self, grid: BatchGrid, bid_space: BidSpace, eta: float,
                 env: AuctionEnvironment, normalizer: Normalizer | Callable, seed: int,
                 resets: Sequence[tuple[int, float]] = (), items: Sequence[int] | None = None,
                 keep_history: bool = False, meta: dict | None = None):
        self.grid = grid
        self.bid_space = bid_space
        self.env = env
        self.normalizer = normalizer
        self.seed = int(seed)
        self.resets = {int(r): float(e) for r, e in resets}
        self.n_items = env.n_items
        self.items = list(range(self.n_items)) if items is None else sorted(items)
        self.table, self.policy = init_learner(bid_space, eta, self.n_items)
        self.eta = self.policy.eta
        self.snapshot_version = 0
        self.observed_through = 0
        self.queue = DelayQueue(grid)
        self.rngs = {j: sampling_stream(self.seed, j) for j in self.items}
        self.round = 0
        self.log = EventLog.empty(meta)
        self.keep_history = keep_history
        self.history: list[SnapshotRecord] = []
        self._remember()

    @property
    def done(self) -> bool:
        return self.round >= self.grid.horizon

    def _remember(self) -> None:
        if self.keep_history:
            self.history.append(SnapshotRecord(self.snapshot_version, self.round, self.eta,
                                               self.table.scores.copy(), self.policy.probs.copy()))

    def _commit(self, table: ScoreTable, eta: float) -> None:
        self.table = table
        self.eta = eta
        self.policy = policy_matrix(table, eta)
        self.snapshot_version += 1
        self._remember()

    def reset(self, eta: float, detail: str = "reset") -> None:
        """Zero all scores, switch the learning rate and drop pending feedback."""
        dropped = self.queue.discard_all()
        table, _ = init_learner(self.bid_space, eta, self.n_items)
        table.round_counter = self.round
        self.observed_through = 0
        self._commit(table, float(eta))
        self.log.updates.append(UpdateEvent(
            "reset", self.round + 1, self.grid.batch_index(self.round + 1), 0,
            self.snapshot_version, self.observed_through, self.eta,
            f"{detail}; discarded={dropped}"))

    def change_eta(self, eta: float) -> None:
        """Keep the scores, switch the learning rate (mid-flight adjustment)."""
        old = self.eta
        self._commit(self.table, float(eta))
        self.log.updates.append(UpdateEvent(
            "param_change", self.round, batch_index(self.round, self.grid.q) if self.round else 0,
            0, self.snapshot_version, self.observed_through, self.eta, f"eta {old!r} -> {eta!r}"))

    def step(self) -> None:
        if self.done:
            raise ScheduleError("horizon reached")
        t = self.round + 1
        if t in self.resets:
            self.reset(self.resets[t])
        period = self.grid.period(t)
        release = self.grid.release_boundary(t)
        for placed in sample_bids(self.policy, self.rngs, t, self.items):
            bid = self.bid_space[placed.bid_index]
            outcome = self.env.run_contest(placed.item, bid, t, period)
            self.queue.enqueue(PendingRecord(placed, outcome, period))
            self.log.rows.append(EventRow(
                t, period, placed.item, bid, placed.bid_index, placed.sampling_prob,
                outcome.contest_size, outcome.clicks, outcome.payment_cents, outcome.gain_cents,
                self.snapshot_version, release))
        self.round = t
        if self.grid.is_boundary(t):
            self._boundary(t)

    def _boundary(self, t: int) -> None:
        k = self.grid.batch_index(t)
        released = self.queue.release_at_boundary(k)
        try:
            pairs = []
            for rec in released:
                r = self.normalizer(rec.placed.item, rec.period, profit(rec.outcome))
                rec.normalized_reward = float(r)
                pairs.append((rec.placed, rec.normalized_reward))
            table = apply_batch_update(self.table, pairs, round_=t)
        except Exception as exc:  # the bid stream keeps the old snapshot
            log.warning("update at boundary %d failed: %s", k, exc)
            for rec in released:
                rec.normalized_reward = None
            self.queue.restore(released)
            self.log.updates.append(UpdateEvent(
                "update_failed", t, k, 0, self.snapshot_version, self.observed_through,
                self.eta, f"{type(exc).__name__}: {exc}"))
            return
        if released:
            self.observed_through = max(self.grid.batch_index(rec.placed.round) for rec in released)
        self._commit(table, self.eta)
        self.log.updates.append(UpdateEvent(
            "commit", t, k, len(released), self.snapshot_version, self.observed_through, self.eta))

    def run(self, until: int | None = None) -> EventLog:
        until = self.grid.horizon if until is None else min(int(until), self.grid.horizon)
        while self.round < until:
            self.step()
        return self.log


def run_schedule(grid: BatchGrid, bid_space: BidSpace, eta: float, env: AuctionEnvironment,
                 normalizer, seed: int, **kwargs) -> BatchScheduler:
    """Run a full schedule and return the finished scheduler (its ``log`` is the EventLog)."""
    sched = BatchScheduler(grid, bid_space, eta, env, normalizer, seed, **kwargs)
    sched.run()
    return sched


def audit_information(event_log: EventLog, grid: BatchGrid) -> list[str]:
    """Rows whose snapshot used feedback from a batch later than ``J(t-1) - delta``."""
    observed = {0: 0}
    for u in event_log.updates:
        if u.kind != "update_failed":
            observed[u.snapshot_version] = u.observed_through
    problems = []
    for r in event_log.rows:
        allowed = (batch_index(r.round - 1, grid.q) if r.round > 1 else 0) - grid.delta
        seen = observed.get(r.snapshot_version)
        if seen is None:
            problems.append(f"round {r.round} item {r.item}: unknown snapshot {r.snapshot_version}")
        elif seen > max(allowed, 0):
            problems.append(f"round {r.round} item {r.item}: snapshot {r.snapshot_version} "
                            f"observed batch {seen} > {allowed}")
    return problems


def check_snapshot_monotone(event_log: EventLog) -> bool:
    """Bid stream reads snapshot versions in nondecreasing order, per item."""
    last: dict[int, int] = {}
    for r in event_log.rows:
        if r.snapshot_version < last.get(r.item, -math.inf):
            return False
        last[r.item] = r.snapshot_version
    return True
