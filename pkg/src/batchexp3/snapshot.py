"""Plain-text checkpoint of a running schedule.

One ``key = value`` pair per line.  Floats are written with ``repr`` so they
read back bit-for-bit.  The last line is a SHA-256 checksum over everything
before it; any edit to the file is detected on load.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .auction_sim import AggregatedOutcome
from .bandit_core import PlacedBid, ScoreTable, policy_matrix
from .feedback_pipeline import BatchScheduler, PendingRecord
from .streams import decode_state, encode_state

FORMAT = "batchexp3-snapshot"
VERSION = 1


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    config_hash: str
    round: int
    eta: float
    snapshot_version: int
    observed_through: int
    bids: tuple[int, ...]
    table: ScoreTable
    rng_states: dict[int, str]
    last_boundary: int
    counters: dict[str, int]
    pending: list[PendingRecord]


def _digest(body: str) -> str:
    return hashlib.sha256(body.encode()).hexdigest()


def dumps(sched: BatchScheduler, config_hash: str) -> str:
    lines = [
        f"format = {FORMAT}",
        f"version = {VERSION}",
        f"config_hash = {config_hash}",
        f"round = {sched.round}",
        f"eta = {sched.eta!r}",
        f"snapshot_version = {sched.snapshot_version}",
        f"observed_through = {sched.observed_through}",
        f"bids = {','.join(map(str, sched.bid_space.bids))}",
        f"n_items = {sched.table.n_items}",
        f"score_round = {sched.table.round_counter}",
    ]
    for j in range(sched.table.n_items):
        lines.append(f"score.{j} = " + ",".join(repr(float(x)) for x in sched.table.scores[j]))
    for j in sorted(sched.rngs):
        lines.append(f"rng.{j} = {encode_state(sched.rngs[j])}")
    q = sched.queue
    lines += [f"queue.last_boundary = {q.last_boundary}", f"queue.enqueued = {q.enqueued}",
              f"queue.released = {q.released}", f"queue.discarded = {q.discarded}"]
    tail = q.tail()
    lines.append(f"pending.count = {len(tail)}")
    for i, rec in enumerate(tail):
        p, o = rec.placed, rec.outcome
        lines.append(f"pending.{i} = " + ",".join(map(str, [
            p.round, p.item, p.bid_index, repr(p.sampling_prob), rec.period, o.bid_cents,
            o.clicks, o.payment_cents, o.gain_cents, o.contest_size])))
    body = "\n".join(lines) + "\n"
    return body + f"checksum = {_digest(body)}\n"


def save(sched: BatchScheduler, config_hash: str, path: str | Path) -> None:
    Path(path).write_text(dumps(sched, config_hash))


def loads(text: str) -> Snapshot:
    lines = text.splitlines(keepends=True)
    if not lines or not lines[-1].startswith("checksum = "):
        raise SnapshotError("snapshot has no checksum line")
    body = "".join(lines[:-1])
    if lines[-1].strip().split(" = ", 1)[1] != _digest(body):
        raise SnapshotError("snapshot checksum mismatch (file was modified)")
    kv = {}
    for line in body.splitlines():
        key, sep, value = line.partition(" = ")
        if not sep:
            raise SnapshotError(f"malformed snapshot line {line!r}")
        kv[key] = value
    if kv.get("format") != FORMAT or int(kv.get("version", -1)) != VERSION:
        raise SnapshotError(f"unsupported snapshot format {kv.get('format')!r} v{kv.get('version')}")
    n = int(kv["n_items"])
    scores = np.array([[float(x) for x in kv[f"score.{j}"].split(",")] for j in range(n)])
    rng_states = {int(k.split(".")[1]): v for k, v in kv.items() if k.startswith("rng.")}
    pending = []
    for i in range(int(kv["pending.count"])):
        f = kv[f"pending.{i}"].split(",")
        rnd, item, bid_index = int(f[0]), int(f[1]), int(f[2])
        prob, period = float(f[3]), int(f[4])
        bid, clicks, pay, gain, size = map(int, f[5:10])
        pending.append(PendingRecord(PlacedBid(rnd, item, bid_index, prob),
                                     AggregatedOutcome(rnd, item, bid, clicks, pay, gain, size),
                                     period))
    return Snapshot(
        config_hash=kv["config_hash"], round=int(kv["round"]), eta=float(kv["eta"]),
        snapshot_version=int(kv["snapshot_version"]),
        observed_through=int(kv["observed_through"]),
        bids=tuple(int(b) for b in kv["bids"].split(",")),
        table=ScoreTable(scores, int(kv["score_round"])),
        rng_states=rng_states, last_boundary=int(kv["queue.last_boundary"]),
        counters={k: int(kv[f"queue.{k}"]) for k in ("enqueued", "released", "discarded")},
        pending=pending)


def load(path: str | Path) -> Snapshot:
    return loads(Path(path).read_text())


def restore(sched: BatchScheduler, snap: Snapshot) -> None:
    """Overwrite a freshly built scheduler with checkpointed state."""
    if tuple(sched.bid_space.bids) != snap.bids:
        raise SnapshotError("snapshot bid space differs from the configured one")
    if snap.table.n_items != sched.n_items:
        raise SnapshotError("snapshot item count differs from the configured one")
    missing = set(sched.items) - set(snap.rng_states)
    if missing:
        raise SnapshotError(f"snapshot lacks RNG state for items {sorted(missing)}")
    sched.round = snap.round
    sched.table = snap.table
    sched.eta = snap.eta
    sched.policy = policy_matrix(snap.table, snap.eta)
    sched.snapshot_version = snap.snapshot_version
    sched.observed_through = snap.observed_through
    sched.rngs = {j: decode_state(snap.rng_states[j]) for j in sched.items}
    sched.queue.load_state(snap.pending, snap.last_boundary, snap.counters["enqueued"],
                           snap.counters["released"], snap.counters["discarded"])
    sched.history.clear()
    sched._remember()
