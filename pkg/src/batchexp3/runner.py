"""Command-line entry point and experiment orchestration.

    batchexp3 run CONFIG [--seed N] [--out-dir DIR] [--stop-at ROUND] [--parallel K]
    batchexp3 resume SNAPSHOT CONFIG [--out-dir DIR] [--stop-at ROUND]
    batchexp3 preset {bench-regret,snowball,exp3-equiv} [--out-dir DIR]

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 preset failed.
"""
from __future__ import annotations

import argparse
import copy
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import __version__
from . import snapshot as snapshot_io
from .auction_sim import AuctionEnvironment
from .bandit_core import PolicyMatrix
from .config import ConfigError, ExperimentConfig
from .feedback_pipeline import BatchGrid, BatchScheduler, EventLog, ScheduleError, UpdateEvent
from .metrics import (assign_groups, compute_regret, export_heatmaps, group_summary,
                      write_group_summary)
from .normalization import (NormalizationConfig, NormalizationError, Normalizer,
                            fit_from_history, read_history)

log = logging.getLogger("batchexp3")

EVENTS = "events.csv"
UPDATES = "updates.csv"
SNAPSHOT = "snapshot.txt"


@dataclass
class RunResult:
    out_dir: Path
    scheduler: BatchScheduler
    complete: bool

    @property
    def log(self) -> EventLog:
        return self.scheduler.log


def build_environment(cfg: ExperimentConfig) -> AuctionEnvironment:
    return AuctionEnvironment(cfg.markets(), cfg.bid_space, cfg.seed)


def resolve_normalization(cfg: ExperimentConfig, env: AuctionEnvironment) -> NormalizationConfig:
    n = cfg.normalization
    try:
        if n["source"] == "constants":
            return NormalizationConfig(n["alphas"], n["r_min"], n["r_max"])
        if n["source"] == "file":
            rows = read_history(cfg.base_dir / n["path"])
        else:
            rows = env.simulate_history(n["days"], cfg.q)
        return fit_from_history(rows, cfg.n_items, cfg.q)
    except (NormalizationError, OSError) as exc:
        raise ConfigError(f"normalization: {exc}") from None


def make_scheduler(cfg: ExperimentConfig, env: AuctionEnvironment, norm: NormalizationConfig,
                   items=None, keep_history: bool = False) -> BatchScheduler:
    grid = BatchGrid(cfg.q, cfg.delta, cfg.horizon)
    meta = {"config_hash": cfg.structural_hash(), "code_version": __version__}
    return BatchScheduler(grid, cfg.bid_space, cfg.resolved_eta(), env, Normalizer(norm),
                          cfg.seed, resets=cfg.resets(), items=items,
                          keep_history=keep_history, meta=meta)


def _run_shard(cfg_dict: dict, base_dir: str, norm: NormalizationConfig, items, stop_at):
    cfg = ExperimentConfig.from_dict(cfg_dict, base_dir)
    env = build_environment(cfg)
    sched = make_scheduler(cfg, env, norm, items=items)
    sched.run(stop_at)
    return sched


def _merge_shards(shards: list[BatchScheduler], n_items: int) -> BatchScheduler:
    """Combine per-item shards into one scheduler state (log ordered by round, item)."""
    base = shards[0]
    rows = sorted((r for s in shards for r in s.log.rows), key=lambda r: (r.round, r.item))
    updates = []
    for events in zip(*(s.log.updates for s in shards)):
        first = events[0]
        if any((e.kind, e.round, e.snapshot_version) != (first.kind, first.round, first.snapshot_version)
               for e in events):
            raise ScheduleError("parallel shards diverged in their update schedule")
        updates.append(UpdateEvent(first.kind, first.round, first.batch,
                                   sum(e.released_count for e in events), first.snapshot_version,
                                   max(e.observed_through for e in events), first.eta, first.detail))
    merged = copy.copy(base)
    merged.items = list(range(n_items))
    merged.log = EventLog(rows, updates, dict(base.log.meta))
    table = base.table.copy()
    rngs, pending = {}, []
    counters = {"enqueued": 0, "released": 0, "discarded": 0}
    for s in shards:
        table.scores[s.items] = s.table.scores[s.items]
        rngs.update(s.rngs)
        pending.extend(s.queue.tail())
        counters["enqueued"] += s.queue.enqueued
        counters["released"] += s.queue.released
        counters["discarded"] += s.queue.discarded
    merged.table = table
    merged.policy = PolicyMatrix(base.policy.probs.copy(), base.eta)
    for s in shards:
        merged.policy.probs[s.items] = s.policy.probs[s.items]
    merged.rngs = rngs
    merged.queue = copy.copy(base.queue)
    merged.queue.load_state(sorted(pending, key=lambda r: r.key), base.queue.last_boundary,
                            **counters)
    merged.observed_through = max(s.observed_through for s in shards)
    return merged


def _write(path: Path, text: str, created: list[Path]) -> None:
    existed = path.exists()
    path.write_text(text)
    if not existed:
        created.append(path)


def write_artifacts(cfg: ExperimentConfig, env: AuctionEnvironment, norm: NormalizationConfig,
                    sched: BatchScheduler, out_dir: Path, created: list[Path]) -> None:
    """Event log, snapshot and, for a finished run, the reports."""
    _write(out_dir / "config.yaml", cfg.dumps(), created)
    _write(out_dir / "normalization.yaml", yaml.safe_dump(norm.to_dict(), sort_keys=True), created)
    _write(out_dir / EVENTS, sched.log.rows_text(), created)
    _write(out_dir / UPDATES, sched.log.updates_text(), created)
    _write(out_dir / SNAPSHOT, snapshot_io.dumps(sched, cfg.structural_hash()), created)
    if sched.round < cfg.horizon:
        return
    ev = sched.log
    cf = env.counterfactual_table(cfg.horizon, cfg.q)
    bids = list(cfg.bids)
    reg_profit = compute_regret(ev, cf, cfg.q, cfg.delta, bids)
    reg_norm = compute_regret(ev, Normalizer(norm).table(cf, cfg.q), cfg.q, cfg.delta, bids)
    for name, rep in (("regret_profit.csv", reg_profit), ("regret.csv", reg_norm)):
        path = out_dir / name
        existed = path.exists()
        rep.write(path)
        if not existed:
            created.append(path)
    g = cfg.grouping
    groups = assign_groups(ev, cfg.n_items, g["traffic_threshold"], g["gain_to_cost_cutoff"])
    path = out_dir / "group_summary.csv"
    existed = path.exists()
    write_group_summary(group_summary(ev, cfg.n_items, g["traffic_threshold"],
                                      g["gain_to_cost_cutoff"], groups), path)
    if not existed:
        created.append(path)
    hm_dir = out_dir / "heatmaps"
    if not hm_dir.exists():
        hm_dir.mkdir()
        created.append(hm_dir)
    for hm in export_heatmaps(ev, bids, cfg.q, cfg.n_items, groups):
        for p in hm.write(hm_dir):
            created.append(p)
    q = sched.queue
    summary = {
        "rounds": sched.round, "snapshot_version": sched.snapshot_version,
        "enqueued": q.enqueued, "released": q.released, "unreleased_tail": len(q.tail()),
        "discarded_at_reset": q.discarded,
        "regret_normalized_total": round(reg_norm.total, 6),
        "regret_bound_total": round(reg_norm.bound, 6),
        "regret_profit_cents_total": round(reg_profit.total, 6),
        "groups": groups,
    }
    _write(out_dir / "summary.yaml", yaml.safe_dump(summary, sort_keys=True), created)


def _cleanup(created: list[Path]) -> None:
    for p in reversed(created):
        try:
            if p.is_dir():
                for child in p.iterdir():
                    child.unlink()
                p.rmdir()
            else:
                p.unlink()
        except OSError:
            pass


def _with_overrides(cfg: ExperimentConfig, seed, out_dir) -> ExperimentConfig:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg.seed = int(seed)
    if out_dir is not None:
        cfg.output_dir = str(out_dir)
    return cfg


def _out_path(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.output_dir)
    return p if p.is_absolute() else cfg.base_dir / p


def run(cfg: ExperimentConfig, out_dir=None, seed: int | None = None, stop_at: int | None = None,
        parallel: int = 1) -> RunResult:
    """Run an experiment from round 1 and write its artifacts.

    Files created by a failed run are removed again.
    """
    cfg = _with_overrides(cfg, seed, out_dir)
    out = Path(out_dir) if out_dir is not None else _out_path(cfg)
    created: list[Path] = []
    if not out.exists():
        out.mkdir(parents=True)
        created.append(out)
    try:
        env = build_environment(cfg)
        norm = resolve_normalization(cfg, env)
        if norm.n_items != cfg.n_items:
            raise ConfigError(f"normalization: constants cover {norm.n_items} items, "
                              f"config has {cfg.n_items}")
        if parallel > 1 and cfg.n_items > 1:
            shards = [list(range(cfg.n_items))[k::parallel] for k in range(min(parallel, cfg.n_items))]
            with ProcessPoolExecutor(len(shards)) as pool:
                futs = [pool.submit(_run_shard, cfg.to_dict(), str(cfg.base_dir), norm, items, stop_at)
                        for items in shards]
                sched = _merge_shards([f.result() for f in futs], cfg.n_items)
        else:
            sched = make_scheduler(cfg, env, norm)
            sched.run(stop_at)
        write_artifacts(cfg, env, norm, sched, out, created)
    except BaseException:
        _cleanup(created)
        raise
    return RunResult(out, sched, sched.round >= cfg.horizon)


def _eta_at(cfg: ExperimentConfig, round_: int) -> float:
    eta = cfg.resolved_eta()
    for r, e in sorted(cfg.resets()):
        if r <= round_:
            eta = e
    return eta


def resume(snapshot_path, cfg: ExperimentConfig, out_dir=None, seed: int | None = None,
           stop_at: int | None = None) -> RunResult:
    """Continue a stopped run from its snapshot.

    The event and update logs of the stopped run are read from ``out_dir``
    (default: the snapshot's directory) and extended in place.  A learning
    rate that differs from the checkpoint is applied and logged as a
    parameter change.
    """
    snap = snapshot_io.load(snapshot_path)
    out = Path(out_dir) if out_dir is not None else Path(snapshot_path).parent
    cfg = _with_overrides(cfg, seed, out)
    if snap.config_hash != cfg.structural_hash():
        raise snapshot_io.SnapshotError(
            f"snapshot config hash {snap.config_hash} does not match config {cfg.structural_hash()}")
    env = build_environment(cfg)
    norm = resolve_normalization(cfg, env)
    sched = make_scheduler(cfg, env, norm)
    snapshot_io.restore(sched, snap)
    prior = EventLog.read(out / EVENTS, out / UPDATES)
    if prior.meta.get("config_hash") != cfg.structural_hash():
        raise snapshot_io.SnapshotError("event log in output directory belongs to another config")
    if max((r.round for r in prior.rows), default=0) != snap.round:
        raise snapshot_io.SnapshotError("event log and snapshot disagree on the stopping round")
    sched.log.rows, sched.log.updates = prior.rows, prior.updates
    wanted = _eta_at(cfg, snap.round)
    if wanted != snap.eta:
        sched.change_eta(wanted)
    sched.run(stop_at)
    write_artifacts(cfg, env, norm, sched, out, [])
    return RunResult(out, sched, sched.round >= cfg.horizon)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="batchexp3", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--stop-at", type=int, help="stop after this round and checkpoint")
    r.add_argument("--parallel", type=int, default=1, metavar="K")

    s = sub.add_parser("resume", help="resume a checkpointed run")
    s.add_argument("snapshot")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--stop-at", type=int)

    pr = sub.add_parser("preset", help="run a named acceptance experiment")
    pr.add_argument("name", choices=["bench-regret", "snowball", "exp3-equiv"])
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out-dir", default="preset_out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            from .presets import run_preset

            ok = run_preset(args.name, args.out_dir, seed=args.seed)
            return 0 if ok else 3
        cfg = ExperimentConfig.load(args.config)
        if args.command == "run":
            res = run(cfg, out_dir=args.out_dir, seed=args.seed, stop_at=args.stop_at,
                      parallel=args.parallel)
        else:
            res = resume(args.snapshot, cfg, out_dir=args.out_dir, seed=args.seed,
                         stop_at=args.stop_at)
        print(f"{'finished' if res.complete else 'stopped'} at round {res.scheduler.round}; "
              f"artifacts in {res.out_dir}")
        return 0
    except (ConfigError, snapshot_io.SnapshotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
