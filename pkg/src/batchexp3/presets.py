"""Named experiments with pinned seeds and synthetic environments.

``bench-regret``  regret of the theorem learning rate against its bound.
``snowball``      entropy collapse and the loss-driven overconfidence pathology
                  under sparse rewards, for eta = 1 versus eta = 0.1.
``exp3-equiv``    q = 1, delta = 0, one item: trajectory equals plain EXP3.

The environment parameters below are synthetic and chosen for each
experiment; they are not estimates of any real market.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .metrics import (compute_regret, entropy_collapse_round, policies_by_round, regret_bound,
                      scores_by_round)
from .normalization import Normalizer
from .runner import build_environment, make_scheduler, resolve_normalization
from .streams import sampling_stream

PERIOD_FACTORS = [0.4, 0.3, 0.5, 0.8, 1.0, 0.9, 0.9, 0.7]

BENCH_ENVIRONMENT = {
    "mechanism": {"kind": "second_price",
                  "competitor": {"kind": "uniform", "low": 15, "high": 35},
                  "click_prob": 0.5, "tie_break": "coin"},
    "valuation": {"conversion_prob": 1.0, "value": {"kind": "uniform", "low": 20, "high": 30}},
    "traffic": {"base_rate": 40.0, "period_factors": PERIOD_FACTORS},
}

SNOWBALL_ENVIRONMENT = {
    "mechanism": {"kind": "second_price",
                  "competitor": {"kind": "lognormal", "median": 12.0, "sigma": 0.5,
                                 "low": 1, "high": 200},
                  "click_prob": 0.5, "tie_break": "coin"},
    "valuation": {"conversion_prob": 0.02, "value": {"kind": "fixed", "value": 500}},
    "traffic": {"base_rate": 60.0, "period_factors": PERIOD_FACTORS},
}

BENCH_SEEDS = tuple(range(1000, 1020))
SNOWBALL_SEEDS = tuple(range(2000, 2020))
EXP3_SEED = 3000


def bench_config(seed: int, horizon: int = 8000) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "seed": seed, "n_items": 1, "q": 8, "delta": 1, "horizon": horizon, "eta": "theorem",
        "environment": BENCH_ENVIRONMENT,
        "normalization": {"source": "simulate", "days": 200},
    })


def snowball_config(seed: int, eta: float, horizon: int = 352) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "seed": seed, "n_items": 1, "q": 8, "delta": 2, "horizon": horizon, "eta": eta,
        "environment": SNOWBALL_ENVIRONMENT,
        "normalization": {"source": "simulate", "days": 180},
    })


def exp3_config(seed: int = EXP3_SEED, horizon: int = 1000, eta: float = 0.1) -> ExperimentConfig:
    env = dict(BENCH_ENVIRONMENT, traffic={"base_rate": 40.0, "period_factors": [1.0]})
    return ExperimentConfig.from_dict({
        "seed": seed, "n_items": 1, "q": 1, "delta": 0, "horizon": horizon, "eta": eta,
        "environment": env, "normalization": {"source": "simulate", "days": 400},
    })


@dataclass
class PresetResult:
    name: str
    checks: dict[str, bool]
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        out = [f"{'PASS' if ok else 'FAIL'} {self.name}: {check}" for check, ok in self.checks.items()]
        out += [f"  {k} = {v}" for k, v in self.details.items()]
        return out


# ---- exp3-equiv -------------------------------------------------------------

def reference_exp3(n_arms: int, eta: float, horizon: int, reward, rng: np.random.Generator):
    """Plain EXP3, loss-estimator form: one arm per round, immediate feedback.

    Returns per-round ``(policy, scores after the update, arm)``.
    """
    s = np.zeros(n_arms)
    traj = []
    for t in range(1, horizon + 1):
        x = eta * s
        w = np.exp(x - x.max())
        p = w / w.sum()
        arm = int(rng.choice(n_arms, p=p))
        est = np.zeros(n_arms)
        est[arm] = (1.0 - reward(t, arm)) / p[arm]
        s = s + (1.0 - est)
        traj.append((p, s.copy(), arm))
    return traj


def exp3_equivalence(seed: int = EXP3_SEED, horizon: int = 1000, eta: float = 0.1) -> PresetResult:
    cfg = exp3_config(seed, horizon, eta)
    env = build_environment(cfg)
    norm = resolve_normalization(cfg, env)
    sched = make_scheduler(cfg, env, norm, keep_history=True)
    sched.run()
    normalizer = Normalizer(norm)
    bids = cfg.bid_space

    def reward(t, arm):
        return float(normalizer(0, 1, int(env.counterfactual_profits(0, t, 1)[arm])))

    ref = reference_exp3(len(bids), eta, horizon, reward, sampling_stream(seed, 0))
    pols = policies_by_round(sched.history, horizon)[:, 0]
    # scores after the update at the end of round t are in snapshot t
    scores = np.array([h.scores[0] for h in sched.history[1:]])
    ref_p = np.array([p for p, _, _ in ref])
    ref_s = np.array([s for _, s, _ in ref])
    arms_same = all(r.bid_index == a for r, (_, _, a) in zip(sched.log.rows, ref))
    dev = float(max(np.abs(pols - ref_p).max(), np.abs(scores - ref_s).max()))
    return PresetResult("exp3-equiv", {
        "arms identical": arms_same,
        "policies bit-identical": bool(np.array_equal(pols, ref_p)),
        "scores bit-identical": bool(np.array_equal(scores, ref_s)),
    }, {"max_trajectory_deviation": dev, "rounds": horizon})


# ---- bench-regret -----------------------------------------------------------

def bench_run(seed: int, horizon: int = 8000) -> dict:
    cfg = bench_config(seed, horizon)
    env = build_environment(cfg)
    norm = resolve_normalization(cfg, env)
    sched = make_scheduler(cfg, env, norm)
    sched.run()
    table = Normalizer(norm).table(env.counterfactual_table(horizon, cfg.q), cfg.q)
    full = compute_regret(sched.log, table, cfg.q, cfg.delta)
    half = compute_regret(sched.log, table, cfg.q, cfg.delta, up_to=horizon // 2)
    means = table[0].mean(axis=0)
    top = np.sort(means)[::-1]
    return {"regret": full.total, "regret_half": half.total, "bound": full.bound,
            "gap": float(top[0] - top[1]), "best_bid": int(cfg.bids[int(means.argmax())])}


def bench_regret(seeds=BENCH_SEEDS, horizon: int = 8000) -> PresetResult:
    runs = [bench_run(s, horizon) for s in seeds]
    mean_regret = statistics.fmean(r["regret"] for r in runs)
    mean_half = statistics.fmean(r["regret_half"] for r in runs)
    bound = regret_bound(14, 8, horizon, 1)
    gap = min(r["gap"] for r in runs)
    return PresetResult("bench-regret", {
        "mean regret <= 2 sqrt(qT|B|log|B|) + delta": mean_regret <= bound,
        "regret/T at T < regret/T at T/2": mean_regret / horizon < mean_half / (horizon // 2),
        "normalized gap of best bid >= 0.05": gap >= 0.05,
    }, {"mean_regret": round(mean_regret, 3), "bound": round(bound, 3),
        "ratio": round(mean_regret / bound, 4),
        "mean_regret_per_round_T": round(mean_regret / horizon, 6),
        "mean_regret_per_round_T_half": round(mean_half / (horizon // 2), 6),
        "min_gap": round(gap, 4), "seeds": len(runs)})


# ---- snowball ---------------------------------------------------------------

def snowball_witness(scores: np.ndarray, placed: np.ndarray, cf: np.ndarray,
                     initial_rounds: int) -> tuple[int, int] | None:
    """Earliest ``(round, bid)`` where a bid that was not placed in the first
    ``initial_rounds`` rounds strictly leads all scores while its counterfactual
    mean profit over rounds ``1..round`` is below the best bid's.

    ``scores[t-1]`` are the scores in force at round t, ``placed[t-1]`` the
    bid index placed at round t, ``cf[t-1]`` the counterfactual profits.
    """
    early = set(int(i) for i in placed[:initial_rounds])
    csum = np.cumsum(cf, axis=0)
    for t in range(initial_rounds + 1, scores.shape[0] + 1):
        row = scores[t - 1]
        lead = int(row.argmax())
        if lead in early or np.sum(row == row[lead]) > 1:
            continue
        means = csum[t - 1] / t
        if means[lead] < means.max():
            return t, lead
    return None


def snowball_run(seed: int, eta: float, horizon: int = 352) -> dict:
    cfg = snowball_config(seed, eta, horizon)
    env = build_environment(cfg)
    norm = resolve_normalization(cfg, env)
    sched = make_scheduler(cfg, env, norm, keep_history=True)
    sched.run()
    pols = policies_by_round(sched.history, horizon)
    collapse = entropy_collapse_round(pols, 0, 0.5)
    scores = scores_by_round(sched.history, horizon)[:, 0]
    placed = np.array([r.bid_index for r in sched.log.rows])
    cf = env.counterfactual_table(horizon, cfg.q)[0]
    witness = snowball_witness(scores, placed, cf, 2 * cfg.q)
    return {"collapse": collapse, "witness": witness,
            "witness_cents": cfg.bids[witness[1]] if witness else None,
            "conversion_prob": cfg.markets()[0].valuation.conversion_prob}


def snowball(seeds=SNOWBALL_SEEDS, horizon: int = 352) -> PresetResult:
    fast = [snowball_run(s, 1.0, horizon) for s in seeds]
    slow = [snowball_run(s, 0.1, horizon) for s in seeds]

    def censored(rs):
        return [r["collapse"] if r["collapse"] is not None else horizon + 1 for r in rs]

    med_fast = statistics.median(censored(fast))
    med_slow = statistics.median(censored(slow))
    witnesses = [(s, r["witness"]) for s, r in zip(seeds, fast) if r["witness"] is not None]
    sparse = all(r["conversion_prob"] <= 0.02 for r in fast + slow)
    return PresetResult("snowball", {
        "sparse rewards (conversion <= 0.02)": sparse,
        "median entropy-collapse round smaller for eta=1": med_fast < med_slow,
        "at least one eta=1 seed shows the overconfidence pathology": bool(witnesses),
    }, {"median_collapse_eta1": med_fast, "median_collapse_eta0.1": med_slow,
        "pathology_seeds": len(witnesses),
        "first_witness(seed, round, bid_index)": (witnesses[0][0], *witnesses[0][1]) if witnesses else None,
        "witness_bids_cents": sorted(r["witness_cents"] for r in fast if r["witness"])})


PRESETS = {
    "bench-regret": bench_regret,
    "snowball": snowball,
    "exp3-equiv": exp3_equivalence,
}


def run_preset(name: str, out_dir, seed: int | None = None) -> bool:
    """Run a preset, write ``<name>_summary.txt`` into ``out_dir`` and print it."""
    fn = PRESETS[name]
    if seed is None:
        result = fn()
    elif name == "exp3-equiv":
        result = fn(seed=seed)
    else:
        result = fn(seeds=tuple(range(seed, seed + 20)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(result.lines()) + "\n"
    (out / f"{name}_summary.txt").write_text(text)
    print(text, end="")
    return result.passed
