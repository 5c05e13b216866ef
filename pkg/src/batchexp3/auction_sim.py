"""Simulated blackbox ad auctions with aggregated, per-round feedback.

One round of one item is a *reward contest*: a Poisson number of single-slot
auctions that all use the same bid.  For every auction we draw the highest
competing bid, a tie coin, a click coin, a conversion coin and a sale value.
All draws happen before the bid is looked at, so the same contest can be
replayed under every candidate bid (common random numbers).  That replay is
what the regret oracle uses.

All money amounts are integer cents, so sums are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bandit_core import BidSpace
from .streams import HISTORY, contest_stream, substream

MECHANISMS = ("second_price", "first_price")
TIE_BREAKS = ("coin", "win", "lose")
COMPETITOR_CAP = 200


@dataclass(frozen=True)
class CentsDistribution:
    """Distribution of a nonnegative integer amount in cents.

    kinds: ``fixed`` (always ``value``), ``uniform`` (integers in
    ``[low, high]``), ``lognormal`` (``median * exp(sigma * Z)`` rounded and
    clipped to ``[low, high]``).
    """

    kind: str = "uniform"
    low: int = 0
    high: int = 200
    value: int = 0
    median: float = 20.0
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "lognormal"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.low < 0 or self.high < self.low:
            raise ValueError(f"invalid support [{self.low}, {self.high}]")
        if self.kind == "fixed" and self.value < 0:
            raise ValueError("fixed value must be nonnegative")
        if self.kind == "lognormal" and (self.median <= 0 or self.sigma < 0):
            raise ValueError("lognormal needs median > 0 and sigma >= 0")

    @property
    def support(self) -> tuple[int, int]:
        if self.kind == "fixed":
            return self.value, self.value
        return self.low, self.high

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(size, self.value, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high, size=size, endpoint=True, dtype=np.int64)
        z = rng.standard_normal(size)
        x = np.rint(self.median * np.exp(self.sigma * z))
        return np.clip(x, self.low, self.high).astype(np.int64)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "fixed":
            d["value"] = self.value
        elif self.kind == "uniform":
            d.update(low=self.low, high=self.high)
        else:
            d.update(median=self.median, sigma=self.sigma, low=self.low, high=self.high)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CentsDistribution":
        return cls(**d)


@dataclass(frozen=True)
class MechanismSpec:
    kind: str = "second_price"
    competitor: CentsDistribution = CentsDistribution("uniform", 1, 40)
    click_prob: float = 0.3
    tie_break: str = "coin"

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"mechanism kind must be one of {MECHANISMS}, got {self.kind!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}, got {self.tie_break!r}")
        if not 0.0 <= self.click_prob <= 1.0:
            raise ValueError(f"click_prob must be in [0, 1], got {self.click_prob}")
        lo, hi = self.competitor.support
        if lo < 0 or hi > COMPETITOR_CAP:
            raise ValueError(f"competitor support must lie in [0, {COMPETITOR_CAP}] cents")


@dataclass(frozen=True)
class ValuationModel:
    conversion_prob: float = 0.05
    value: CentsDistribution = CentsDistribution("fixed", value=500)

    def __post_init__(self):
        if not 0.0 <= self.conversion_prob <= 1.0:
            raise ValueError(f"conversion_prob must be in [0, 1], got {self.conversion_prob}")


@dataclass(frozen=True)
class TrafficModel:
    """Mean auctions per round and one multiplier per intra-day period."""

    base_rate: float = 50.0
    period_factors: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        factors = tuple(float(f) for f in self.period_factors)
        object.__setattr__(self, "period_factors", factors)
        if self.base_rate < 0:
            raise ValueError("base_rate must be nonnegative")
        if not factors or any(f <= 0 for f in factors):
            raise ValueError("period factors must all be > 0")
        if max(factors) != 1.0:
            raise ValueError(f"largest period factor must be exactly 1, got {max(factors)}")

    def rate(self, period: int) -> float:
        if not 1 <= period <= len(self.period_factors):
            raise ValueError(f"period {period} outside 1..{len(self.period_factors)}")
        return self.base_rate * self.period_factors[period - 1]


@dataclass(frozen=True)
class ItemMarket:
    mechanism: MechanismSpec = MechanismSpec()
    valuation: ValuationModel = ValuationModel()
    traffic: TrafficModel = TrafficModel()

    def to_dict(self) -> dict:
        m, v, t = self.mechanism, self.valuation, self.traffic
        return {
            "mechanism": {"kind": m.kind, "competitor": m.competitor.to_dict(),
                          "click_prob": m.click_prob, "tie_break": m.tie_break},
            "valuation": {"conversion_prob": v.conversion_prob, "value": v.value.to_dict()},
            "traffic": {"base_rate": t.base_rate, "period_factors": list(t.period_factors)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ItemMarket":
        m = dict(d.get("mechanism", {}))
        if "competitor" in m:
            m["competitor"] = CentsDistribution.from_dict(m["competitor"])
        v = dict(d.get("valuation", {}))
        if "value" in v:
            v["value"] = CentsDistribution.from_dict(v["value"])
        t = dict(d.get("traffic", {}))
        if "period_factors" in t:
            t["period_factors"] = tuple(t["period_factors"])
        return cls(MechanismSpec(**m), ValuationModel(**v), TrafficModel(**t))


@dataclass(frozen=True)
class AggregatedOutcome:
    round: int
    item: int
    bid_cents: int
    clicks: int
    payment_cents: int
    gain_cents: int
    contest_size: int


def profit(outcome: AggregatedOutcome) -> int:
    """Aggregated gain minus aggregated payment, in cents."""
    return outcome.gain_cents - outcome.payment_cents


def total_profit(outcomes: Sequence[AggregatedOutcome]) -> int:
    """Profit summed over items: the inner product of (gain - payment) with ones."""
    gains = np.array([o.gain_cents for o in outcomes], dtype=np.int64)
    pays = np.array([o.payment_cents for o in outcomes], dtype=np.int64)
    return int(np.dot(gains - pays, np.ones(len(outcomes), dtype=np.int64)))


@dataclass(frozen=True)
class ContestDraw:
    """All randomness of one reward contest, independent of the bid."""

    competitor: np.ndarray
    u_tie: np.ndarray
    u_click: np.ndarray
    u_conv: np.ndarray
    values: np.ndarray

    @property
    def size(self) -> int:
        return int(self.competitor.shape[0])

    @classmethod
    def draw(cls, market: ItemMarket, period: int, rng: np.random.Generator) -> "ContestDraw":
        n = int(rng.poisson(market.traffic.rate(period)))
        competitor = market.mechanism.competitor.draw(rng, n)
        u_tie = rng.random(n)
        u_click = rng.random(n)
        u_conv = rng.random(n)
        values = market.valuation.value.draw(rng, n)
        return cls(competitor, u_tie, u_click, u_conv, values)

    def evaluate(self, market: ItemMarket, bids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Clicks, payment and gain (each shape ``(len(bids),)``) under each bid."""
        b = np.asarray(bids, dtype=np.int64)[:, None]
        c = self.competitor[None, :]
        mech = market.mechanism
        if mech.tie_break == "coin":
            tie_win = self.u_tie < 0.5
        elif mech.tie_break == "win":
            tie_win = np.ones(self.size, dtype=bool)
        else:
            tie_win = np.zeros(self.size, dtype=bool)
        win = (b > c) | ((b == c) & tie_win[None, :])
        click = win & (self.u_click < mech.click_prob)[None, :]
        conv = click & (self.u_conv < market.valuation.conversion_prob)[None, :]
        price = c if mech.kind == "second_price" else b
        payment = np.where(click, price, 0).sum(axis=1)
        gain = np.where(conv, self.values[None, :], 0).sum(axis=1)
        return click.sum(axis=1), payment, gain


class AuctionEnvironment:
    """Per-item markets plus a master seed.

    Contest randomness for ``(item, round)`` comes from its own substream, so
    the outcome of a round does not depend on anything else that was run.
    """

    def __init__(self, markets: Sequence[ItemMarket], bid_space: BidSpace, seed: int):
        if not markets:
            raise ValueError("need at least one item market")
        self.markets = list(markets)
        self.bid_space = bid_space
        self.seed = int(seed)

    @property
    def n_items(self) -> int:
        return len(self.markets)

    def draw_contest(self, item: int, round_: int, period: int,
                     rng: np.random.Generator | None = None, seed: int | None = None) -> ContestDraw:
        if rng is None:
            rng = contest_stream(self.seed if seed is None else seed, item, round_)
        return ContestDraw.draw(self.markets[item], period, rng)

    def run_contest(self, item: int, bid_cents: int, round_: int, period: int,
                    rng: np.random.Generator | None = None) -> AggregatedOutcome:
        bid_cents = int(bid_cents)
        if bid_cents < 1:
            raise ValueError(f"bid must be a positive number of cents, got {bid_cents}")
        draw = self.draw_contest(item, round_, period, rng)
        clicks, payment, gain = draw.evaluate(self.markets[item], [bid_cents])
        return AggregatedOutcome(round_, item, bid_cents, int(clicks[0]), int(payment[0]),
                                 int(gain[0]), draw.size)

    def counterfactual_profits(self, item: int, round_: int, period: int,
                               seed: int | None = None) -> np.ndarray:
        """Profit in cents of the replayed contest under every bid of the bid space."""
        draw = self.draw_contest(item, round_, period, seed=seed)
        _, payment, gain = draw.evaluate(self.markets[item], self.bid_space.as_array())
        return gain - payment

    def counterfactual_table(self, n_rounds: int, q: int) -> np.ndarray:
        """Counterfactual profits, shape ``(n_items, n_rounds, n_bids)``."""
        table = np.empty((self.n_items, n_rounds, len(self.bid_space)), dtype=np.int64)
        for j in range(self.n_items):
            for t in range(1, n_rounds + 1):
                table[j, t - 1] = self.counterfactual_profits(j, t, (t - 1) % q + 1)
        return table

    def simulate_history(self, n_days: int, q: int) -> list[dict]:
        """Pre-experiment log of uniformly random bids.

        Rows carry ``item``, ``period``, ``profit`` and ``volume`` (clicks) and
        are meant for fitting normalization constants.
        """
        rows = []
        bids = self.bid_space.as_array()
        for j, market in enumerate(self.markets):
            rng = substream(self.seed, HISTORY, j)
            for _ in range(n_days):
                for period in range(1, q + 1):
                    bid = int(bids[rng.integers(len(bids))])
                    draw = ContestDraw.draw(market, period, rng)
                    clicks, payment, gain = draw.evaluate(market, [bid])
                    rows.append({"item": j, "period": period,
                                 "profit": int(gain[0] - payment[0]), "volume": int(clicks[0])})
        return rows
