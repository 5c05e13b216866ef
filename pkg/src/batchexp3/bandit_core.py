"""Batch EXP3 learner: per-item exponential weights over a discrete bid set.

Each item keeps a row of cumulative scores.  The sampling distribution of an
item is the softmax of ``eta * scores``.  Feedback arrives in delayed batches
and is folded into the scores with the loss-based importance-weighted
estimator::

    score[i] += 1 - 1{placed == i} * (1 - reward) / prob_at_draw

so bids that were not placed gain exactly 1 and the placed bid is punished
in proportion to its loss divided by the probability it had when drawn.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

DEFAULT_BIDS: tuple[int, ...] = (1, 3, 5, 7, 9, 11, 13, 15, 17, 20, 25, 30, 35, 40)

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


@dataclass(frozen=True)
class BidSpace:
    """Ordered, strictly increasing bids in integer cents."""

    bids: tuple[int, ...] = DEFAULT_BIDS

    def __post_init__(self):
        bids = tuple(self.bids)
        if len(bids) < 2:
            raise ValueError(f"bid space needs at least 2 bids, got {len(bids)}")
        for b in bids:
            if isinstance(b, bool) or not isinstance(b, (int, np.integer)) or b != int(b):
                raise ValueError(f"bids must be integer cents, got {b!r}")
        bids = tuple(int(b) for b in bids)
        if bids[0] < 1:
            raise ValueError(f"bids must be >= 1 cent, got {bids[0]}")
        if any(b2 <= b1 for b1, b2 in zip(bids, bids[1:])):
            raise ValueError(f"bids must be strictly increasing: {bids}")
        object.__setattr__(self, "bids", bids)

    def __len__(self) -> int:
        return len(self.bids)

    def __getitem__(self, i: int) -> int:
        return self.bids[i]

    def __iter__(self):
        return iter(self.bids)

    def index_of(self, bid_cents: int) -> int:
        try:
            return self.bids.index(int(bid_cents))
        except ValueError:
            raise ValueError(f"{bid_cents} is not in the bid space") from None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bids, dtype=np.int64)


@dataclass
class ScoreTable:
    """Cumulative scores, shape ``(n_items, n_bids)``.

    ``round_counter`` is the last round whose boundary update has been folded
    into ``scores``.
    """

    scores: np.ndarray
    round_counter: int = 0

    @property
    def n_items(self) -> int:
        return self.scores.shape[0]

    @property
    def n_bids(self) -> int:
        return self.scores.shape[1]

    def copy(self) -> "ScoreTable":
        return ScoreTable(self.scores.copy(), self.round_counter)


@dataclass
class PolicyMatrix:
    probs: np.ndarray
    eta: float

    def row(self, item: int) -> np.ndarray:
        return self.probs[item]


@dataclass(frozen=True)
class PlacedBid:
    """A bid drawn for one item at one round.

    ``sampling_prob`` is the policy entry at draw time; the delayed update uses
    this stored value and never recomputes it.
    """

    round: int
    item: int
    bid_index: int
    sampling_prob: float


def theorem_learning_rate(n_bids: int, horizon: int) -> float:
    """Learning rate ``sqrt(log|B| / (T |B|))`` for a known horizon."""
    if n_bids < 2 or horizon < 1:
        raise ValueError("need n_bids >= 2 and horizon >= 1")
    return math.sqrt(math.log(n_bids) / (horizon * n_bids))


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not math.isfinite(eta) or eta <= 0:
        raise ValueError(f"learning rate must be a positive finite number, got {eta}")
    return eta


def init_learner(bid_space: BidSpace, eta: float, n: int) -> tuple[ScoreTable, PolicyMatrix]:
    """Zero scores and uniform policies for ``n`` items."""
    if not isinstance(bid_space, BidSpace):
        bid_space = BidSpace(tuple(bid_space))
    eta = _check_eta(eta)
    if int(n) != n or n < 1:
        raise ValueError(f"number of items must be a positive integer, got {n}")
    table = ScoreTable(np.zeros((int(n), len(bid_space))), 0)
    return table, policy_matrix(table, eta)


def compute_policy(scores_row, eta: float) -> np.ndarray:
    """Softmax of ``eta * scores_row`` with max-subtraction."""
    x = eta * np.asarray(scores_row, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    w = np.exp(x - x.max())
    return w / w.sum()


def policy_matrix(table: ScoreTable, eta: float) -> PolicyMatrix:
    eta = _check_eta(eta)
    probs = np.empty_like(table.scores)
    for j in range(table.n_items):
        probs[j] = compute_policy(table.scores[j], eta)
    return PolicyMatrix(probs, eta)


def _item_rng(rng: RngLike, item: int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng[item]


def sample_bids(policy: PolicyMatrix, rng: RngLike, round_: int = 0,
                items: Iterable[int] | None = None) -> list[PlacedBid]:
    """Draw one bid per item from its policy row.

    ``rng`` is either one generator shared by all items (drawn in item order)
    or a sequence of per-item generators.
    """
    if items is None:
        items = range(policy.probs.shape[0])
    placed = []
    for j in items:
        row = policy.probs[j]
        i = int(_item_rng(rng, j).choice(row.shape[0], p=row))
        placed.append(PlacedBid(round_, j, i, float(row[i])))
    return placed


def incremental_score_gain(placed, reward, sampling_prob):
    """Score increment of one bid after one observed round.

    Equals 1 for a bid that was not placed and ``1 - (1 - reward) / prob`` for
    the placed one.  Works elementwise on numpy arrays.
    """
    prob = np.asarray(sampling_prob, dtype=np.float64)
    if np.any(~(prob > 0)):
        raise ValueError("sampling probability must be > 0")
    ind = np.asarray(placed, dtype=np.float64)
    out = 1.0 - ind * (1.0 - np.asarray(reward, dtype=np.float64)) / prob
    return out if out.ndim else float(out)


def apply_batch_update(scores: ScoreTable,
                       released: Iterable[tuple[PlacedBid, float]],
                       round_: int | None = None) -> ScoreTable:
    """Fold released (placed bid, normalized reward) pairs into a copy of ``scores``.

    Records are applied in ascending ``(round, item)`` order.  Rewards must
    already lie in [0, 1].
    """
    released = sorted(released, key=lambda rec: (rec[0].round, rec[0].item))
    for placed, reward in released:
        if not (0.0 <= reward <= 1.0):
            raise ValueError(
                f"reward {reward!r} for item {placed.item} round {placed.round} "
                "is outside [0, 1]; normalize before updating")
    new = scores.copy()
    bid_idx = np.arange(new.n_bids)
    for placed, reward in released:
        gain = incremental_score_gain(bid_idx == placed.bid_index, reward, placed.sampling_prob)
        new.scores[placed.item] += gain
    if not np.all(np.isfinite(new.scores)):
        raise FloatingPointError("score table became non-finite")
    if round_ is not None:
        new.round_counter = int(round_)
    return new
