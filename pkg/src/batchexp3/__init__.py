"""Batch EXP3 bidding under batched, delayed, aggregated auction feedback."""

__version__ = "0.1.0"

from .bandit_core import (DEFAULT_BIDS, BidSpace, PlacedBid, PolicyMatrix, ScoreTable,
                          apply_batch_update, compute_policy, incremental_score_gain,
                          init_learner, policy_matrix, sample_bids,
                          theorem_learning_rate)

__all__ = [
    "DEFAULT_BIDS", "BidSpace", "PlacedBid", "PolicyMatrix", "ScoreTable", "apply_batch_update",
    "compute_policy", "incremental_score_gain", "init_learner", "policy_matrix", "sample_bids",
    "theorem_learning_rate",
]
