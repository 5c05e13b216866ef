"""Experiment configuration: a single YAML document, validated closed-world."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .auction_sim import ItemMarket
from .bandit_core import DEFAULT_BIDS, BidSpace, theorem_learning_rate
from .normalization import NormalizationConfig, NormalizationError

TOP_KEYS = {"seed", "n_items", "q", "delta", "horizon", "eta", "reset", "bids", "environment",
            "items", "normalization", "grouping", "output_dir"}
ENV_KEYS = {"mechanism", "valuation", "traffic"}
NORM_SOURCES = ("constants", "file", "simulate")


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _require_int(d: dict, key: str, path: str, minimum: int | None = None) -> int:
    if key not in d:
        raise ConfigError(f"{path}{key}: required field is missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}{key}: must be >= {minimum}, got {v}")
    return v


def _market(d: dict, path: str) -> ItemMarket:
    unknown = set(d) - ENV_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ENV_KEYS:
        if key not in d:
            raise ConfigError(f"{path}.{key}: required section is missing")
    try:
        return ItemMarket.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class ExperimentConfig:
    seed: int
    n_items: int
    q: int
    delta: int
    horizon: int
    eta: float | str
    bids: tuple[int, ...]
    environment: dict
    normalization: dict
    reset: list[dict] = field(default_factory=list)
    items: list[dict] | None = None
    grouping: dict = field(default_factory=lambda: {"traffic_threshold": 0.0,
                                                     "gain_to_cost_cutoff": 1.0})
    output_dir: str = "out"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # ---- parsing -------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | str = ".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be a mapping")
        unknown = set(d) - TOP_KEYS
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        seed = _require_int(d, "seed", "", 0)
        n_items = _require_int(d, "n_items", "", 1)
        q = _require_int(d, "q", "", 1)
        delta = _require_int(d, "delta", "", 0)
        horizon = _require_int(d, "horizon", "", 1)
        if horizon % q:
            raise ConfigError(f"horizon: {horizon} is not a multiple of q={q}")
        bids = d.get("bids", list(DEFAULT_BIDS))
        try:
            BidSpace(tuple(bids))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bids: {exc}") from None
        eta = d.get("eta", 0.1)
        if eta != "theorem":
            if isinstance(eta, bool) or not isinstance(eta, (int, float)) or not eta > 0:
                raise ConfigError(f"eta: expected a positive number or 'theorem', got {eta!r}")
            eta = float(eta)
        reset = d.get("reset") or []
        if not isinstance(reset, list):
            raise ConfigError("reset: expected a list of {round, eta}")
        for i, r in enumerate(reset):
            if not isinstance(r, dict) or set(r) != {"round", "eta"}:
                raise ConfigError(f"reset[{i}]: expected keys round and eta")
            rnd = _require_int(r, "round", f"reset[{i}].", 1)
            if rnd > horizon:
                raise ConfigError(f"reset[{i}].round: {rnd} is past the horizon {horizon}")
            if not isinstance(r["eta"], (int, float)) or not r["eta"] > 0:
                raise ConfigError(f"reset[{i}].eta: must be a positive number")
        env = d.get("environment")
        if not isinstance(env, dict):
            raise ConfigError("environment: required mapping is missing")
        items = d.get("items")
        if items is not None:
            if not isinstance(items, list) or len(items) != n_items:
                raise ConfigError(f"items: expected a list of {n_items} per-item overrides")
        cfg = cls(seed, n_items, q, delta, horizon, eta, tuple(int(b) for b in bids),
                  env, d.get("normalization"), [dict(r) for r in reset], items,
                  dict(d.get("grouping") or {"traffic_threshold": 0.0, "gain_to_cost_cutoff": 1.0}),
                  str(d.get("output_dir", "out")), Path(base_dir))
        cfg.markets()
        cfg._check_normalization()
        cfg._check_grouping()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
        return cls.from_dict(data, path.parent)

    def _check_normalization(self) -> None:
        n = self.normalization
        if not isinstance(n, dict) or n.get("source") not in NORM_SOURCES:
            raise ConfigError(f"normalization.source: must be one of {NORM_SOURCES}")
        src = n["source"]
        allowed = {"constants": {"source", "alphas", "r_min", "r_max"},
                   "file": {"source", "path"},
                   "simulate": {"source", "days"}}[src]
        unknown = set(n) - allowed
        if unknown:
            raise ConfigError(f"normalization: unknown keys {sorted(unknown)} for source {src!r}")
        if src == "constants":
            for key in ("alphas", "r_min", "r_max"):
                if not isinstance(n.get(key), list):
                    raise ConfigError(f"normalization.{key}: expected a list")
            if len(n["alphas"]) != self.q:
                raise ConfigError(f"normalization.alphas: expected {self.q} entries, got {len(n['alphas'])}")
            for key in ("r_min", "r_max"):
                if len(n[key]) != self.n_items:
                    raise ConfigError(f"normalization.{key}: expected {self.n_items} entries, got {len(n[key])}")
            try:
                NormalizationConfig(n["alphas"], n["r_min"], n["r_max"])
            except NormalizationError as exc:
                raise ConfigError(f"normalization.{exc}") from None
        elif src == "file":
            if not isinstance(n.get("path"), str):
                raise ConfigError("normalization.path: expected a file path")
        else:
            _require_int(n, "days", "normalization.", 3)

    def _check_grouping(self) -> None:
        g = self.grouping
        if set(g) != {"traffic_threshold", "gain_to_cost_cutoff"}:
            raise ConfigError("grouping: expected keys traffic_threshold and gain_to_cost_cutoff")
        for k, v in g.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"grouping.{k}: expected a nonnegative number")

    # ---- derived objects ----------------------------------------------
    def markets(self) -> list[ItemMarket]:
        out = []
        for j in range(self.n_items):
            if self.items is not None:
                over = self.items[j] or {}
                if not isinstance(over, dict):
                    raise ConfigError(f"items[{j}]: expected a mapping")
                spec, path = _deep_merge(self.environment, over), f"items[{j}]"
            else:
                spec, path = self.environment, "environment"
            market = _market(spec, path)
            if len(market.traffic.period_factors) != self.q:
                raise ConfigError(f"{path}.traffic.period_factors: expected {self.q} entries, "
                                  f"got {len(market.traffic.period_factors)}")
            out.append(market)
        return out

    @property
    def bid_space(self) -> BidSpace:
        return BidSpace(self.bids)

    def resolved_eta(self) -> float:
        if self.eta == "theorem":
            return theorem_learning_rate(len(self.bids), self.horizon)
        return float(self.eta)

    def resets(self) -> list[tuple[int, float]]:
        return [(int(r["round"]), float(r["eta"])) for r in self.reset]

    # ---- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {"seed": self.seed, "n_items": self.n_items, "q": self.q, "delta": self.delta,
             "horizon": self.horizon, "eta": self.eta, "bids": list(self.bids),
             "environment": copy.deepcopy(self.environment),
             "normalization": copy.deepcopy(self.normalization),
             "grouping": dict(self.grouping), "output_dir": self.output_dir}
        if self.reset:
            d["reset"] = [dict(r) for r in self.reset]
        if self.items is not None:
            d["items"] = copy.deepcopy(self.items)
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    def structural_hash(self) -> str:
        """Hash of everything a resumed run must share with the original.

        Learning rate, reset schedule and output directory are excluded so
        that a run may resume with a changed learning rate.
        """
        d = self.to_dict()
        for key in ("eta", "reset", "output_dir"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
