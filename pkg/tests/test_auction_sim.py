import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchexp3.auction_sim import (AggregatedOutcome, AuctionEnvironment, CentsDistribution,
                                   ContestDraw, ItemMarket, MechanismSpec, TrafficModel,
                                   ValuationModel, profit, total_profit)
from batchexp3.bandit_core import BidSpace
from batchexp3.streams import contest_stream


def market(kind="second_price", competitor=CentsDistribution("uniform", 1, 40), click=0.5,
           conv=0.2, value=CentsDistribution("fixed", value=60), rate=15.0, tie="coin"):
    return ItemMarket(MechanismSpec(kind, competitor, click, tie), ValuationModel(conv, value),
                      TrafficModel(rate, (1.0,)))


class FixedCount:
    """Generator wrapper forcing the number of auctions in a contest."""

    def __init__(self, n, seed=0):
        self.n = n
        self.rng = np.random.default_rng(seed)

    def poisson(self, lam):
        return self.n

    def __getattr__(self, name):
        return getattr(self.rng, name)


def brute_force(m, bid, draw):
    """Auction-by-auction loop over one contest."""
    clicks = payment = gain = 0
    for c, ut, uc, uv, v in zip(draw.competitor, draw.u_tie, draw.u_click, draw.u_conv, draw.values):
        if m.mechanism.tie_break == "coin":
            tie = ut < 0.5
        else:
            tie = m.mechanism.tie_break == "win"
        won = bid > c or (bid == c and tie)
        if won and uc < m.mechanism.click_prob:
            clicks += 1
            payment += int(c) if m.mechanism.kind == "second_price" else bid
            if uv < m.valuation.conversion_prob:
                gain += int(v)
    return clicks, payment, gain


def test_second_price_fixed_competitor_example():
    m = market(competitor=CentsDistribution("fixed", value=5), click=1.0, conv=0.0)
    env = AuctionEnvironment([m], BidSpace(), 0)
    out = env.run_contest(0, 9, 1, 1, rng=FixedCount(10))
    assert (out.clicks, out.payment_cents, out.gain_cents, out.contest_size) == (10, 50, 0, 10)
    assert profit(out) == -50


def test_first_price_pays_own_bid():
    m = market("first_price", CentsDistribution("fixed", value=5), click=1.0, conv=0.0)
    out = AuctionEnvironment([m], BidSpace(), 0).run_contest(0, 9, 1, 1, rng=FixedCount(10))
    assert out.payment_cents == 90


def test_losing_bid_pays_nothing():
    m = market(competitor=CentsDistribution("fixed", value=50), click=1.0)
    out = AuctionEnvironment([m], BidSpace(), 0).run_contest(0, 40, 1, 1, rng=FixedCount(10))
    assert (out.clicks, out.payment_cents, out.gain_cents) == (0, 0, 0)


def test_empty_contest():
    out = AuctionEnvironment([market()], BidSpace(), 0).run_contest(0, 9, 1, 1, rng=FixedCount(0))
    assert (out.clicks, out.payment_cents, out.gain_cents, out.contest_size) == (0, 0, 0, 0)


@pytest.mark.parametrize("tie,expected", [("win", 10), ("lose", 0)])
def test_tie_break_rules(tie, expected):
    m = market(competitor=CentsDistribution("fixed", value=9), click=1.0, tie=tie)
    out = AuctionEnvironment([m], BidSpace(), 0).run_contest(0, 9, 1, 1, rng=FixedCount(10))
    assert out.clicks == expected


@pytest.mark.parametrize("kind", ["second_price", "first_price"])
@pytest.mark.parametrize("tie", ["coin", "win", "lose"])
def test_vectorized_matches_brute_force(kind, tie):
    m = market(kind, CentsDistribution("uniform", 1, 40), 0.6, 0.3,
               CentsDistribution("uniform", 10, 120), 30.0, tie)
    for t in range(1, 30):
        draw = ContestDraw.draw(m, 1, np.random.default_rng(t))
        bids = list(BidSpace().bids)
        clicks, pay, gain = draw.evaluate(m, bids)
        for i, b in enumerate(bids):
            assert (clicks[i], pay[i], gain[i]) == brute_force(m, b, draw)


def test_run_contest_replays_counterfactual_entry():
    env = AuctionEnvironment([market(), market(click=0.9)], BidSpace(), 77)
    for item in (0, 1):
        for t in range(1, 20):
            cf = env.counterfactual_profits(item, t, 1)
            for i, b in enumerate(BidSpace().bids):
                assert profit(env.run_contest(item, b, t, 1)) == cf[i]


def test_contest_is_deterministic_per_seed():
    env = AuctionEnvironment([market()], BidSpace(), 5)
    a = env.run_contest(0, 13, 4, 1)
    b = AuctionEnvironment([market()], BidSpace(), 5).run_contest(0, 13, 4, 1)
    c = AuctionEnvironment([market()], BidSpace(), 6).run_contest(0, 13, 4, 1,
                                                                  rng=contest_stream(6, 0, 4))
    assert a == b
    assert c == AuctionEnvironment([market()], BidSpace(), 6).run_contest(0, 13, 4, 1)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["second_price", "first_price"]))
def test_clicks_monotone_and_payment_capped(seed, kind):
    m = market(kind, CentsDistribution("uniform", 1, 45), 0.5, 0.1)
    draw = ContestDraw.draw(m, 1, np.random.default_rng(seed))
    bids = np.array(BidSpace().bids)
    clicks, pay, _ = draw.evaluate(m, bids)
    assert np.all(np.diff(clicks) >= 0)
    assert np.all(pay <= bids * clicks)
    assert np.all(clicks <= draw.size)


def test_multi_item_aggregate_equals_sum_of_items():
    env = AuctionEnvironment([market(), market(conv=0.5), market(click=0.1)], BidSpace(), 9)
    outs = [env.run_contest(j, b, 3, 1) for j, b in enumerate((5, 17, 40))]
    vals = np.array([o.gain_cents for o in outs])
    pays = np.array([o.payment_cents for o in outs])
    assert total_profit(outs) == int(np.dot(vals - pays, np.ones(3)))
    assert total_profit(outs) == sum(profit(o) for o in outs)


def test_poisson_volume_tracks_rate():
    m = ItemMarket(traffic=TrafficModel(20.0, (0.5, 1.0)))
    env = AuctionEnvironment([m], BidSpace(), 1)
    sizes = {p: np.mean([env.draw_contest(0, t, p).size for t in range(1, 2001)]) for p in (1, 2)}
    assert sizes[1] == pytest.approx(10.0, abs=0.5)
    assert sizes[2] == pytest.approx(20.0, abs=0.7)


def test_counterfactual_table_shape():
    env = AuctionEnvironment([market(), market()], BidSpace(), 2)
    table = env.counterfactual_table(6, 1)
    assert table.shape == (2, 6, 14) and table.dtype == np.int64
    assert np.array_equal(table[1, 4], env.counterfactual_profits(1, 5, 1))


def test_lognormal_support_clipped():
    d = CentsDistribution("lognormal", low=1, high=30, median=12, sigma=2.0)
    x = d.draw(np.random.default_rng(0), 5000)
    assert x.min() >= 1 and x.max() <= 30 and x.dtype == np.int64


@pytest.mark.parametrize("bad", [
    lambda: CentsDistribution("gamma"),
    lambda: CentsDistribution("uniform", 10, 5),
    lambda: MechanismSpec("vcg"),
    lambda: MechanismSpec(click_prob=1.5),
    lambda: MechanismSpec(competitor=CentsDistribution("uniform", 1, 500)),
    lambda: ValuationModel(-0.1),
    lambda: TrafficModel(10.0, (0.5, 0.9)),
    lambda: TrafficModel(10.0, (0.0, 1.0)),
])
def test_invalid_market_parts(bad):
    with pytest.raises(ValueError):
        bad()


def test_rejects_nonpositive_bid():
    with pytest.raises(ValueError):
        AuctionEnvironment([market()], BidSpace(), 0).run_contest(0, 0, 1, 1)


def test_market_dict_round_trip():
    m = market("first_price", CentsDistribution("lognormal", 1, 90, median=20, sigma=0.4))
    assert ItemMarket.from_dict(m.to_dict()) == m


def test_history_rows():
    env = AuctionEnvironment([market(), market()], BidSpace(), 4)
    rows = env.simulate_history(5, 1)
    assert len(rows) == 10
    assert {r["item"] for r in rows} == {0, 1}
    assert rows == AuctionEnvironment([market(), market()], BidSpace(), 4).simulate_history(5, 1)
    assert isinstance(AggregatedOutcome(1, 0, 1, 0, 0, 0, 0), AggregatedOutcome)
