from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import perp_equity, perp_size, raw_floor
from perpnft.errors import AlreadyClosed, ImmediateLiquidation, NotNftHolder
from perpnft.fixedpoint import SCALE, FixedAmount, Ledger
from perpnft.nft import NftRegistry
from perpnft.perp import PerpMarket

U = FixedAmount.of


@pytest.fixture
def market():
    led, reg = Ledger(), NftRegistry()
    led.mint("trader", "USD", U(10**6))
    led.mint("other", "USD", U(10**6))
    led.mint("clearinghouse:ETH", "USD", U(10**7))
    return PerpMarket(led, reg, "ETH", "ETH", "USD", U(2000), "0.05")


def test_open_sizes_position(market):
    c = market.open_contract("trader", "long", U(100), 10)
    assert c.size == raw_floor(perp_size(Fraction(100), Fraction(10), Fraction(2000)))
    assert FixedAmount(c.size) == U("0.5") and c.entry_price == U(2000).raw
    assert market.registry.token_for(c.ref).owner == "trader"
    unlevered = market.open_contract("trader", "short", U(100), 1)
    assert FixedAmount(unlevered.size) == U("0.05")


def test_leverage_beyond_maintenance_bound(market):
    market.open_contract("trader", "long", U(100), Fraction(19))
    with pytest.raises(ImmediateLiquidation):
        market.open_contract("trader", "long", U(100), Fraction(20))
    with pytest.raises(ImmediateLiquidation):
        market.open_contract("trader", "long", U(100), Fraction(20) + Fraction(1, 10**6))


def test_mark_example_survives_then_liquidates(market):
    c = market.open_contract("trader", "long", U(100), 10)
    assert market.mark(U(1900)) == []
    assert FixedAmount(market.equity(c.ref)) == U(50)
    assert FixedAmount(market.maintenance(c.ref)) == U("47.5")
    before = market.ledger.balance("trader", "USD")
    events = market.mark(U(1890))
    assert [e.ref for e in events] == [c.ref]
    assert events[0].refund == U(45)
    assert market.ledger.balance("trader", "USD") - before == U(45)
    assert c.status == "liquidated" and market.registry.token_for(c.ref) is None


def test_mark_at_entry_changes_nothing(market):
    c = market.open_contract("trader", "long", U(100), 5)
    assert market.mark(U(2000)) == [] and market.equity(c.ref) == U(100).raw


def test_matched_pair_nets_zero_for_clearinghouse(market):
    ch = market.clearinghouse
    start = market.ledger.balance(ch, "USD")
    a = market.open_contract("trader", "long", U(100), 3)
    b = market.open_contract("other", "short", U(100), 3)
    market.mark(U("2137.123456789"))
    market.settle(a.ref, "trader")
    market.settle(b.ref, "other")
    assert market.ledger.balance(ch, "USD") == start


def test_settle_examples(market):
    c = market.open_contract("trader", "long", U(100), 10)
    with pytest.raises(NotNftHolder):
        market.settle(c.ref, "other")
    d = market.open_contract("trader", "long", U(100), 10)
    assert market.settle(d.ref, "trader") == U(100)
    market.set_price(U(2100))
    assert market.settle(c.ref, "trader") == U(150)
    with pytest.raises(AlreadyClosed):
        market.settle(c.ref, "trader")


def test_transferred_nft_routes_settlement(market):
    c = market.open_contract("trader", "long", U(100), 2)
    market.registry.transfer_nft(c.token_id, "trader", "other")
    with pytest.raises(NotNftHolder):
        market.settle(c.ref, "trader")
    before = market.ledger.balance("other", "USD")
    market.settle(c.ref, "other")
    assert market.ledger.balance("other", "USD") - before == U(100)


prices = st.integers(1, 10**4 * SCALE)


@given(st.sampled_from(["long", "short"]), st.integers(1, 19), prices, prices)
def test_equity_monotone_in_mark(side, lev, p1, p2):
    led, reg = Ledger(), NftRegistry()
    led.mint("t", "USD", U(1000))
    m = PerpMarket(led, reg, "M", "ETH", "USD", U(2000), "0.05")
    c = m.open_contract("t", side, U(100), lev)
    lo, hi = sorted((p1, p2))
    if lo == hi:
        return
    e_lo, e_hi = m.equity(c.ref, lo), m.equity(c.ref, hi)
    assert (e_hi >= e_lo) if side == "long" else (e_hi <= e_lo)
    exact = perp_equity(Fraction(100), Fraction(c.size, SCALE), Fraction(2000), Fraction(hi, SCALE), side == "long")
    assert abs(Fraction(e_hi, SCALE) - exact) <= Fraction(1, SCALE)


@given(st.lists(st.integers(1000, 3000), min_size=1, max_size=10))
def test_no_open_contract_left_below_maintenance(path):
    led, reg = Ledger(), NftRegistry()
    led.mint("t", "USD", U(10**5))
    led.mint("clearinghouse:M", "USD", U(10**7))
    m = PerpMarket(led, reg, "M", "ETH", "USD", U(2000), "0.05")
    for lev in (2, 5, 10, 15):
        m.open_contract("t", "long", U(100), lev)
        m.open_contract("t", "short", U(100), lev)
    for p in path:
        m.mark(U(p))
        assert all(not m.is_liquidatable(r) for r in m.live_refs())
        assert reg.check_bijection()


@given(st.integers(1, 19), st.integers(1500, 2000))
def test_settling_early_beats_liquidation_refund(lev, crash):
    led, reg = Ledger(), NftRegistry()
    led.mint("t", "USD", U(1000))
    led.mint("clearinghouse:M", "USD", U(10**6))
    m = PerpMarket(led, reg, "M", "ETH", "USD", U(2000), "0.05")
    a = m.open_contract("t", "long", U(100), lev)
    b = m.open_contract("t", "long", U(100), lev)
    early = m.settle(a.ref, "t")
    events = m.mark(U(crash))
    refund = events[0].refund if events else FixedAmount(m.equity(b.ref))
    assert early >= refund
