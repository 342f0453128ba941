from fractions import Fraction

import pytest

from perpnft.amm import Pool
from perpnft.errors import (
    DuplicateMint,
    Escrowed,
    MissingPrice,
    NotNftHolder,
    NotOwner,
    UnknownToken,
    UnknownUnderlying,
)
from perpnft.fixedpoint import FixedAmount, Ledger
from perpnft.nft import NftKind, NftRegistry
from perpnft.perp import PerpMarket

U = FixedAmount.of


@pytest.fixture
def env():
    led, reg = Ledger(), NftRegistry()
    for a in ("alice", "bob"):
        led.mint(a, "USD", U(1000))
        led.mint(a, "WETH", U(100))
        led.mint(a, "UNI", U(1000))
    led.mint("clearinghouse:ETH", "USD", U(10**6))
    market = PerpMarket(led, reg, "ETH", "ETH", "USD", U(2000), "0.05")
    pool = Pool(led, reg, "P", "WETH", "UNI", "0.003", [(5, 20)])
    return led, reg, market, pool


def test_open_mints_exactly_one_token(env):
    led, reg, market, pool = env
    c = market.open_contract("alice", "long", U(100), 2)
    assert [n.underlying_ref for n in reg.live_tokens()] == [c.ref]
    with pytest.raises(DuplicateMint):
        reg.mint(NftKind.PERP, c.ref, "alice")
    with pytest.raises(UnknownUnderlying):
        reg.mint(NftKind.PERP, "perp:ETH/99", "alice")
    with pytest.raises(UnknownUnderlying):
        reg.mint(NftKind.PERP, "nowhere/1", "alice")


def test_provide_liquidity_mints_position_token(env):
    led, reg, market, pool = env
    pos = pool.provide_liquidity("alice", 0, U(1), U(10))
    nft = reg.get(pos.token_id)
    assert nft.kind is NftKind.LP and nft.underlying_ref == pos.ref


def test_transfer_rules(env):
    led, reg, market, pool = env
    c = market.open_contract("alice", "long", U(100), 2)
    with pytest.raises(NotOwner):
        reg.transfer_nft(c.token_id, "bob", "alice")
    reg.transfer_nft(c.token_id, "alice", "bob")
    reg.set_escrow(c.token_id, "vault", "bob")
    with pytest.raises(Escrowed):
        reg.transfer_nft(c.token_id, "bob", "alice")
    # the owner cannot act on an escrowed underlying
    with pytest.raises(NotNftHolder):
        market.settle(c.ref, "bob")
    reg.release_escrow(c.token_id, "vault")
    assert market.settle(c.ref, "bob") == U(100)


def test_perp_appraisal(env):
    led, reg, market, pool = env
    c = market.open_contract("alice", "long", U(100), 10)
    prices = {"USD": U(1)}
    assert reg.appraise(c.token_id, prices) == U(100)
    market.set_price(U(1790))  # equity -5, no liquidation pass
    assert market.equity(c.ref) == -U(5).raw
    assert reg.appraise(c.token_id, prices) == U(0)
    assert reg.get(c.token_id).last_appraisal == U(0)
    with pytest.raises(MissingPrice):
        reg.appraise(c.token_id, {})
    with pytest.raises(UnknownToken):
        reg.appraise(999, prices)


def test_perp_appraisal_equals_settle_payout(env):
    led, reg, market, pool = env
    c = market.open_contract("alice", "short", U(100), 4)
    market.set_price(U("1961.25"))
    value = reg.appraise(c.token_id, {"USD": U(1)})
    assert market.settle(c.ref, "alice") == value


def test_position_appraisal(env):
    led, reg, market, pool = env
    a = pool.provide_liquidity("alice", 0, U(5), U(50))
    pool.provide_liquidity("bob", 0, U(5), U(50))
    prices = {"WETH": U(2000), "UNI": U(10)}
    assert reg.appraise(a.token_id, prices) == U(10500)
    pool.swap("bob", "UNI", U(10))
    fees = pool.unclaimed_fees(a.ref)["UNI"]
    held = pool.position_holdings(a.ref)
    expected = Fraction(held["WETH"] * 2000 + held["UNI"] * 10, 10**18)
    assert reg.appraise(a.token_id, prices) == U(expected)
    assert fees.raw > 0 and held["UNI"] >= fees.raw


def test_bijection_and_dump(env):
    led, reg, market, pool = env
    c = market.open_contract("alice", "long", U(100), 2)
    p = pool.provide_liquidity("bob", 0, U(1), U(10))
    assert reg.check_bijection()
    market.settle(c.ref, "alice")
    pool.remove_liquidity(p.ref, 1, "bob")
    assert reg.check_bijection() and reg.dump() == []
    d = market.open_contract("alice", "long", U(100), 2)
    reg.appraise(d.token_id, {"USD": U(1)})
    assert reg.dump() == [{"token_id": 3, "kind": "perp-contract", "underlying_ref": d.ref,
                           "owner": "alice", "escrow": None, "last_appraisal": "100"}]


def test_unclaimed_fees_follow_the_token(env):
    led, reg, market, pool = env
    pos = pool.provide_liquidity("alice", 0, U(5), U(50))
    pool.swap("bob", "UNI", U(10))
    owed = pool.unclaimed_fees(pos.ref)
    reg.transfer_nft(pos.token_id, "alice", "bob")
    with pytest.raises(NotNftHolder):
        pool.accrue_and_claim_fees(pos.ref, "alice")
    assert pool.accrue_and_claim_fees(pos.ref, "bob") == owed
