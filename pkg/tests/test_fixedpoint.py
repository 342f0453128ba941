from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from perpnft.errors import DivisionByZero, InsufficientBalance, NegativeAmount
from perpnft.fixedpoint import SCALE, FixedAmount, Ledger, Rounding, format_raw, mul_div

U = FixedAmount.of
raws = st.integers(min_value=0, max_value=10**40)


def test_of_and_str_round_trip():
    assert U("1.5").raw == 3 * SCALE // 2
    assert str(U("0.000000000000000001")) == "0.000000000000000001"
    assert str(U(42)) == "42"
    assert format_raw(-5 * SCALE // 2) == "-2.5"


def test_rejects_floats_and_negatives():
    with pytest.raises(TypeError):
        U(0.1)
    with pytest.raises(NegativeAmount):
        FixedAmount(-1)
    with pytest.raises(NegativeAmount):
        U(1) - U(2)


def test_transfer_examples():
    led = Ledger()
    led.mint("A", "USD", U(100))
    led.transfer("A", "B", "USD", U(0))
    assert led.balance("A", "USD") == U(100) and led.balance("B", "USD") == U(0)
    led.transfer("A", "B", "USD", U(40))
    assert led.balance("A", "USD") == U(60) and led.balance("B", "USD") == U(40)
    led.burn("A", "USD", U(50))
    with pytest.raises(InsufficientBalance):
        led.transfer("A", "B", "USD", U(40))


def test_mul_div_examples():
    x = U("123.456")
    assert mul_div(x, FixedAmount(1), FixedAmount(1)) == x
    assert mul_div(U(50), U(30), U(200)) == U("7.5")
    assert mul_div(FixedAmount(1), FixedAmount(1), FixedAmount(3), Rounding.UP) == FixedAmount(1)
    assert mul_div(FixedAmount(1), FixedAmount(1), FixedAmount(3)) == FixedAmount(0)
    with pytest.raises(DivisionByZero):
        mul_div(x, x, FixedAmount(0))


@given(raws, raws, st.integers(min_value=1, max_value=10**40))
def test_mul_div_brackets_exact_value(a, b, c):
    exact = Fraction(a * b, c)
    down = mul_div(FixedAmount(a), FixedAmount(b), FixedAmount(c)).raw
    up = mul_div(FixedAmount(a), FixedAmount(b), FixedAmount(c), Rounding.UP).raw
    assert down <= exact < down + 1
    assert up - 1 < exact <= up


@given(st.lists(st.tuples(st.sampled_from("ABCD"), st.sampled_from("ABCD"), st.sampled_from(["X", "Y"]),
                          st.integers(0, 10**20)), max_size=40))
def test_conservation_under_random_transfers(moves):
    led = Ledger()
    for acct in "ABCD":
        led.mint(acct, "X", FixedAmount(10**21))
        led.mint(acct, "Y", FixedAmount(10**21))
    for src, dst, asset, amount in moves:
        try:
            led.transfer(src, dst, asset, FixedAmount(amount))
        except InsufficientBalance:
            pass
    audit = led.audit({"X": FixedAmount(4 * 10**21), "Y": FixedAmount(4 * 10**21)})
    assert all(e["ok"] for e in audit.values())


@given(st.integers(0, 10**21))
def test_transfer_is_its_own_inverse(amount):
    led = Ledger()
    led.mint("A", "USD", FixedAmount(10**21))
    before = led.snapshot()
    led.transfer("A", "B", "USD", FixedAmount(amount))
    led.transfer("B", "A", "USD", FixedAmount(amount))
    assert led.snapshot() == before


def test_audit_flags_declared_mismatch():
    led = Ledger()
    led.mint("A", "USD", U(10))
    assert led.audit({"USD": "10"})["USD"]["ok"]
    assert not led.audit({"USD": "11"})["USD"]["ok"]
