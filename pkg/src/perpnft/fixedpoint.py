"""18-decimal fixed-point amounts and a conservation-checked asset ledger.

Every quantity in the simulator is a non-negative integer number of raw units
(``10**18`` raw = one unit). Signed values only appear transiently, e.g. perp
PnL, and never reach the ledger.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Tuple, Union

from .errors import DivisionByZero, InsufficientBalance, NegativeAmount

DECIMALS = 18
SCALE = 10**DECIMALS

Numberish = Union[int, str, Decimal, Fraction, "FixedAmount"]


class Rounding(str, Enum):
    DOWN = "down"
    UP = "up"


DOWN = Rounding.DOWN
UP = Rounding.UP


def div_round(num: int, den: int, rounding: Rounding = DOWN) -> int:
    """Integer division of non-negative operands with explicit rounding."""
    if den == 0:
        raise DivisionByZero("division by zero")
    if rounding is UP:
        return -(-num // den)
    return num // den


def to_fraction(value: Numberish) -> Fraction:
    if isinstance(value, FixedAmount):
        return value.to_fraction()
    if isinstance(value, float):
        raise TypeError("floats are not accepted; pass a decimal string")
    return Fraction(value)


@dataclass(frozen=True, order=True, slots=True)
class FixedAmount:
    """Non-negative fixed-point quantity stored as raw integer units."""

    raw: int = 0

    def __post_init__(self):
        if not isinstance(self.raw, int):
            raise TypeError(f"raw must be int, got {type(self.raw).__name__}")
        if self.raw < 0:
            raise NegativeAmount(f"negative amount: {self.raw} raw")

    @classmethod
    def of(cls, value: Numberish, rounding: Rounding = DOWN) -> "FixedAmount":
        """Build from a unit-denominated value, e.g. ``FixedAmount.of("1.5")``."""
        if isinstance(value, FixedAmount):
            return value
        frac = to_fraction(value) * SCALE
        return cls(div_round(frac.numerator, frac.denominator, rounding))

    @classmethod
    def from_raw(cls, raw: int) -> "FixedAmount":
        return cls(raw)

    @classmethod
    def zero(cls) -> "FixedAmount":
        return cls(0)

    def to_fraction(self) -> Fraction:
        return Fraction(self.raw, SCALE)

    def __add__(self, other: "FixedAmount") -> "FixedAmount":
        return FixedAmount(self.raw + other.raw)

    def __sub__(self, other: "FixedAmount") -> "FixedAmount":
        if other.raw > self.raw:
            raise NegativeAmount(f"{self} - {other} is negative")
        return FixedAmount(self.raw - other.raw)

    def __bool__(self) -> bool:
        return self.raw != 0

    def mul_frac(self, factor: Union[Fraction, int, str], rounding: Rounding = DOWN) -> "FixedAmount":
        """Multiply by a dimensionless non-negative rational."""
        f = Fraction(factor)
        if f < 0:
            raise NegativeAmount("negative factor")
        return FixedAmount(div_round(self.raw * f.numerator, f.denominator, rounding))

    def __str__(self) -> str:
        return format_raw(self.raw)

    def __repr__(self) -> str:
        return f"FixedAmount({format_raw(self.raw)})"


def format_raw(raw: int) -> str:
    """Exact decimal string for a (possibly signed) raw amount."""
    sign = "-" if raw < 0 else ""
    whole, frac = divmod(abs(raw), SCALE)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:0{DECIMALS}d}".rstrip("0")


def mul_div(a: FixedAmount, b: FixedAmount, c: FixedAmount, rounding: Rounding = DOWN) -> FixedAmount:
    """``a*b/c`` on raw units with an unbounded intermediate product.

    Operands are treated as raw integers, so ``mul_div(x, y, z)`` equals the
    unit-level value ``x*y/z`` whenever the units cancel (as in share terms).
    """
    if c.raw == 0:
        raise DivisionByZero("mul_div by zero")
    return FixedAmount(div_round(a.raw * b.raw, c.raw, rounding))


def fmt_fraction(value: Fraction, digits: int = 18) -> str:
    """Decimal string of a rational, truncated toward zero to ``digits`` places."""
    sign = "-" if value < 0 else ""
    v = abs(value)
    scaled = v.numerator * 10**digits // v.denominator
    whole, frac = divmod(scaled, 10**digits)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:0{digits}d}".rstrip("0")


Key = Tuple[str, str]


class Ledger:
    """Multi-account balances with a per-asset supply record.

    Supply changes only through :meth:`mint` and :meth:`burn`; :meth:`audit`
    re-sums every balance and compares against that record.
    """

    def __init__(self):
        self._balances: Dict[Key, int] = {}
        self._supply: Dict[str, int] = defaultdict(int)

    def balance(self, account: str, asset: str) -> FixedAmount:
        return FixedAmount(self._balances.get((account, asset), 0))

    def mint(self, account: str, asset: str, amount: FixedAmount) -> None:
        self._credit(account, asset, amount.raw)
        self._supply[asset] += amount.raw

    def burn(self, account: str, asset: str, amount: FixedAmount) -> None:
        self._debit(account, asset, amount.raw)
        self._supply[asset] -= amount.raw

    def transfer(self, src: str, dst: str, asset: str, amount: FixedAmount) -> None:
        if amount.raw == 0:
            return
        self._debit(src, asset, amount.raw)
        self._credit(dst, asset, amount.raw)

    def require(self, account: str, asset: str, amount: FixedAmount) -> None:
        have = self._balances.get((account, asset), 0)
        if have < amount.raw:
            raise InsufficientBalance(
                f"{account} holds {format_raw(have)} {asset}, needs {amount}"
            )

    def _debit(self, account: str, asset: str, raw: int) -> None:
        key = (account, asset)
        have = self._balances.get(key, 0)
        if have < raw:
            raise InsufficientBalance(
                f"{account} holds {format_raw(have)} {asset}, needs {format_raw(raw)}"
            )
        self._balances[key] = have - raw

    def _credit(self, account: str, asset: str, raw: int) -> None:
        key = (account, asset)
        self._balances[key] = self._balances.get(key, 0) + raw

    def assets(self) -> list[str]:
        return sorted(set(self._supply) | {a for _, a in self._balances})

    def accounts(self) -> list[str]:
        return sorted({acct for acct, _ in self._balances})

    def supply(self, asset: str) -> FixedAmount:
        return FixedAmount(self._supply.get(asset, 0))

    def total(self, asset: str) -> FixedAmount:
        return FixedAmount(sum(v for (_, a), v in self._balances.items() if a == asset))

    def audit(self, expected: Mapping[str, Numberish] | None = None) -> dict:
        """Per-asset conservation check.

        Compares the summed balances against the recorded supply and, when
        given, against externally declared totals.
        """
        result = {}
        expected = expected or {}
        for asset in sorted(set(self.assets()) | set(expected)):
            summed = self.total(asset)
            recorded = self.supply(asset)
            ok = summed == recorded
            entry = {"supply": str(recorded), "sum_of_balances": str(summed)}
            if asset in expected:
                declared = FixedAmount.of(expected[asset])
                entry["declared"] = str(declared)
                ok = ok and declared == summed
            entry["ok"] = ok
            result[asset] = entry
        return result

    def snapshot(self) -> dict:
        """``{account: {asset: decimal-string}}`` with zero balances omitted."""
        out: Dict[str, Dict[str, str]] = {}
        for (acct, asset), raw in sorted(self._balances.items()):
            if raw:
                out.setdefault(acct, {})[asset] = format_raw(raw)
        return out

    def raw_items(self) -> Iterable[Tuple[Key, int]]:
        return self._balances.items()
