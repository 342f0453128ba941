"""Closed-form fee, profitability and break-even evaluation.

All arithmetic is exact (``fractions.Fraction``); amounts come in either as
:class:`FixedAmount` or anything ``Fraction`` accepts.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import CsvFormatError, MissingAsset, ZeroFee, ZeroTotalLiquidity
from .fixedpoint import FixedAmount, fmt_fraction, to_fraction

DAYS_PER_YEAR = 365
CSV_HEADER = ("date", "asset", "variable_borrow_apr_percent")

Quantity = Union[FixedAmount, Fraction, int, str]


def _q(value: Quantity) -> Fraction:
    return to_fraction(value)


def expected_fee_reward(
    liquidity: FixedAmount, total_liquidity: FixedAmount, volume: FixedAmount, fee
) -> FixedAmount:
    """Static 24h fee estimate ``(L_j / sum L) * A * f`` for one provider in one band."""
    if total_liquidity.raw == 0:
        raise ZeroTotalLiquidity("band has no liquidity")
    if liquidity > total_liquidity:
        raise ValueError("provider liquidity exceeds band total")
    f = to_fraction(fee)
    num = liquidity.raw * volume.raw * f.numerator
    return FixedAmount(num // (total_liquidity.raw * f.denominator))


@dataclass(frozen=True)
class RateObservation:
    date: dt.date
    asset: str
    apr: Fraction  # fraction, not percent


@dataclass
class RateSeries:
    observations: List[RateObservation]

    def __post_init__(self):
        last: Dict[str, dt.date] = {}
        for obs in self.observations:
            if obs.apr < 0:
                raise ValueError(f"negative APR for {obs.asset} on {obs.date}")
            prev = last.get(obs.asset)
            if prev is not None and obs.date < prev:
                raise ValueError(f"{obs.asset}: dates go backwards at {obs.date}")
            last[obs.asset] = obs.date

    def assets(self) -> List[str]:
        return sorted({o.asset for o in self.observations})


def parse_rate_rows(rows: Iterable[Sequence[str]], source: str = "<csv>") -> RateSeries:
    it = iter(rows)
    try:
        header = next(it)
    except StopIteration:
        raise CsvFormatError(f"{source}: line 1: empty file, expected header {','.join(CSV_HEADER)}")
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise CsvFormatError(
            f"{source}: line 1: header must be exactly {','.join(CSV_HEADER)}, got {','.join(header)}"
        )
    observations = []
    for lineno, row in enumerate(it, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise CsvFormatError(f"{source}: line {lineno}: expected 3 columns, got {len(row)}")
        date_s, asset, pct = (c.strip() for c in row)
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError:
            raise CsvFormatError(f"{source}: line {lineno}: bad ISO-8601 date {date_s!r}") from None
        try:
            percent = Decimal(pct)
        except InvalidOperation:
            raise CsvFormatError(f"{source}: line {lineno}: bad percent value {pct!r}") from None
        if not percent.is_finite() or percent < 0:
            raise CsvFormatError(f"{source}: line {lineno}: APR must be a non-negative number")
        if not asset:
            raise CsvFormatError(f"{source}: line {lineno}: empty asset")
        observations.append(RateObservation(date, asset, Fraction(percent) / 100))
    try:
        return RateSeries(observations)
    except ValueError as exc:
        raise CsvFormatError(f"{source}: {exc}") from None


def load_rate_csv(path: Union[str, Path]) -> RateSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        return parse_rate_rows(csv.reader(fh), str(path))


def average_rates(
    series: RateSeries,
    assets: Sequence[str],
    weights: Optional[Mapping[str, Quantity]] = None,
) -> Tuple[Dict[str, Fraction], Fraction]:
    """Per-asset arithmetic mean APR and their value-weighted blend.

    Without ``weights`` every asset carries equal value, so the blend is the
    plain mean of the per-asset means.
    """
    if not assets:
        raise ValueError("no assets requested")
    sums: Dict[str, Fraction] = {}
    counts: Dict[str, int] = {}
    for obs in series.observations:
        if obs.asset in assets:
            sums[obs.asset] = sums.get(obs.asset, Fraction(0)) + obs.apr
            counts[obs.asset] = counts.get(obs.asset, 0) + 1
    missing = [a for a in assets if a not in counts]
    if missing:
        raise MissingAsset(f"no observations for {', '.join(missing)}")
    per_asset = {a: sums[a] / counts[a] for a in assets}
    w = {a: Fraction(1) for a in assets} if weights is None else {a: _q(weights[a]) for a in assets}
    total = sum(w.values(), Fraction(0))
    if total <= 0:
        raise ValueError("weights must sum to a positive value")
    blended = sum((per_asset[a] * w[a] for a in assets), Fraction(0)) / total
    return per_asset, blended


@dataclass(frozen=True)
class BreakEvenReport:
    annual_rate: Fraction
    daily_rate: Fraction
    fee: Fraction
    threshold: Fraction  # minimum volume / liquidity in the target band

    @property
    def threshold_percent_rounded_down(self) -> Fraction:
        """Threshold in percent, truncated to one decimal (the way it is usually quoted)."""
        return Fraction(math.floor(self.threshold * 1000), 10)

    def to_json(self) -> dict:
        return {
            "annual_rate": fmt_fraction(self.annual_rate),
            "annual_rate_percent": fmt_fraction(self.annual_rate * 100),
            "daily_rate": fmt_fraction(self.daily_rate, 24),
            "daily_rate_exact": str(self.daily_rate),
            "fee_tier": fmt_fraction(self.fee),
            "threshold": fmt_fraction(self.threshold, 24),
            "threshold_exact": str(self.threshold),
            "threshold_percent": fmt_fraction(self.threshold * 100, 12),
            "threshold_percent_rounded_down": fmt_fraction(self.threshold_percent_rounded_down),
        }


def break_even(annual_rate: Quantity, fee: Quantity) -> BreakEvenReport:
    annual = _q(annual_rate)
    f = _q(fee)
    if f <= 0:
        raise ZeroFee("fee tier must be positive")
    if annual < 0:
        raise ValueError("annual rate must be non-negative")
    daily = annual / DAYS_PER_YEAR
    return BreakEvenReport(annual, daily, f, daily / f)


def borrow_is_profitable(daily_rate: Quantity, volume_next: Quantity, liquidity_next: Quantity, fee: Quantity) -> bool:
    """Threshold form: ``I <= (A_next / sum L_next) * f``."""
    liq = _q(liquidity_next)
    if liq <= 0:
        raise ZeroTotalLiquidity("target band liquidity must be positive")
    return _q(daily_rate) <= _q(volume_next) / liq * _q(fee)


@dataclass(frozen=True)
class ProfitabilityCheck:
    lhs: Fraction
    rhs: Fraction
    profitable: bool

    @property
    def margin(self) -> Fraction:
        return self.rhs - self.lhs


def profitability_check(
    share_i: Quantity,
    volume_i: Quantity,
    share_next: Quantity,
    volume_next: Quantity,
    fee: Quantity,
    daily_rate: Quantity,
    borrowed: Quantity,
) -> ProfitabilityCheck:
    """Both sides of the hold-vs-borrow inequality, evaluated term by term."""
    s_i, s_n = _q(share_i), _q(share_next)
    for s in (s_i, s_n):
        if not 0 <= s <= 1:
            raise ValueError("shares must lie in [0, 1]")
    f = _q(fee)
    hold = s_i * _q(volume_i) * f
    lhs = hold
    rhs = hold + s_n * _q(volume_next) * f - _q(borrowed) * _q(daily_rate)
    return ProfitabilityCheck(lhs, rhs, lhs <= rhs)


def ltv_borrow(ltv: Quantity, liquidity: Quantity) -> Fraction:
    """Liquidity a provider can add to the next band by borrowing against a position."""
    return _q(ltv) * _q(liquidity)
