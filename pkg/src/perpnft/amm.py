"""Banded constant-product pool with pro-rata fee accounting.

Each band is a self-contained ``x * y = k`` curve restricted to a swap-ratio
interval ``[ratio_lo, ratio_hi]`` (ratio = reserve_y / reserve_x). A swap moves
along the active band's curve until the ratio limit, then continues in the
next band with liquidity.

Fees are charged per band on cumulative volume: after any sequence of swaps a
band has collected exactly ``ceil(volume_total * fee_rate)`` raw units, which is
what makes the fee-conservation audit exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import (
    InsufficientLiquidity,
    MissingPrice,
    NotNftHolder,
    PositionClosed,
    PositionEscrowed,
    RatioMismatch,
    UnknownBand,
    ZeroInput,
)
from .fixedpoint import SCALE, FixedAmount, Ledger, fmt_fraction, format_raw, to_fraction
from .nft import NftKind, NftRegistry

FEE_TIERS = (Fraction(5, 10_000), Fraction(3, 1_000), Fraction(1, 100))
RATIO_TOLERANCE = Fraction(1, 1000)


def fee_tier(value, extra_tiers: Sequence = ()) -> Fraction:
    rate = to_fraction(value)
    allowed = set(FEE_TIERS) | {to_fraction(t) for t in extra_tiers}
    if rate not in allowed:
        raise ValueError(f"fee tier {value} not in {sorted(str(t) for t in allowed)}")
    return rate


def _ceil_mul(amount: int, rate: Fraction) -> int:
    return -(-amount * rate.numerator // rate.denominator)


@dataclass
class Band:
    index: int
    ratio_lo: Fraction
    ratio_hi: Fraction
    reserve_x: int = 0
    reserve_y: int = 0
    # L_i^j keyed by position ref
    liquidity: Dict[str, int] = field(default_factory=dict)
    unclaimed: Dict[str, Dict[str, int]] = field(default_factory=dict)
    volume_window: Dict[str, int] = field(default_factory=dict)
    volume_total: Dict[str, int] = field(default_factory=dict)
    fees_collected: Dict[str, int] = field(default_factory=dict)
    fees_claimed: Dict[str, int] = field(default_factory=dict)
    fee_dust: Dict[str, int] = field(default_factory=dict)

    @property
    def total_liquidity(self) -> int:
        return sum(self.liquidity.values())

    @property
    def product(self) -> int:
        return self.reserve_x * self.reserve_y

    @property
    def ratio(self) -> Optional[Fraction]:
        if self.reserve_x == 0:
            return None
        return Fraction(self.reserve_y, self.reserve_x)

    def contains(self, ratio: Fraction) -> bool:
        return self.ratio_lo <= ratio <= self.ratio_hi

    def fee_for(self, asset: str, gross: int, rate: Fraction) -> int:
        v = self.volume_total.get(asset, 0)
        return _ceil_mul(v + gross, rate) - _ceil_mul(v, rate)


@dataclass
class Position:
    ref: str
    band_index: int
    provider: str
    token_id: Optional[int] = None
    status: str = "open"


@dataclass(frozen=True)
class SwapLeg:
    band_index: int
    gross_in: int
    fee: int
    out: int
    new_reserve_x: int
    new_reserve_y: int


def _add(d: Dict[str, int], key: str, raw: int) -> None:
    d[key] = d.get(key, 0) + raw


class Pool:
    def __init__(
        self,
        ledger: Ledger,
        registry: NftRegistry,
        pool_id: str,
        asset_x: str,
        asset_y: str,
        fee_rate,
        bands: Sequence[Tuple[object, object]],
        active_band: Optional[int] = None,
        extra_fee_tiers: Sequence = (),
    ):
        if asset_x == asset_y:
            raise ValueError("pool assets must differ")
        self.ledger = ledger
        self.registry = registry
        self.pool_id = pool_id
        self.asset_x = asset_x
        self.asset_y = asset_y
        self.fee_rate = fee_tier(fee_rate, extra_fee_tiers)
        self.account = f"pool:{pool_id}"
        self.fee_account = f"pool:{pool_id}:dust"
        self.prefix = f"lp:{pool_id}"
        self.bands: List[Band] = []
        prev_hi = None
        for i, (lo, hi) in enumerate(bands):
            lo, hi = to_fraction(lo), to_fraction(hi)
            if not 0 < lo < hi:
                raise ValueError(f"band {i}: need 0 < ratio_lo < ratio_hi")
            if prev_hi is not None and lo != prev_hi:
                raise ValueError(f"band {i}: bands must be contiguous and ascending")
            prev_hi = hi
            self.bands.append(Band(i, lo, hi))
        if not self.bands:
            raise ValueError("pool needs at least one band")
        if active_band is not None:
            self._band(active_band)
        self.active_band = active_band
        self.positions: Dict[str, Position] = {}
        self._ids = itertools.count(1)
        registry.attach(self.prefix, self)

    # -- lookup ---------------------------------------------------------------

    def _band(self, index: int) -> Band:
        if not 0 <= index < len(self.bands):
            raise UnknownBand(f"pool {self.pool_id} has no band {index}")
        return self.bands[index]

    def band(self, index: int) -> Band:
        return self._band(index)

    def position(self, ref: str) -> Position:
        try:
            return self.positions[ref]
        except KeyError:
            raise PositionClosed(f"unknown position {ref}") from None

    def _open_position(self, ref: str) -> Position:
        pos = self.position(ref)
        if pos.status != "open":
            raise PositionClosed(f"position {ref} is closed")
        return pos

    def _check_caller(self, pos: Position, caller: str) -> None:
        nft = self.registry.token_for(pos.ref)
        if nft.escrow is not None and caller != nft.escrow:
            raise PositionEscrowed(f"position {pos.ref} is collateral held by {nft.escrow}")
        if caller != nft.holder:
            raise NotNftHolder(f"{caller} does not hold the NFT of {pos.ref}")

    # -- UnderlyingSource ------------------------------------------------------

    def is_live(self, ref: str) -> bool:
        pos = self.positions.get(ref)
        return pos is not None and pos.status == "open"

    def live_refs(self):
        return [r for r, p in self.positions.items() if p.status == "open"]

    def position_holdings(self, ref: str) -> Dict[str, int]:
        """Raw amounts a full withdrawal would pay now, fees included."""
        pos = self._open_position(ref)
        band = self.bands[pos.band_index]
        share, total = band.liquidity[ref], band.total_liquidity
        held = {
            self.asset_x: band.reserve_x * share // total,
            self.asset_y: band.reserve_y * share // total,
        }
        for asset, raw in band.unclaimed.get(ref, {}).items():
            held[asset] += raw
        return held

    def appraise_ref(self, ref: str, prices: Mapping[str, FixedAmount]) -> FixedAmount:
        held = self.position_holdings(ref)
        value = 0
        for asset, raw in held.items():
            if asset not in prices:
                raise MissingPrice(f"no price for {asset}")
            value += raw * FixedAmount.of(prices[asset]).raw
        return FixedAmount(value // SCALE)

    # -- liquidity ---------------------------------------------------------------

    def provide_liquidity(
        self, provider: str, band_index: int, amount_x: FixedAmount, amount_y: FixedAmount
    ) -> Position:
        band = self._band(band_index)
        dx, dy = amount_x.raw, amount_y.raw
        if dx == 0 or dy == 0:
            raise RatioMismatch("both assets must be deposited")
        if band.total_liquidity == 0:
            # bootstrap: clamp the opening ratio into the band by trimming the surplus leg
            ratio = Fraction(dy, dx)
            if ratio < band.ratio_lo:
                dx = dy * band.ratio_lo.denominator // band.ratio_lo.numerator
            elif ratio >= band.ratio_hi:
                dy = -(-dx * band.ratio_hi.numerator // band.ratio_hi.denominator) - 1
            if dx == 0 or dy == 0:
                raise RatioMismatch("deposit too small for the band's ratio range")
        else:
            current = band.ratio
            deviation = abs(Fraction(dy, dx) / current - 1)
            if deviation > RATIO_TOLERANCE:
                raise RatioMismatch(
                    f"deposit ratio {float(Fraction(dy, dx)):.6g} vs band {float(current):.6g}"
                )
            new_ratio = Fraction(band.reserve_y + dy, band.reserve_x + dx)
            if not band.contains(new_ratio):
                raise RatioMismatch("deposit would push the band outside its ratio range")
        liquidity = math.isqrt(dx * dy)
        if liquidity == 0:
            raise RatioMismatch("deposit too small")
        self.ledger.require(provider, self.asset_x, FixedAmount(dx))
        self.ledger.require(provider, self.asset_y, FixedAmount(dy))
        self.ledger.transfer(provider, self.account, self.asset_x, FixedAmount(dx))
        self.ledger.transfer(provider, self.account, self.asset_y, FixedAmount(dy))

        if band.total_liquidity == 0 and (band.reserve_x or band.reserve_y):
            # leftovers from a previously emptied band
            self._sweep_reserves(band)
        band.reserve_x += dx
        band.reserve_y += dy
        ref = f"{self.prefix}/{next(self._ids)}"
        band.liquidity[ref] = liquidity
        band.unclaimed[ref] = {}
        pos = Position(ref, band_index, provider)
        self.positions[ref] = pos
        if self.active_band is None:
            self.active_band = band_index
        pos.token_id = self.registry.mint(NftKind.LP, ref, provider).token_id
        return pos

    def _sweep_reserves(self, band: Band) -> None:
        self.ledger.transfer(self.account, self.fee_account, self.asset_x, FixedAmount(band.reserve_x))
        self.ledger.transfer(self.account, self.fee_account, self.asset_y, FixedAmount(band.reserve_y))
        band.reserve_x = band.reserve_y = 0

    def remove_liquidity(
        self, ref: str, fraction, caller: str
    ) -> Tuple[FixedAmount, FixedAmount, Dict[str, FixedAmount]]:
        pos = self._open_position(ref)
        fraction = to_fraction(fraction)
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        self._check_caller(pos, caller)
        band = self.bands[pos.band_index]
        held = band.liquidity[ref]
        total = band.total_liquidity
        removed = held if fraction == 1 else held * fraction.numerator // fraction.denominator
        if removed == total:
            out_x, out_y = band.reserve_x, band.reserve_y
        else:
            out_x = band.reserve_x * removed // total
            out_y = band.reserve_y * removed // total
        fees = band.unclaimed[ref]
        band.unclaimed[ref] = {}
        band.reserve_x -= out_x
        band.reserve_y -= out_y
        band.liquidity[ref] = held - removed
        for asset, raw in fees.items():
            _add(band.fees_claimed, asset, raw)
        if fraction == 1:
            del band.liquidity[ref]
            del band.unclaimed[ref]
            pos.status = "closed"
            self.registry.burn_for(ref)
        if band.total_liquidity == 0 and (band.reserve_x or band.reserve_y):
            self._sweep_reserves(band)
        self.ledger.transfer(self.account, caller, self.asset_x, FixedAmount(out_x))
        self.ledger.transfer(self.account, caller, self.asset_y, FixedAmount(out_y))
        for asset in sorted(fees):
            self.ledger.transfer(self.account, caller, asset, FixedAmount(fees[asset]))
        return (
            FixedAmount(out_x),
            FixedAmount(out_y),
            {a: FixedAmount(v) for a, v in sorted(fees.items())},
        )

    def close_for(self, ref: str, caller: str) -> Dict[str, FixedAmount]:
        out_x, out_y, fees = self.remove_liquidity(ref, 1, caller)
        proceeds = {self.asset_x: out_x, self.asset_y: out_y}
        for asset, amount in fees.items():
            proceeds[asset] = proceeds[asset] + amount
        return proceeds

    def accrue_and_claim_fees(self, ref: str, caller: str) -> Dict[str, FixedAmount]:
        """Pay out everything the position has earned since its last claim."""
        pos = self._open_position(ref)
        self._check_caller(pos, caller)
        band = self.bands[pos.band_index]
        fees = band.unclaimed[ref]
        band.unclaimed[ref] = {}
        out = {}
        for asset in sorted(fees):
            _add(band.fees_claimed, asset, fees[asset])
            self.ledger.transfer(self.account, caller, asset, FixedAmount(fees[asset]))
            out[asset] = FixedAmount(fees[asset])
        return out

    def unclaimed_fees(self, ref: str) -> Dict[str, FixedAmount]:
        pos = self.position(ref)
        band = self.bands[pos.band_index]
        return {a: FixedAmount(v) for a, v in sorted(band.unclaimed.get(ref, {}).items())}

    # -- fees ---------------------------------------------------------------------

    def _distribute(self, band: Band, asset: str, fee: int) -> None:
        if fee == 0:
            return
        _add(band.fees_collected, asset, fee)
        total = band.total_liquidity
        paid = 0
        for ref in sorted(band.liquidity):
            share = fee * band.liquidity[ref] // total
            if share:
                _add(band.unclaimed[ref], asset, share)
                paid += share
        dust = fee - paid
        if dust:
            _add(band.fee_dust, asset, dust)
            self.ledger.transfer(self.account, self.fee_account, asset, FixedAmount(dust))

    def inject_volume(self, band_index: int, asset: str, amount: FixedAmount, payer: str) -> FixedAmount:
        """Book trade volume on a band without moving its reserves.

        Stands in for round-trip flow through the band: ``payer`` pays the fee
        on ``amount``, which is distributed exactly as a swap's fee would be.
        """
        band = self._band(band_index)
        self._asset_side(asset)
        if amount.raw == 0:
            raise ZeroInput("volume must be positive")
        if band.total_liquidity == 0:
            raise InsufficientLiquidity(f"band {band_index} has no liquidity")
        fee = band.fee_for(asset, amount.raw, self.fee_rate)
        self.ledger.transfer(payer, self.account, asset, FixedAmount(fee))
        _add(band.volume_window, asset, amount.raw)
        _add(band.volume_total, asset, amount.raw)
        self._distribute(band, asset, fee)
        return FixedAmount(fee)

    def roll_window(self) -> Dict[int, Dict[str, FixedAmount]]:
        """Close the daily accounting window; returns the closed per-band volumes."""
        closed = {}
        for band in self.bands:
            closed[band.index] = {a: FixedAmount(v) for a, v in sorted(band.volume_window.items())}
            band.volume_window = {}
        return closed

    # -- swaps --------------------------------------------------------------------

    def _asset_side(self, asset: str) -> bool:
        if asset == self.asset_x:
            return True
        if asset == self.asset_y:
            return False
        raise ValueError(f"{asset} is not in pool {self.pool_id}")

    def _route(self, asset_in: str, gross: int) -> Tuple[List[SwapLeg], int]:
        x_in = self._asset_side(asset_in)
        if gross <= 0:
            raise ZeroInput("swap input must be positive")
        if self.active_band is None:
            raise InsufficientLiquidity(f"pool {self.pool_id} has no liquidity")
        step = -1 if x_in else 1
        indices = range(self.active_band, -1 if x_in else len(self.bands), step)
        rate = self.fee_rate
        legs: List[SwapLeg] = []
        remaining = gross
        for i in indices:
            band = self.bands[i]
            if band.total_liquidity == 0:
                continue
            k = band.product
            if x_in:
                lo = band.ratio_lo
                bound = math.isqrt(k * lo.denominator // lo.numerator)
                cap = bound - band.reserve_x
            else:
                hi = band.ratio_hi
                bound = math.isqrt(k * hi.numerator // hi.denominator)
                cap = bound - band.reserve_y
            if cap <= 0:
                continue

            def net(g: int) -> int:
                return g - band.fee_for(asset_in, g, rate)

            if net(remaining) <= cap:
                g = remaining
            else:
                g = min(remaining, cap * rate.denominator // (rate.denominator - rate.numerator))
                while g < remaining and net(g + 1) <= cap:
                    g += 1
                while net(g) > cap:
                    g -= 1
            if g == 0:
                continue
            fee = band.fee_for(asset_in, g, rate)
            dn = g - fee
            if x_in:
                nx = band.reserve_x + dn
                ny = -(-k // nx)
                out = band.reserve_y - ny
            else:
                ny = band.reserve_y + dn
                nx = -(-k // ny)
                out = band.reserve_x - nx
            legs.append(SwapLeg(i, g, fee, out, nx, ny))
            remaining -= g
            if remaining == 0:
                return legs, i
        raise InsufficientLiquidity(
            f"pool {self.pool_id}: {format_raw(remaining)} {asset_in} left unfilled"
        )

    def quote(self, asset_in: str, amount_in: FixedAmount) -> FixedAmount:
        legs, _ = self._route(asset_in, amount_in.raw)
        return FixedAmount(sum(leg.out for leg in legs))

    def swap(self, trader: str, asset_in: str, amount_in: FixedAmount) -> FixedAmount:
        legs, last = self._route(asset_in, amount_in.raw)
        asset_out = self.asset_y if asset_in == self.asset_x else self.asset_x
        self.ledger.require(trader, asset_in, amount_in)
        self.ledger.transfer(trader, self.account, asset_in, amount_in)
        total_out = 0
        for leg in legs:
            band = self.bands[leg.band_index]
            band.reserve_x, band.reserve_y = leg.new_reserve_x, leg.new_reserve_y
            _add(band.volume_window, asset_in, leg.gross_in)
            _add(band.volume_total, asset_in, leg.gross_in)
            self._distribute(band, asset_in, leg.fee)
            total_out += leg.out
        self.active_band = last
        self.ledger.transfer(self.account, trader, asset_out, FixedAmount(total_out))
        return FixedAmount(total_out)

    # -- reporting ----------------------------------------------------------------

    def fee_audit(self) -> Dict[str, dict]:
        """Per-asset check: claimed + unclaimed + dust == ceil(volume * fee) summed over bands."""
        out = {}
        for asset in (self.asset_x, self.asset_y):
            expected = sum(_ceil_mul(b.volume_total.get(asset, 0), self.fee_rate) for b in self.bands)
            collected = sum(b.fees_collected.get(asset, 0) for b in self.bands)
            accounted = sum(
                b.fees_claimed.get(asset, 0)
                + b.fee_dust.get(asset, 0)
                + sum(u.get(asset, 0) for u in b.unclaimed.values())
                for b in self.bands
            )
            out[asset] = {
                "expected": expected,
                "collected": collected,
                "accounted": accounted,
                "ok": expected == collected == accounted,
            }
        return out

    def dump(self) -> dict:
        bands = []
        for b in self.bands:
            bands.append(
                {
                    "index": b.index,
                    "ratio_lo": str(b.ratio_lo),
                    "ratio_hi": str(b.ratio_hi),
                    "reserve_x": format_raw(b.reserve_x),
                    "reserve_y": format_raw(b.reserve_y),
                    "total_liquidity": format_raw(b.total_liquidity),
                    "volume_window": {a: format_raw(v) for a, v in sorted(b.volume_window.items())},
                    "providers": [
                        {
                            "id": ref,
                            "liquidity": format_raw(b.liquidity[ref]),
                            "unclaimed_fees": {
                                a: format_raw(v) for a, v in sorted(b.unclaimed[ref].items())
                            },
                        }
                        for ref in sorted(b.liquidity)
                    ],
                }
            )
        return {
            "pair": f"{self.asset_x}/{self.asset_y}",
            "fee_tier": fmt_fraction(self.fee_rate),
            "bands": bands,
        }
