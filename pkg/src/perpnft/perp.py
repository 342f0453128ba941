"""Perpetual futures market against a clearinghouse counterparty.

No funding payments: a contract's value depends only on the mark price.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional

from .errors import (
    AlreadyClosed,
    ImmediateLiquidation,
    MissingPrice,
    NotNftHolder,
    PositionEscrowed,
)
from .fixedpoint import SCALE, FixedAmount, Ledger, format_raw, to_fraction
from .nft import NftKind, NftRegistry


class Side(str, Enum):
    LONG = "long"
    SHORT = "short"


@dataclass
class PerpContract:
    ref: str
    owner: str
    side: Side
    size: int
    entry_price: int
    collateral: int
    status: str = "open"
    token_id: Optional[int] = None


@dataclass(frozen=True)
class LiquidationEvent:
    ref: str
    token_id: int
    recipient: str
    asset: str
    refund: FixedAmount
    price: FixedAmount


def signed_pnl(contract: PerpContract, price: int) -> int:
    # magnitude floored, so a matched long/short pair nets to exactly zero
    magnitude = contract.size * abs(price - contract.entry_price) // SCALE
    gaining = (price >= contract.entry_price) == (contract.side is Side.LONG)
    return magnitude if gaining else -magnitude


class PerpMarket:
    def __init__(
        self,
        ledger: Ledger,
        registry: NftRegistry,
        market_id: str,
        underlying: str,
        quote: str,
        mark_price: FixedAmount,
        maintenance_margin_ratio="0.05",
        clearinghouse: Optional[str] = None,
        liquidation_penalty="0",
    ):
        self.ledger = ledger
        self.registry = registry
        self.market_id = market_id
        self.underlying = underlying
        self.quote = quote
        if mark_price.raw <= 0:
            raise ValueError("mark price must be positive")
        self.mark_price = mark_price.raw
        self.mmr = to_fraction(maintenance_margin_ratio)
        if not 0 < self.mmr < 1:
            raise ValueError("maintenance margin ratio must lie in (0, 1)")
        self.penalty = to_fraction(liquidation_penalty)
        self.clearinghouse = clearinghouse or f"clearinghouse:{market_id}"
        self.prefix = f"perp:{market_id}"
        self.contracts: Dict[str, PerpContract] = {}
        self._ids = itertools.count(1)
        registry.attach(self.prefix, self)

    # -- valuation --------------------------------------------------------------

    def contract(self, ref: str) -> PerpContract:
        try:
            return self.contracts[ref]
        except KeyError:
            raise AlreadyClosed(f"unknown contract {ref}") from None

    def equity(self, ref: str, price: Optional[int] = None) -> int:
        """Signed raw equity: collateral plus PnL at ``price`` (default: mark)."""
        c = self.contract(ref)
        return c.collateral + signed_pnl(c, self.mark_price if price is None else price)

    def maintenance(self, ref: str, price: Optional[int] = None) -> int:
        c = self.contract(ref)
        p = self.mark_price if price is None else price
        num = c.size * p * self.mmr.numerator
        return -(-num // (SCALE * self.mmr.denominator))

    def is_liquidatable(self, ref: str, price: Optional[int] = None) -> bool:
        return self.equity(ref, price) <= self.maintenance(ref, price)

    # -- UnderlyingSource --------------------------------------------------------

    def is_live(self, ref: str) -> bool:
        c = self.contracts.get(ref)
        return c is not None and c.status == "open"

    def live_refs(self):
        return [r for r, c in self.contracts.items() if c.status == "open"]

    def appraise_ref(self, ref: str, prices: Mapping[str, FixedAmount]) -> FixedAmount:
        if self.quote not in prices:
            raise MissingPrice(f"no price for {self.quote}")
        value = max(self.equity(ref), 0)
        return FixedAmount(value * FixedAmount.of(prices[self.quote]).raw // SCALE)

    # -- lifecycle ---------------------------------------------------------------

    def open_contract(self, trader: str, side, collateral: FixedAmount, leverage) -> PerpContract:
        side = Side(side)
        leverage = to_fraction(leverage)
        if collateral.raw <= 0:
            raise ValueError("collateral must be positive")
        if leverage < 1:
            raise ValueError("leverage must be at least 1")
        size = collateral.raw * leverage.numerator * SCALE // (leverage.denominator * self.mark_price)
        ref = f"{self.prefix}/{next(self._ids)}"
        c = PerpContract(ref, trader, side, size, self.mark_price, collateral.raw)
        maint = -(-size * self.mark_price * self.mmr.numerator // (SCALE * self.mmr.denominator))
        if collateral.raw <= maint:
            raise ImmediateLiquidation(
                f"leverage {leverage} breaches maintenance ratio {self.mmr} at entry"
            )
        self.ledger.require(trader, self.quote, collateral)
        self.ledger.transfer(trader, self.clearinghouse, self.quote, collateral)
        self.contracts[ref] = c
        c.token_id = self.registry.mint(NftKind.PERP, ref, trader).token_id
        return c

    def _require_open(self, ref: str) -> PerpContract:
        c = self.contract(ref)
        if c.status != "open":
            raise AlreadyClosed(f"contract {ref} is {c.status}")
        return c

    def add_margin(self, ref: str, amount: FixedAmount, payer: str) -> None:
        """Top up collateral. Anyone may pay; it never weakens a lien."""
        c = self._require_open(ref)
        self.ledger.transfer(payer, self.clearinghouse, self.quote, amount)
        c.collateral += amount.raw

    def remove_margin(self, ref: str, amount: FixedAmount, caller: str) -> None:
        c = self._require_open(ref)
        nft = self.registry.token_for(ref)
        if nft.escrow is not None and caller != nft.escrow:
            raise PositionEscrowed(f"{ref} is collateral held by {nft.escrow}")
        if caller != nft.holder:
            raise NotNftHolder(f"{caller} does not hold the NFT of {ref}")
        if amount.raw > c.collateral:
            raise ValueError("cannot withdraw more than the posted collateral")
        if self.equity(ref) - amount.raw <= self.maintenance(ref):
            raise ImmediateLiquidation("withdrawal would breach maintenance margin")
        c.collateral -= amount.raw
        self.ledger.transfer(self.clearinghouse, caller, self.quote, amount)

    def free_margin(self, ref: str) -> int:
        """Largest raw amount :meth:`remove_margin` would accept now."""
        c = self.contract(ref)
        return max(0, min(c.collateral, self.equity(ref) - self.maintenance(ref) - 1))

    def settle(self, ref: str, caller: str) -> FixedAmount:
        c = self._require_open(ref)
        nft = self.registry.token_for(ref)
        if caller != nft.holder:
            raise NotNftHolder(f"{caller} does not hold the NFT of {ref}")
        payout = FixedAmount(max(self.equity(ref), 0))
        self.ledger.transfer(self.clearinghouse, caller, self.quote, payout)
        c.status = "settled"
        self.registry.burn_for(ref)
        return payout

    def close_for(self, ref: str, caller: str) -> Dict[str, FixedAmount]:
        return {self.quote: self.settle(ref, caller)}

    def set_price(self, new_price: FixedAmount) -> None:
        if new_price.raw <= 0:
            raise ValueError("mark price must be positive")
        self.mark_price = new_price.raw

    def liquidate_underwater(self) -> List[LiquidationEvent]:
        events = []
        for ref in sorted(self.live_refs(), key=lambda r: int(r.rsplit("/", 1)[1])):
            if not self.is_liquidatable(ref):
                continue
            c = self.contracts[ref]
            notional = c.size * self.mark_price // SCALE
            penalty = notional * self.penalty.numerator // self.penalty.denominator
            refund = FixedAmount(max(self.equity(ref) - penalty, 0))
            nft = self.registry.burn_for(ref)
            c.status = "liquidated"
            self.ledger.transfer(self.clearinghouse, nft.holder, self.quote, refund)
            events.append(
                LiquidationEvent(
                    ref, nft.token_id, nft.holder, self.quote, refund, FixedAmount(self.mark_price)
                )
            )
        return events

    def mark(self, new_price: FixedAmount) -> List[LiquidationEvent]:
        self.set_price(new_price)
        return self.liquidate_underwater()

    # -- reporting --------------------------------------------------------------

    def dump_contract(self, ref: str) -> dict:
        c = self.contract(ref)
        nft = self.registry.token_for(ref)
        return {
            "id": ref,
            "owner": nft.owner if nft is not None else c.owner,
            "side": c.side.value,
            "size": format_raw(c.size),
            "entry_price": format_raw(c.entry_price),
            "collateral": format_raw(c.collateral),
            "mark_price": format_raw(self.mark_price),
            "equity": format_raw(self.equity(ref)),
            "status": c.status,
        }

    def dump(self) -> dict:
        return {
            "market": self.market_id,
            "underlying": self.underlying,
            "quote": self.quote,
            "mark_price": format_raw(self.mark_price),
            "maintenance_margin_ratio": str(self.mmr),
            "contracts": [
                self.dump_contract(r) for r in sorted(self.contracts, key=lambda r: int(r.rsplit("/", 1)[1]))
            ],
        }
