"""Container wiring the ledger, registry, pools, markets and vault of one simulation."""

from __future__ import annotations

from typing import Dict, List, Optional

from .amm import Pool
from .fixedpoint import FixedAmount, Ledger
from .lending import DefaultEvent, LendingVault
from .nft import NftRegistry
from .perp import LiquidationEvent, PerpMarket


class World:
    def __init__(self, numeraire: str = "USD"):
        self.numeraire = numeraire
        self.ledger = Ledger()
        self.registry = NftRegistry()
        self.pools: Dict[str, Pool] = {}
        self.markets: Dict[str, PerpMarket] = {}
        self.vault: Optional[LendingVault] = None
        self.prices: Dict[str, FixedAmount] = {numeraire: FixedAmount.of(1)}
        self.tick = 0
        # every state-changing event in execution order, replayable
        self.journal: List[dict] = []
        self.defaults: List[DefaultEvent] = []
        self.liquidations: List[LiquidationEvent] = []

    def price_map(self) -> Dict[str, FixedAmount]:
        return dict(self.prices)

    def set_price(self, asset: str, price: FixedAmount) -> None:
        if price.raw <= 0:
            raise ValueError(f"price of {asset} must be positive")
        self.prices[asset] = price

    def mark_prices(self, marks: Dict[str, FixedAmount], prices: Optional[Dict[str, FixedAmount]] = None):
        """Price phase of a tick.

        Order: new prices land on every market, the vault settles anything past
        its trigger, and only then do markets liquidate what is still underwater.
        """
        for asset, price in (prices or {}).items():
            self.set_price(asset, price)
        for market_id, price in marks.items():
            market = self.markets[market_id]
            market.set_price(price)
            self.prices[market.underlying] = price
        defaults: List[DefaultEvent] = []
        if self.vault is not None:
            defaults += self.vault.monitor_and_liquidate(self.price_map())
        liquidations: List[LiquidationEvent] = []
        for market_id in sorted(self.markets):
            liquidations += self.markets[market_id].liquidate_underwater()
        if self.vault is not None and liquidations:
            defaults += self.vault.handle_market_liquidations(liquidations, self.price_map())
        self.defaults += defaults
        self.liquidations += liquidations
        return defaults, liquidations

    def accrue(self, tick: int) -> None:
        if self.vault is not None:
            self.vault.accrue(tick)
