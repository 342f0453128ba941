"""NFT-collateralized lending vault with simple daily interest."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Union

from .errors import (
    ExceedsLtv,
    LoanClosed,
    MissingPrice,
    NotOwner,
    VaultIlliquid,
)
from .fixedpoint import SCALE, FixedAmount, Ledger, format_raw, to_fraction
from .nft import NftRegistry
from .perp import LiquidationEvent

DAYS_PER_YEAR = 365


@dataclass
class LendingConfig:
    ltv: Fraction
    daily_rate: Union[Fraction, Dict[str, Fraction]]
    liquidation_buffer: Fraction = Fraction(1, 10)

    def __post_init__(self):
        self.ltv = to_fraction(self.ltv)
        self.liquidation_buffer = to_fraction(self.liquidation_buffer)
        if isinstance(self.daily_rate, Mapping):
            self.daily_rate = {a: to_fraction(r) for a, r in self.daily_rate.items()}
            rates = list(self.daily_rate.values())
        else:
            self.daily_rate = to_fraction(self.daily_rate)
            rates = [self.daily_rate]
        if not 0 <= self.ltv < 1:
            raise ValueError("ltv must lie in [0, 1)")
        if any(r < 0 for r in rates):
            raise ValueError("daily rate must be non-negative")
        if not 0 < self.liquidation_buffer < 1:
            raise ValueError("liquidation buffer must lie in (0, 1)")

    def rate_for(self, asset: str) -> Fraction:
        if isinstance(self.daily_rate, dict):
            try:
                return self.daily_rate[asset]
            except KeyError:
                raise ValueError(f"no borrow rate configured for {asset}") from None
        return self.daily_rate


@dataclass
class LoanLeg:
    asset: str
    principal: int
    rate: Fraction
    accrued: int = 0

    @property
    def debt(self) -> int:
        return self.principal + self.accrued


@dataclass
class Loan:
    loan_id: str
    borrower: str
    collateral_token: int
    legs: List[LoanLeg]
    start_day: int
    status: str = "open"
    shortfall: int = 0
    recovered: Dict[str, int] = field(default_factory=dict)

    def debt(self) -> Dict[str, FixedAmount]:
        return {leg.asset: FixedAmount(leg.debt) for leg in self.legs}

    def to_json(self) -> dict:
        return {
            "id": self.loan_id,
            "borrower": self.borrower,
            "collateral_token": self.collateral_token,
            "legs": [
                {
                    "asset": leg.asset,
                    "principal": format_raw(leg.principal),
                    "accrued_interest": format_raw(leg.accrued),
                }
                for leg in self.legs
            ],
            "status": self.status,
            "shortfall": format_raw(self.shortfall),
        }


@dataclass(frozen=True)
class DefaultEvent:
    loan_id: str
    token_id: int
    trigger: str  # "vault" or "market"
    proceeds: Dict[str, FixedAmount]
    kept: Dict[str, FixedAmount]
    returned: Dict[str, FixedAmount]
    shortfall: FixedAmount
    underlying_ref: str = ""


def _price(prices: Mapping[str, FixedAmount], asset: str) -> int:
    try:
        return FixedAmount.of(prices[asset]).raw
    except KeyError:
        raise MissingPrice(f"no price for {asset}") from None


def value_of(amounts: Mapping[str, Union[int, FixedAmount]], prices) -> Fraction:
    """Exact numeraire value (in units) of a basket of raw amounts."""
    total = 0
    for asset, amount in amounts.items():
        raw = amount.raw if isinstance(amount, FixedAmount) else amount
        total += raw * _price(prices, asset)
    return Fraction(total, SCALE * SCALE)


class LendingVault:
    def __init__(self, ledger: Ledger, registry: NftRegistry, config: LendingConfig, account: str = "vault"):
        self.ledger = ledger
        self.registry = registry
        self.config = config
        self.account = account
        self.day = 0
        self.loans: Dict[str, Loan] = {}
        self._ids = itertools.count(1)

    def loan(self, loan_id: str) -> Loan:
        try:
            return self.loans[loan_id]
        except KeyError:
            raise LoanClosed(f"unknown loan {loan_id}") from None

    def open_loans(self) -> List[Loan]:
        return [l for l in self.loans.values() if l.status == "open"]

    def max_borrow_value(self, token_id: int, prices) -> Fraction:
        return self.config.ltv * self.registry.appraise(token_id, prices).to_fraction()

    def borrow(
        self,
        borrower: str,
        token_id: int,
        requested: Mapping[str, FixedAmount],
        prices: Mapping[str, FixedAmount],
        day: Optional[int] = None,
    ) -> Loan:
        nft = self.registry.get(token_id)
        if nft.owner != borrower:
            raise NotOwner(f"{borrower} does not own token {token_id}")
        requested = {a: FixedAmount.of(v) for a, v in requested.items() if FixedAmount.of(v).raw}
        if not requested:
            raise ValueError("nothing requested")
        wanted = value_of(requested, prices)
        limit = self.max_borrow_value(token_id, prices)
        if wanted > limit:
            raise ExceedsLtv(f"request worth {float(wanted):.6f} exceeds limit {float(limit):.6f}")
        for asset, amount in requested.items():
            if self.ledger.balance(self.account, asset) < amount:
                raise VaultIlliquid(f"vault cannot lend {amount} {asset}")
        self.registry.set_escrow(token_id, self.account, borrower)
        legs = []
        for asset in sorted(requested):
            self.ledger.transfer(self.account, borrower, asset, requested[asset])
            legs.append(LoanLeg(asset, requested[asset].raw, self.config.rate_for(asset)))
        loan = Loan(f"loan/{next(self._ids)}", borrower, token_id, legs, self.day if day is None else day)
        self.loans[loan.loan_id] = loan
        return loan

    def accrue(self, day: int) -> None:
        """Advance interest to ``day``; simple interest, recomputed from the start day."""
        if day < self.day:
            raise ValueError(f"cannot accrue backwards from day {self.day} to {day}")
        self.day = day
        for loan in self.open_loans():
            elapsed = day - loan.start_day
            for leg in loan.legs:
                num = leg.principal * leg.rate.numerator * elapsed
                leg.accrued = -(-num // leg.rate.denominator)

    def repay(self, borrower: str, loan_id: str) -> Dict[str, FixedAmount]:
        loan = self.loan(loan_id)
        if loan.status != "open":
            raise LoanClosed(f"{loan_id} is {loan.status}")
        if borrower != loan.borrower:
            raise NotOwner(f"{borrower} is not the borrower of {loan_id}")
        owed = loan.debt()
        for asset, amount in owed.items():
            self.ledger.require(borrower, asset, amount)
        for asset, amount in owed.items():
            self.ledger.transfer(borrower, self.account, asset, amount)
        self.registry.release_escrow(loan.collateral_token, self.account)
        loan.status = "repaid"
        return owed

    def forward_position_fees(self, pool, loan_id: str) -> Dict[str, FixedAmount]:
        """Claim fees of an escrowed LP position and pass them to the borrower.

        Claim rights sit with the vault while it holds the lien, but the fees
        belong to the token's owner.
        """
        loan = self.loan(loan_id)
        if loan.status != "open":
            raise LoanClosed(f"{loan_id} is {loan.status}")
        nft = self.registry.get(loan.collateral_token)
        fees = pool.accrue_and_claim_fees(nft.underlying_ref, self.account)
        for asset, amount in fees.items():
            self.ledger.transfer(self.account, nft.owner, asset, amount)
        return fees

    # -- default handling ----------------------------------------------------------

    def is_triggered(self, loan: Loan, prices) -> bool:
        appraisal = self.registry.appraise(loan.collateral_token, prices).to_fraction()
        debt = value_of({leg.asset: leg.debt for leg in loan.legs}, prices)
        return debt >= (1 - self.config.liquidation_buffer) * appraisal

    def monitor_and_liquidate(self, prices: Mapping[str, FixedAmount]) -> List[DefaultEvent]:
        events = []
        for loan in self.open_loans():
            if not self.is_triggered(loan, prices):
                continue
            ref = self.registry.get(loan.collateral_token).underlying_ref
            proceeds = self.registry.close_underlying(loan.collateral_token, self.account)
            events.append(self._recover(loan, proceeds, prices, "vault", ref))
        return events

    def handle_market_liquidations(self, liquidations: List[LiquidationEvent], prices) -> List[DefaultEvent]:
        """Book refunds the vault received for collateral the market liquidated first."""
        by_token = {l.collateral_token: l for l in self.open_loans()}
        events = []
        for ev in liquidations:
            loan = by_token.get(ev.token_id)
            if loan is None:
                continue
            events.append(self._recover(loan, {ev.asset: ev.refund}, prices, "market", ev.ref))
        return events

    def _recover(self, loan: Loan, proceeds: Dict[str, FixedAmount], prices, trigger: str,
                 ref: str = "") -> DefaultEvent:
        debt = value_of({leg.asset: leg.debt for leg in loan.legs}, prices)
        got = value_of(proceeds, prices)
        keep_frac = Fraction(1) if got <= debt else debt / got
        kept, returned = {}, {}
        for asset in sorted(proceeds):
            amount = proceeds[asset].raw
            keep = -(-amount * keep_frac.numerator // keep_frac.denominator)
            kept[asset] = FixedAmount(keep)
            returned[asset] = FixedAmount(amount - keep)
            if amount - keep:
                self.ledger.transfer(self.account, loan.borrower, asset, returned[asset])
        short = max(Fraction(0), debt - got)
        loan.shortfall = -(-short.numerator * SCALE // short.denominator)
        loan.recovered = {a: v.raw for a, v in kept.items()}
        loan.status = "defaulted"
        return DefaultEvent(
            loan.loan_id, loan.collateral_token, trigger, dict(proceeds), kept, returned,
            FixedAmount(loan.shortfall), ref,
        )

    # -- reporting ---------------------------------------------------------------------

    def total_shortfall(self) -> FixedAmount:
        return FixedAmount(sum(l.shortfall for l in self.loans.values()))

    def solvency_metric(self, prices) -> Fraction:
        """Vault holdings plus open debt minus recorded shortfalls, in the numeraire."""
        held = {a: self.ledger.balance(self.account, a) for a in self.ledger.assets()}
        held = {a: v for a, v in held.items() if v.raw}
        open_debt = sum(
            (value_of({leg.asset: leg.debt for leg in l.legs}, prices) for l in self.open_loans()),
            Fraction(0),
        )
        return value_of(held, prices) + open_debt - self.total_shortfall().to_fraction()

    def dump(self) -> list[dict]:
        return [self.loans[k].to_json() for k in sorted(self.loans, key=lambda k: int(k.split("/")[1]))]


def blended_rate(legs: Mapping[str, FixedAmount], rates: Mapping[str, Fraction], prices) -> Fraction:
    """Value-weighted average of per-asset rates; equal-value legs give the plain mean."""
    values = {a: value_of({a: amt}, prices) for a, amt in legs.items()}
    total = sum(values.values(), Fraction(0))
    if total == 0:
        raise ValueError("legs have zero value")
    return sum((values[a] * to_fraction(rates[a]) for a in legs), Fraction(0)) / total
