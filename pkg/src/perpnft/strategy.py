"""Scripted composability playbooks and the borrow-vs-hold decision rule."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from .amm import Pool, fee_tier
from .analysis import borrow_is_profitable
from .errors import HedgeInfeasible, SimulationError, ZeroLiquidity
from .events import execute
from .fixedpoint import SCALE, FixedAmount, format_raw, to_fraction
from .lending import LendingConfig, LendingVault, value_of
from .world import World

BORROW = "borrow"
HOLD = "hold"


@dataclass
class StrategyLogEntry:
    tick: int
    action: str
    inputs: dict
    result_ids: List[str] = field(default_factory=list)
    cash_deltas: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "tick": self.tick,
            "action": self.action,
            "inputs": self.inputs,
            "result_ids": self.result_ids,
            "cash_deltas": self.cash_deltas,
        }


def _balances(world: World, account: str) -> Dict[str, int]:
    return {a: world.ledger.balance(account, a).raw for a in world.ledger.assets()}


class Agent:
    """Runs module actions for one account and keeps the strategy log."""

    def __init__(self, world: World, account: str, strategy_id: str = ""):
        self.world = world
        self.account = account
        self.strategy_id = strategy_id
        self.log: List[StrategyLogEntry] = []

    def act(self, action: str, **inputs):
        before = _balances(self.world, self.account)
        result = execute(self.world, {"type": action, **inputs})
        after = _balances(self.world, self.account)
        deltas = {
            a: format_raw(after.get(a, 0) - before.get(a, 0))
            for a in sorted(set(before) | set(after))
            if after.get(a, 0) != before.get(a, 0)
        }
        ids = []
        for attr in ("ref", "loan_id"):
            if hasattr(result, attr):
                ids.append(getattr(result, attr))
        if hasattr(result, "token_id") and result.token_id is not None:
            ids.append(f"nft/{result.token_id}")
        entry = StrategyLogEntry(
            self.world.tick,
            action,
            {k: str(v) if isinstance(v, FixedAmount) else v for k, v in inputs.items()},
            ids,
            deltas,
        )
        self.log.append(entry)
        return result

    def cash(self, asset: str) -> FixedAmount:
        return self.world.ledger.balance(self.account, asset)


def decide_borrow_vs_hold(share_next, volume_next, liquidity_next, fee, daily_rate) -> str:
    """Borrow iff ``daily_rate <= volume_next / liquidity_next * fee`` (ties borrow).

    ``share_next`` cancels out of the comparison; it is accepted so callers can
    pass the full set of band-(i+1) inputs.
    """
    liq = to_fraction(liquidity_next)
    if liq <= 0:
        raise ZeroLiquidity("liquidity of the target band must be positive")
    return BORROW if borrow_is_profitable(daily_rate, volume_next, liq, fee) else HOLD


# -- leverage stack --------------------------------------------------------------


class LeverageStack:
    """Open a perp, borrow against its NFT, open the next perp with the loan, repeat."""

    kind = "leverage-stack"

    def __init__(self, world: World, agent: str, market: str, collateral, leverage, depth: int,
                 side: str = "long", strategy_id: str = "leverage-stack"):
        if depth < 1:
            raise ValueError("depth must be at least 1")
        if world.vault is None and depth > 1:
            raise ValueError("leverage stacking needs a lending vault")
        self.world = world
        self.agent = Agent(world, agent, strategy_id)
        self.market_id = market
        self.collateral = FixedAmount.of(collateral)
        self.leverage = to_fraction(leverage)
        self.depth = depth
        self.side = side
        self.contracts: List[str] = []
        self.tokens: List[int] = []
        self.loans: List[str] = []

    @property
    def log(self) -> List[StrategyLogEntry]:
        return self.agent.log

    def build(self) -> List[StrategyLogEntry]:
        market = self.world.markets[self.market_id]
        vault = self.world.vault
        start = len(self.log)
        amount = self.collateral
        for level in range(self.depth):
            c = self.agent.act(
                "open_contract", market=self.market_id, trader=self.agent.account,
                side=self.side, collateral=amount, leverage=str(self.leverage),
            )
            self.contracts.append(c.ref)
            self.tokens.append(c.token_id)
            if level == self.depth - 1:
                break
            limit = vault.max_borrow_value(c.token_id, self.world.price_map())
            quote_price = self.world.prices[market.quote].to_fraction()
            borrow = FixedAmount.of(limit / quote_price)
            if borrow.raw == 0:
                raise SimulationError("nothing left to borrow; reduce depth")
            loan = self.agent.act(
                "borrow", borrower=self.agent.account, token_id=c.token_id,
                requested={market.quote: str(borrow)},
            )
            self.loans.append(loan.loan_id)
            amount = borrow
        return self.log[start:]

    def deployed_collateral(self) -> FixedAmount:
        market = self.world.markets[self.market_id]
        return FixedAmount(sum(market.contract(r).collateral for r in self.contracts))

    def unwind(self) -> List[StrategyLogEntry]:
        """Settle the newest contract, repay the loan it was funded with, and walk down."""
        market = self.world.markets[self.market_id]
        vault = self.world.vault
        start = len(self.log)
        for level in range(len(self.contracts) - 1, -1, -1):
            ref = self.contracts[level]
            if market.is_live(ref) and self.world.registry.holder_of(ref) == self.agent.account:
                self.agent.act("settle", market=self.market_id, contract=ref, caller=self.agent.account)
            if level > 0:
                loan_id = self.loans[level - 1]
                if vault.loan(loan_id).status == "open":
                    self.agent.act("repay", borrower=self.agent.account, loan=loan_id)
        return self.log[start:]

    def is_unwound(self) -> bool:
        market = self.world.markets[self.market_id]
        vault = self.world.vault
        if any(market.is_live(r) for r in self.contracts):
            return False
        if vault is not None and any(vault.loan(l).status == "open" for l in self.loans):
            return False
        return not any(
            n.escrow is not None and n.owner == self.agent.account for n in self.world.registry.live_tokens()
        )


# -- liquidation hedge --------------------------------------------------------------


class LiquidationHedge:
    """Borrow against a threatened perp's NFT and open an offsetting position.

    Each tick afterwards the offsetting position is rolled (settled and reopened)
    and its realized gain is posted as extra margin on the original contract, so
    the original survives the next price on ``adverse_path`` without being
    resized.
    """

    kind = "liquidation-hedge"

    def __init__(self, world: World, agent: str, market: str, contract: str, adverse_path: Sequence,
                 hedge_ratio="1", hedge_leverage="10", strategy_id: str = "liquidation-hedge"):
        self.world = world
        self.agent = Agent(world, agent, strategy_id)
        self.market_id = market
        self.contract = contract
        self.path = [FixedAmount.of(p) for p in adverse_path]
        self.hedge_ratio = to_fraction(hedge_ratio)
        self.hedge_leverage = to_fraction(hedge_leverage)
        self.loan: Optional[str] = None
        self.hedge: Optional[str] = None
        self.step = 0

    @property
    def log(self) -> List[StrategyLogEntry]:
        return self.agent.log

    @property
    def _market(self):
        return self.world.markets[self.market_id]

    def _hedge_side(self) -> str:
        return "short" if self._market.contract(self.contract).side.value == "long" else "long"

    def _hedge_size(self) -> int:
        c = self._market.contract(self.contract)
        return c.size * self.hedge_ratio.numerator // self.hedge_ratio.denominator

    def execute(self) -> List[StrategyLogEntry]:
        """Check feasibility on a copy of the world, then hedge for real."""
        self._check_feasible()
        return self._execute()

    def _check_feasible(self) -> None:
        vault = self.world.vault
        if vault is None or vault.config.ltv == 0:
            raise HedgeInfeasible("no borrowing power against the contract NFT")
        shadow_world = copy.deepcopy(self.world)
        shadow = LiquidationHedge(
            shadow_world, self.agent.account, self.market_id, self.contract,
            self.path, self.hedge_ratio, self.hedge_leverage,
        )
        try:
            shadow._execute()
            for price in self.path:
                shadow_world.tick += 1
                shadow_world.mark_prices({self.market_id: price})
                if not shadow.is_protected():
                    raise HedgeInfeasible(f"hedged contract lost at price {price}")
                shadow.rebalance()
        except HedgeInfeasible:
            raise
        except SimulationError as exc:
            raise HedgeInfeasible(str(exc)) from exc

    def _execute(self) -> List[StrategyLogEntry]:
        market, vault = self._market, self.world.vault
        start = len(self.log)
        c = market.contract(self.contract)
        size = self._hedge_size()
        notional = size * market.mark_price // SCALE
        lev = self.hedge_leverage
        needed = FixedAmount(-(-notional * lev.denominator // lev.numerator))
        quote_price = self.world.prices[market.quote].to_fraction()
        limit = FixedAmount.of(vault.max_borrow_value(c.token_id, self.world.price_map()) / quote_price)
        if limit.raw == 0:
            raise HedgeInfeasible("no borrowing power against the contract NFT")
        if needed > limit:
            raise HedgeInfeasible(f"hedge needs {needed} {market.quote}, can borrow {limit}")
        loan = self.agent.act(
            "borrow", borrower=self.agent.account, token_id=c.token_id, requested={market.quote: str(needed)}
        )
        self.loan = loan.loan_id
        self._open_hedge(needed)
        return self.log[start:]

    def _open_hedge(self, collateral: FixedAmount) -> None:
        market = self._market
        size = self._hedge_size()
        notional = size * market.mark_price // SCALE
        # a short roll can leave less collateral than planned; shrink rather than breach margin
        ceiling = (1 / market.mmr) * Fraction(9, 10)
        leverage = min(max(Fraction(1), Fraction(notional, collateral.raw)), ceiling)
        h = self.agent.act(
            "open_contract", market=self.market_id, trader=self.agent.account,
            side=self._hedge_side(), collateral=collateral, leverage=str(leverage),
        )
        self.hedge = h.ref

    def is_protected(self) -> bool:
        vault = self.world.vault
        return self._market.is_live(self.contract) and vault.loan(self.loan).status == "open"

    def _required_topup(self, price: int) -> int:
        market, vault = self._market, self.world.vault
        equity = market.equity(self.contract, price)
        maint = market.maintenance(self.contract, price)
        loan = vault.loan(self.loan)
        # the next mark lands after one more day of interest
        days = vault.day + 1 - loan.start_day
        debt = value_of(
            {leg.asset: leg.principal + -(-leg.principal * leg.rate.numerator * days // leg.rate.denominator)
             for leg in loan.legs},
            self.world.prices,
        )
        quote_price = self.world.prices[market.quote].to_fraction()
        trigger = debt / ((1 - vault.config.liquidation_buffer) * quote_price)
        need_trigger = trigger.numerator * SCALE // trigger.denominator + 1
        return max(0, maint + 1 - equity, need_trigger - equity)

    def rebalance(self) -> List[StrategyLogEntry]:
        """Roll the offsetting position and move its gain onto the hedged contract."""
        start = len(self.log)
        if self.hedge is None or not self.is_protected():
            return []
        market = self._market
        # called after path[step] has been marked; prepare for the price after it
        self.step += 1
        nxt = self.path[self.step].raw if self.step < len(self.path) else market.mark_price
        topup = self._required_topup(nxt)
        if not market.is_live(self.hedge):
            return self.log[start:]
        payout = self.agent.act("settle", market=self.market_id, contract=self.hedge, caller=self.agent.account)
        self.hedge = None
        size = self._hedge_size()
        target = -(-size * market.mark_price * self.hedge_leverage.denominator
                   // (SCALE * self.hedge_leverage.numerator))
        spare = max(0, payout.raw - target)
        post = min(topup, spare) if topup else 0
        if post:
            self.agent.act("add_margin", market=self.market_id, contract=self.contract,
                           amount=FixedAmount(post), payer=self.agent.account)
        remaining = payout.raw - post
        if remaining > 0:
            self._open_hedge(FixedAmount(remaining))
        return self.log[start:]

    def unwind(self) -> List[StrategyLogEntry]:
        """Settle the hedge, repay the loan, then settle the original contract."""
        market = self._market
        start = len(self.log)
        if self.hedge is not None and market.is_live(self.hedge):
            self.agent.act("settle", market=self.market_id, contract=self.hedge, caller=self.agent.account)
            self.hedge = None
        if self.loan is not None and self.world.vault.loan(self.loan).status == "open":
            self.agent.act("repay", borrower=self.agent.account, loan=self.loan)
        if market.is_live(self.contract) and self.world.registry.holder_of(self.contract) == self.agent.account:
            self.agent.act("settle", market=self.market_id, contract=self.contract, caller=self.agent.account)
        return self.log[start:]


# -- LP borrow-and-extend ------------------------------------------------------------------


class LpBorrowExtend:
    """Borrow against a band-i position NFT and add liquidity to band i+1 instead of rebalancing."""

    kind = "lp-borrow-extend"

    def __init__(self, world: World, agent: str, pool: str, position: str, band_next: int,
                 expected_volume_next, inclusive: bool = True, strategy_id: str = "lp-borrow-extend"):
        self.world = world
        self.agent = Agent(world, agent, strategy_id)
        self.pool_id = pool
        self.position = position
        self.band_next = band_next
        self.expected_volume_next = to_fraction(expected_volume_next)
        self.inclusive = inclusive
        self.loan: Optional[str] = None
        self.new_position: Optional[str] = None
        self.decision: Optional[dict] = None

    @property
    def log(self) -> List[StrategyLogEntry]:
        return self.agent.log

    @property
    def _pool(self) -> Pool:
        return self.world.pools[self.pool_id]

    def _band_value(self, band_index: int) -> Fraction:
        pool = self._pool
        band = pool.band(band_index)
        return value_of({pool.asset_x: band.reserve_x, pool.asset_y: band.reserve_y}, self.world.prices)

    def _daily_rate(self, legs: Dict[str, int]) -> Fraction:
        vault = self.world.vault
        total = value_of(legs, self.world.prices)
        return sum(
            (value_of({a: v}, self.world.prices) * vault.config.rate_for(a) for a, v in legs.items()),
            Fraction(0),
        ) / total

    def _equal_value_legs(self, budget: Fraction) -> Dict[str, int]:
        pool = self._pool
        legs = {}
        for asset in (pool.asset_x, pool.asset_y):
            price = self.world.prices[asset].to_fraction()
            units = budget / 2 / price
            legs[asset] = units.numerator * SCALE // units.denominator
        return legs

    def decide(self) -> dict:
        pool, vault = self._pool, self.world.vault
        token = self.world.registry.token_for(self.position).token_id
        budget = vault.max_borrow_value(token, self.world.price_map())
        legs = self._equal_value_legs(budget)
        borrowed_value = value_of(legs, self.world.prices)
        existing = self._band_value(self.band_next)
        liquidity_next = existing + borrowed_value if self.inclusive else existing
        rate = self._daily_rate(legs) if borrowed_value else Fraction(0)
        share_next = borrowed_value / liquidity_next if liquidity_next else Fraction(0)
        verdict = decide_borrow_vs_hold(share_next, self.expected_volume_next, liquidity_next, pool.fee_rate, rate)
        self.decision = {
            "decision": verdict,
            "daily_rate": str(rate),
            "fee_tier": str(pool.fee_rate),
            "expected_volume_next": str(self.expected_volume_next),
            "liquidity_next": str(liquidity_next),
            "threshold": str(rate / pool.fee_rate),
            "volume_over_liquidity": str(self.expected_volume_next / liquidity_next),
            "borrow_budget": str(budget),
            "mode": "inclusive" if self.inclusive else "exclusive",
        }
        return self.decision

    def execute(self) -> List[StrategyLogEntry]:
        start = len(self.log)
        decision = self.decide()
        if decision["decision"] != BORROW:
            return []
        pool = self._pool
        token = self.world.registry.token_for(self.position).token_id
        legs = self._equal_value_legs(Fraction(decision["borrow_budget"]))
        loan = self.agent.act(
            "borrow", borrower=self.agent.account, token_id=token,
            requested={a: format_raw(v) for a, v in legs.items()},
        )
        self.loan = loan.loan_id
        band = pool.band(self.band_next)
        # zero-slippage estimate: deposit at the band ratio with no conversion
        if band.total_liquidity:
            ratio = band.ratio
        else:
            ratio = max(band.ratio_lo, min(Fraction(legs[pool.asset_y], legs[pool.asset_x]), band.ratio_hi))
        # the surplus leg converts at the band ratio with no price impact
        ideal_x = (legs[pool.asset_x] + legs[pool.asset_y] / ratio) / 2
        ideal_y = ideal_x * ratio
        decision["zero_slippage_liquidity"] = format_raw(math.isqrt(int(ideal_x) * int(ideal_y)))
        self._convert_to_ratio(ratio)
        # the conversion swap moves the band; deposit at wherever it landed
        if band.total_liquidity:
            ratio = band.ratio
        have_x = self.agent.cash(pool.asset_x).raw
        have_y = self.agent.cash(pool.asset_y).raw
        dx = min(have_x, legs[pool.asset_x] * 2, int(Fraction(have_y) / ratio))
        dy = int(dx * ratio)
        pos = self.agent.act(
            "provide_liquidity", pool=self.pool_id, provider=self.agent.account, band=self.band_next,
            amount_x=format_raw(dx), amount_y=format_raw(dy),
        )
        self.new_position = pos.ref
        decision["actual_liquidity"] = format_raw(pool.band(self.band_next).liquidity[pos.ref])
        return self.log[start:]

    def _convert_to_ratio(self, ratio: Fraction) -> None:
        """Swap the surplus leg so holdings match ``ratio`` (y per x)."""
        pool = self._pool
        x = self.agent.cash(pool.asset_x).raw
        y = self.agent.cash(pool.asset_y).raw
        if x == 0 or y == 0:
            return
        if Fraction(y, x) > ratio * (1 + Fraction(1, 2000)):
            asset_in, surplus = pool.asset_y, y
            def after(s):
                return Fraction(y - s, x + pool.quote(asset_in, FixedAmount(s)).raw)
            good = lambda s: after(s) <= ratio  # noqa: E731
        elif Fraction(y, x) < ratio * (1 - Fraction(1, 2000)):
            asset_in, surplus = pool.asset_x, x
            def after(s):
                return Fraction(y + pool.quote(asset_in, FixedAmount(s)).raw, x - s)
            good = lambda s: after(s) >= ratio  # noqa: E731
        else:
            return
        lo, hi = 0, surplus - 1
        try:
            while lo < hi:
                mid = (lo + hi) // 2
                if good(mid):
                    hi = mid
                else:
                    lo = mid + 1
        except SimulationError:
            return
        if lo > 0:
            self.agent.act("swap", pool=self.pool_id, trader=self.agent.account,
                           asset_in=asset_in, amount=format_raw(lo))

    def unwind(self) -> List[StrategyLogEntry]:
        """Withdraw the band-(i+1) position, cover any short leg by swapping, repay."""
        pool, vault = self._pool, self.world.vault
        start = len(self.log)
        if self.new_position is not None and pool.is_live(self.new_position):
            self.agent.act("remove_liquidity", pool=self.pool_id, position=self.new_position,
                           fraction="1", caller=self.agent.account)
        if self.loan is None or vault.loan(self.loan).status != "open":
            return self.log[start:]
        owed = vault.loan(self.loan).debt()
        for asset, amount in owed.items():
            short = amount.raw - self.agent.cash(asset).raw
            if short <= 0:
                continue
            other = pool.asset_y if asset == pool.asset_x else pool.asset_x
            spare = self.agent.cash(other).raw - owed.get(other, FixedAmount()).raw
            lo, hi = 1, spare
            if hi < 1 or pool.quote(other, FixedAmount(hi)).raw < short:
                raise SimulationError(f"cannot raise {format_raw(short)} {asset} to repay {self.loan}")
            while lo < hi:
                mid = (lo + hi) // 2
                if pool.quote(other, FixedAmount(mid)).raw >= short:
                    hi = mid
                else:
                    lo = mid + 1
            self.agent.act("swap", pool=self.pool_id, trader=self.agent.account, asset_in=other,
                           amount=format_raw(lo))
        self.agent.act("repay", borrower=self.agent.account, loan=self.loan)
        return self.log[start:]


# -- borrow-vs-hold harness ---------------------------------------------------------------


@dataclass(frozen=True)
class HarnessResult:
    hold_profit: int  # raw numeraire units, left side of the inequality
    borrow_profit: int  # raw numeraire units, right side
    borrowed_value: int
    liquidity_next: int

    @property
    def margin(self) -> int:
        return self.borrow_profit - self.hold_profit

    @property
    def decision(self) -> str:
        # |lhs - rhs| <= 1 raw counts as a tie, and ties borrow
        return BORROW if self.margin >= -1 else HOLD


def simulate_borrow_vs_hold(
    position_value,
    volume_i,
    volume_next,
    other_liquidity_next,
    fee,
    daily_rate,
    ltv="0.8",
) -> HarnessResult:
    """Run one day of both branches through the real modules.

    The pool trades X/Y at unit prices. The provider holds a band-i position;
    in the borrow branch it borrows equal X and Y legs against the position NFT
    and deposits them into band i+1 at ratio 1 (no swap, so no slippage). All
    amounts are numeraire values given as decimal strings or Fractions.
    """
    fee = fee_tier(fee)
    branches = []
    for borrow in (False, True):
        w = World("USD")
        w.prices.update({"X": FixedAmount.of(1), "Y": FixedAmount.of(1)})
        pool = Pool(w.ledger, w.registry, "H", "X", "Y", fee, [(Fraction(1, 2), 1), (1, 2)])
        w.pools["H"] = pool
        w.vault = LendingVault(w.ledger, w.registry, LendingConfig(ltv, {"X": daily_rate, "Y": daily_rate}))
        w.vault.accrue(0)
        big = FixedAmount.of(10**12)
        for account in ("j", "other", "flow"):
            for asset in ("X", "Y"):
                w.ledger.mint(account, asset, big)
        for asset in ("X", "Y"):
            w.ledger.mint("vault", asset, big)
        # band i at ratio 3/4: value v splits 4/7 X, 3/7 Y
        v = FixedAmount.of(position_value).raw
        px = v * 4 // 7
        pos_i = pool.provide_liquidity("j", 0, FixedAmount(px), FixedAmount(px * 3 // 4))
        other = FixedAmount.of(other_liquidity_next).raw // 2
        if other:
            pool.provide_liquidity("other", 1, FixedAmount(other), FixedAmount(other))
        borrowed = 0
        pos_next = None
        loan = None
        if borrow:
            budget = w.vault.max_borrow_value(pos_i.token_id, w.price_map())
            leg = (budget.numerator * SCALE // budget.denominator) // 2
            if leg:
                loan = w.vault.borrow("j", pos_i.token_id, {"X": FixedAmount(leg), "Y": FixedAmount(leg)},
                                      w.price_map())
                pos_next = pool.provide_liquidity("j", 1, FixedAmount(leg), FixedAmount(leg))
                borrowed = 2 * leg
        a_i = FixedAmount.of(volume_i)
        if a_i.raw:
            pool.inject_volume(0, "X", a_i, "flow")
        a_next = FixedAmount.of(volume_next)
        if a_next.raw and pool.band(1).total_liquidity:
            pool.inject_volume(1, "X", a_next, "flow")
        w.vault.accrue(1)
        if loan is not None:
            income = sum(v.raw for v in w.vault.forward_position_fees(pool, loan.loan_id).values())
        else:
            income = sum(v.raw for v in pool.accrue_and_claim_fees(pos_i.ref, "j").values())
        interest = 0
        if pos_next is not None:
            income += sum(v.raw for v in pool.accrue_and_claim_fees(pos_next.ref, "j").values())
            interest = sum(leg.accrued for leg in loan.legs)
            pool.remove_liquidity(pos_next.ref, 1, "j")
            w.vault.repay("j", loan.loan_id)
        branches.append((income - interest, borrowed))
    (hold, _), (borrow_profit, borrowed) = branches
    liquidity_next = 2 * (FixedAmount.of(other_liquidity_next).raw // 2) + borrowed
    return HarnessResult(hold, borrow_profit, borrowed, liquidity_next)
