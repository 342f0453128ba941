"""Simulator for perpetual-contract and liquidity-position NFTs used as loan collateral."""

from .amm import Pool, fee_tier
from .analysis import (
    BreakEvenReport,
    average_rates,
    break_even,
    expected_fee_reward,
    load_rate_csv,
    profitability_check,
)
from .fixedpoint import SCALE, FixedAmount, Ledger, Rounding, mul_div
from .lending import LendingConfig, LendingVault
from .nft import CollateralNft, NftKind, NftRegistry
from .perp import PerpMarket, Side
from .simulation import Simulation, run_scenario
from .strategy import (
    LeverageStack,
    LiquidationHedge,
    LpBorrowExtend,
    decide_borrow_vs_hold,
    simulate_borrow_vs_hold,
)
from .world import World

__version__ = "0.1.0"

__all__ = [
    "SCALE",
    "BreakEvenReport",
    "CollateralNft",
    "FixedAmount",
    "Ledger",
    "LendingConfig",
    "LendingVault",
    "LeverageStack",
    "LiquidationHedge",
    "LpBorrowExtend",
    "NftKind",
    "NftRegistry",
    "PerpMarket",
    "Pool",
    "Rounding",
    "Side",
    "Simulation",
    "World",
    "average_rates",
    "break_even",
    "decide_borrow_vs_hold",
    "expected_fee_reward",
    "fee_tier",
    "load_rate_csv",
    "mul_div",
    "profitability_check",
    "run_scenario",
    "simulate_borrow_vs_hold",
]
