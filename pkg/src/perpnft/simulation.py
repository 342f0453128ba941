"""Tick-by-tick scenario execution and the run report."""

from __future__ import annotations

import json
import random
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

from .amm import Pool, fee_tier
from .analysis import average_rates, break_even, expected_fee_reward, load_rate_csv
from .errors import SimulationError
from .events import execute
from .fixedpoint import FixedAmount, fmt_fraction, format_raw, to_fraction
from .lending import DAYS_PER_YEAR, LendingConfig, LendingVault
from .perp import PerpMarket
from .strategy import Agent, LeverageStack, LiquidationHedge, LpBorrowExtend
from .world import World

# intra-tick order; the report tags every recorded event with its phase
PHASES = ("price", "strategy", "exogenous", "accrual")
EXOGENOUS = {
    "swap", "random_swaps", "volume", "provide_liquidity", "remove_liquidity", "claim_fees",
    "open_contract", "settle", "borrow", "repay", "transfer_nft", "transfer",
}


class RunAborted(SimulationError):
    """A runtime error inside the tick loop, tagged with where it happened."""

    def __init__(self, tick: int, phase: str, event: Any, cause: Exception):
        self.tick, self.phase, self.event, self.cause = tick, phase, event, cause
        super().__init__(
            f"tick {tick}, {phase} phase, event {json.dumps(event, sort_keys=True)}: "
            f"{type(cause).__name__}: {cause}"
        )


def data_path(name: str) -> Path:
    return Path(str(resources.files("perpnft") / "data" / name))


def _resolve(path: str, base: Optional[Path]) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    if base is not None and (base / p).exists():
        return base / p
    return data_path(path)


def _pct(value: str) -> Fraction:
    return to_fraction(value) / 100


# -- setup ----------------------------------------------------------------------


def _lending_config(spec: dict, base: Optional[Path]) -> LendingConfig:
    if "daily_rate" in spec:
        rate: Any = to_fraction(spec["daily_rate"])
    elif "annual_rate_percent" in spec:
        rate = _pct(spec["annual_rate_percent"]) / DAYS_PER_YEAR
    elif "per_asset_annual_rate_percent" in spec:
        rate = {a: _pct(v) / DAYS_PER_YEAR for a, v in spec["per_asset_annual_rate_percent"].items()}
    else:
        src = spec["rate_csv"]
        per_asset, _ = average_rates(load_rate_csv(_resolve(src["path"], base)), src["assets"])
        rate = {a: r / DAYS_PER_YEAR for a, r in per_asset.items()}
    return LendingConfig(spec["ltv"], rate, spec["liquidation_buffer"])


def build_world(scn: dict, base: Optional[Path] = None) -> World:
    """Structure, prices and initial balances; no journaled events."""
    w = World(scn.get("numeraire", "USD"))
    for asset, price in sorted(scn.get("prices", {}).items()):
        w.set_price(asset, FixedAmount.of(price))
    for account in sorted(scn["balances"]):
        for asset, amount in sorted(scn["balances"][account].items()):
            w.ledger.mint(account, asset, FixedAmount.of(amount))
    for p in scn.get("pools", []):
        extra = p.get("extra_fee_tiers", [])
        bands = [(to_fraction(b["ratio_lo"]), to_fraction(b["ratio_hi"])) for b in p["bands"]]
        w.pools[p["id"]] = Pool(
            w.ledger, w.registry, p["id"], p["asset_x"], p["asset_y"],
            fee_tier(p["fee_tier"], extra), bands, extra_fee_tiers=extra,
        )
    for m in scn.get("perp_markets", []):
        market = PerpMarket(
            w.ledger, w.registry, m["id"], m["underlying"], m["quote"], FixedAmount.of(m["mark_price"]),
            m["maintenance_margin_ratio"], m.get("clearinghouse"), m.get("liquidation_penalty", "0"),
        )
        w.markets[m["id"]] = market
        w.prices[m["underlying"]] = FixedAmount(market.mark_price)
    if "lending" in scn:
        cfg = scn["lending"]
        w.vault = LendingVault(w.ledger, w.registry, _lending_config(cfg, base), cfg.get("vault", "vault"))
    return w


# -- strategies --------------------------------------------------------------------


class _Scheduled:
    """Adapter that fires a strategy's steps on its scheduled ticks."""

    def __init__(self, world: World, spec: dict):
        self.world = world
        self.spec = spec
        self.id = spec["id"]
        self.params = spec["params"]
        self.schedule = spec["schedule"]
        self.agent = Agent(world, spec["agent"], self.id)
        self.summary: Dict[str, Any] = {}

    @property
    def log(self):
        return self.agent.log

    def last_tick(self) -> int:
        return max(self.schedule.values())

    def on_tick(self, tick: int) -> None:
        raise NotImplementedError


class _StackRunner(_Scheduled):
    def __init__(self, world, spec):
        super().__init__(world, spec)
        p = self.params
        self.strategy = LeverageStack(
            world, spec["agent"], p["market"], p["collateral"], p["leverage"], p["depth"],
            p.get("side", "long"), self.id,
        )
        self.strategy.agent = self.agent

    def on_tick(self, tick):
        s = self.strategy
        if tick == self.schedule["open"]:
            s.build()
            self.summary["deployed_collateral"] = str(s.deployed_collateral())
            self.summary["contracts"] = list(s.contracts)
            self.summary["loans"] = list(s.loans)
        if tick == self.schedule.get("unwind"):
            s.unwind()
            self.summary["unwound"] = s.is_unwound()


class _HedgeRunner(_Scheduled):
    def __init__(self, world, spec):
        super().__init__(world, spec)
        self.hedged = self.params.get("hedged", True)
        self.strategy: Optional[LiquidationHedge] = None
        self.contract: Optional[str] = None

    def on_tick(self, tick):
        p = self.params
        market = self.world.markets[p["market"]]
        if tick == self.schedule["open"]:
            c = self.agent.act(
                "open_contract", market=p["market"], trader=self.agent.account,
                side=p.get("side", "long"), collateral=p["collateral"], leverage=p["leverage"],
            )
            self.contract = c.ref
            self.summary["contract"] = c.ref
        if self.contract is None:
            return
        hedge_tick = self.schedule.get("hedge", self.schedule["open"])
        s = self.strategy
        if self.hedged and tick == hedge_tick and market.is_live(self.contract):
            s = self.strategy = LiquidationHedge(
                self.world, self.agent.account, p["market"], self.contract, p["adverse_path"],
                p.get("hedge_ratio", "1"), p.get("hedge_leverage", "10"), self.id,
            )
            s.agent = self.agent
            s.execute()
            self.summary["loan"] = s.loan
        elif s is not None and tick > hedge_tick and tick != self.schedule.get("unwind"):
            s.rebalance()
        if tick == self.schedule.get("unwind"):
            if s is not None:
                s.unwind()
            elif market.is_live(self.contract):
                self.agent.act("settle", market=p["market"], contract=self.contract, caller=self.agent.account)

    def finish(self):
        market = self.world.markets[self.params["market"]]
        c = market.contract(self.contract) if self.contract else None
        self.summary["hedged"] = self.hedged
        self.summary["status"] = c.status if c else "never-opened"
        self.summary["liquidated"] = c is not None and c.status == "liquidated"
        self.summary["final_cash"] = str(self.agent.cash(market.quote))
        loan = self.world.vault.loan(self.strategy.loan) if self.strategy and self.strategy.loan else None
        self.summary["loan_status"] = loan.status if loan else "none"
        self.summary["survived"] = c is not None and c.status == "settled" and (loan is None or loan.status == "repaid")


class _LpRunner(_Scheduled):
    def __init__(self, world, spec):
        super().__init__(world, spec)
        self.position: Optional[str] = None
        self.strategy: Optional[LpBorrowExtend] = None

    def on_tick(self, tick):
        p = self.params
        if tick == self.schedule["open"]:
            pos = self.agent.act(
                "provide_liquidity", pool=p["pool"], provider=self.agent.account, band=p["band"],
                amount_x=p["amount_x"], amount_y=p["amount_y"],
            )
            self.position = pos.ref
            self.summary["position"] = pos.ref
        if tick == self.schedule["decide"] and self.position is not None:
            s = self.strategy = LpBorrowExtend(
                self.world, self.agent.account, p["pool"], self.position, p["band_next"],
                p["expected_volume_next"], p.get("mode", "inclusive") == "inclusive", self.id,
            )
            s.agent = self.agent
            s.execute()
            self.summary["decision"] = s.decision
            self.summary["new_position"] = s.new_position
            self.summary["loan"] = s.loan
        if tick == self.schedule.get("unwind") and self.strategy is not None:
            s = self.strategy
            pool = self.world.pools[p["pool"]]
            if s.loan is not None and self.world.vault.loan(s.loan).status == "open":
                self.agent.act("forward_fees", pool=p["pool"], loan=s.loan)
            if s.new_position is not None and pool.is_live(s.new_position):
                fees = pool.unclaimed_fees(s.new_position)
                self.summary["fees_next_band"] = {a: str(v) for a, v in sorted(fees.items())}
            if s.loan is not None:
                loan = self.world.vault.loan(s.loan)
                self.summary["interest"] = {leg.asset: format_raw(leg.accrued) for leg in loan.legs}
            s.unwind()
            if pool.is_live(self.position):
                self.agent.act("claim_fees", pool=p["pool"], position=self.position, caller=self.agent.account)


RUNNERS = {"leverage-stack": _StackRunner, "liquidation-hedge": _HedgeRunner, "lp-borrow-extend": _LpRunner}


# -- run -----------------------------------------------------------------------------


class Simulation:
    def __init__(self, scn: dict, seed: Optional[int] = None, base: Optional[Path] = None):
        self.scn = scn
        self.base = base
        self.seed = scn.get("seed", 0) if seed is None else seed
        self.rng = random.Random(self.seed)
        self.world = build_world(scn, base)
        self.initial = self.world.ledger.snapshot()
        self.initial_supply = {a: self.world.ledger.supply(a) for a in self.world.ledger.assets()}
        self.strategies = [RUNNERS[s["kind"]](self.world, s) for s in scn.get("strategies", [])]
        self.timeline: List[dict] = []
        self.windows: List[dict] = []
        self._seq = 0

    # each recorded item carries a global sequence number so intra-tick order is explicit
    def _record(self, tick: int, phase: str, kind: str, **data) -> None:
        self._seq += 1
        self.timeline.append({"seq": self._seq, "tick": tick, "phase": phase, "kind": kind, **data})

    def _last_tick(self) -> int:
        ticks = [ev["tick"] for ev in self.scn.get("timeline", [])]
        ticks += [s.last_tick() for s in self.strategies]
        ticks += [int(t) for m in self.scn.get("perp_markets", []) for t in m.get("price_series", {})]
        return max([self.scn.get("days", 0), *ticks], default=0)

    def _guard(self, tick: int, phase: str, event: Any, fn, *args):
        try:
            return fn(*args)
        except RunAborted:
            raise
        except (SimulationError, ValueError, KeyError, ArithmeticError) as exc:
            raise RunAborted(tick, phase, event, exc) from exc

    def _seed_liquidity(self) -> None:
        for p in self.scn.get("pools", []):
            for s in p.get("seed_liquidity", []):
                ev = {"type": "provide_liquidity", "pool": p["id"], **s}
                self._guard(0, "setup", ev, execute, self.world, ev)

    def _price_phase(self, tick: int, events: List[dict]) -> None:
        marks = {ev["market"]: ev["price"] for ev in events if ev["type"] == "mark"}
        prices = {ev["asset"]: ev["price"] for ev in events if ev["type"] == "price"}
        ev = {"type": "mark", "marks": marks, "prices": prices}
        defaults, liquidations = self._guard(tick, "price", ev, execute, self.world, ev)
        # record in causal order: vault defaults, market liquidations, then the defaults they caused
        for d in (d for d in defaults if d.trigger == "vault"):
            self._record_default(tick, d)
        for l in liquidations:
            self._record(
                tick, "price", "perp-liquidation", contract=l.ref, token_id=l.token_id,
                recipient=l.recipient, refund=str(l.refund), price=str(l.price),
            )
        for d in (d for d in defaults if d.trigger != "vault"):
            self._record_default(tick, d)

    def _record_default(self, tick: int, d) -> None:
        self._record(
            tick, "price", "loan-default", loan=d.loan_id, token_id=d.token_id, underlying=d.underlying_ref,
            trigger=d.trigger,
            proceeds={a: str(v) for a, v in sorted(d.proceeds.items())},
            recovered={a: str(v) for a, v in sorted(d.kept.items())},
            returned={a: str(v) for a, v in sorted(d.returned.items())},
            shortfall=str(d.shortfall),
        )

    def _exogenous(self, tick: int, ev: dict) -> None:
        ev = {k: v for k, v in ev.items() if k != "tick"}
        if ev["type"] != "random_swaps":
            self._guard(tick, "exogenous", ev, execute, self.world, ev)
            return
        pool = self.world.pools[ev["pool"]]
        top = FixedAmount.of(ev["max_amount"]).raw
        for _ in range(ev["count"]):
            asset = self.rng.choice((pool.asset_x, pool.asset_y))
            swap = {"type": "swap", "pool": ev["pool"], "trader": ev["trader"],
                    "asset_in": asset, "amount": format_raw(self.rng.randint(1, top))}
            self._guard(tick, "exogenous", swap, execute, self.world, swap)

    def run(self) -> dict:
        w = self.world
        w.tick = 0
        self._seed_liquidity()
        by_tick: Dict[int, List[dict]] = {}
        for ev in self.scn.get("timeline", []):
            by_tick.setdefault(ev["tick"], []).append(ev)
        for m in self.scn.get("perp_markets", []):
            for t, price in m.get("price_series", {}).items():
                by_tick.setdefault(int(t), []).append({"type": "mark", "tick": int(t), "market": m["id"], "price": price})
        for tick in range(self._last_tick() + 1):
            w.tick = tick
            events = by_tick.get(tick, [])
            self._price_phase(tick, [e for e in events if e["type"] in ("mark", "price")])
            for s in self.strategies:
                before = len(s.log)
                self._guard(tick, "strategy", {"strategy": s.id}, s.on_tick, tick)
                for entry in s.log[before:]:
                    self._record(tick, "strategy", "strategy-action", strategy=s.id, action=entry.action,
                                 result_ids=entry.result_ids)
            for ev in events:
                if ev["type"] in EXOGENOUS:
                    self._exogenous(tick, ev)
            self._guard(tick, "accrual", {"type": "accrue"}, execute, w, {"type": "accrue"})
            closed = self._guard(tick, "accrual", {"type": "roll_window"}, execute, w, {"type": "roll_window"})
            for pid in sorted(closed):
                for band, vol in sorted(closed[pid].items()):
                    if any(v.raw for v in vol.values()):
                        self.windows.append({"tick": tick, "pool": pid, "band": band,
                                             "volume": {a: str(v) for a, v in sorted(vol.items())}})
        for s in self.strategies:
            if hasattr(s, "finish"):
                s.finish()
        return self.report()

    # -- report ------------------------------------------------------------------

    def conservation(self) -> dict:
        w = self.world
        expected = dict(self.scn.get("expected_supply", {}))
        ledger = w.ledger.audit(expected)
        for asset, entry in ledger.items():
            initial = self.initial_supply.get(asset, FixedAmount())
            entry["initial_supply"] = str(initial)
            entry["ok"] = entry["ok"] and FixedAmount.of(entry["supply"]) == initial
        fees = {pid: w.pools[pid].fee_audit() for pid in sorted(w.pools)}
        fees_ok = all(e["ok"] for audit in fees.values() for e in audit.values())
        bijection = w.registry.check_bijection()
        return {
            "ledger": ledger,
            "fees": fees,
            "nft_bijection": bijection,
            "ok": all(e["ok"] for e in ledger.values()) and fees_ok and bijection,
        }

    def profitability(self) -> dict:
        out: Dict[str, Any] = {}
        analysis = self.scn.get("analysis", {})
        if "break_even" in analysis:
            be = analysis["break_even"]
            entry: Dict[str, Any] = {}
            if "apr_csv" in be:
                series = load_rate_csv(_resolve(be["apr_csv"], self.base))
                assets = be.get("assets") or series.assets()
                per_asset, blended = average_rates(series, assets)
                entry["per_asset_annual_rate_percent"] = {a: fmt_fraction(r * 100) for a, r in sorted(per_asset.items())}
                annual = blended
            else:
                annual = _pct(be.get("annual_rate_percent", "0"))
            entry.update(break_even(annual, to_fraction(be["fee_tier"])).to_json())
            out["break_even"] = entry
        rewards = []
        for item in analysis.get("fee_rewards", []):
            pool = self.world.pools[item["pool"]]
            band = pool.band(item["band"])
            total = band.total_liquidity
            for ref in sorted(band.liquidity):
                liq = band.liquidity[ref]
                if not liq or not total:
                    continue
                rewards.append({
                    "pool": pool.pool_id, "band": item["band"], "position": ref,
                    "liquidity": format_raw(liq), "total_liquidity": format_raw(total),
                    "expected_reward": {
                        a: str(expected_fee_reward(FixedAmount(liq), FixedAmount(total), FixedAmount(v), pool.fee_rate))
                        for a, v in sorted(band.volume_total.items())
                    },
                })
        if rewards:
            out["fee_rewards"] = rewards
        decisions = [
            {"strategy": s.id, **s.summary["decision"]}
            for s in self.strategies if "decision" in s.summary and s.summary["decision"]
        ]
        if decisions:
            out["borrow_vs_hold"] = decisions
        return out

    def report(self) -> dict:
        w = self.world
        return {
            "scenario": self.scn["name"],
            "seed": self.seed,
            "ticks": w.tick,
            "initial_ledger": self.initial,
            "final_ledger": w.ledger.snapshot(),
            "prices": {a: str(p) for a, p in sorted(w.prices.items())},
            "pools": {pid: w.pools[pid].dump() for pid in sorted(w.pools)},
            "perp_markets": {mid: w.markets[mid].dump() for mid in sorted(w.markets)},
            "nfts": w.registry.dump(),
            "loans": w.vault.dump() if w.vault is not None else [],
            "vault_shortfall": str(w.vault.total_shortfall()) if w.vault is not None else "0",
            "strategies": {s.id: {"kind": s.spec["kind"], "agent": s.agent.account, **s.summary}
                           for s in self.strategies},
            "strategy_logs": {s.id: [e.to_json() for e in s.log] for s in self.strategies},
            "timeline": self.timeline,
            "volume_windows": self.windows,
            "profitability": self.profitability(),
            "conservation": self.conservation(),
            "journal": w.journal,
        }


def run_scenario(scn: dict, seed: Optional[int] = None, base: Optional[Path] = None) -> dict:
    return Simulation(scn, seed, base).run()


def replay_journal(scn: dict, journal: List[dict], base: Optional[Path] = None) -> World:
    """Rebuild a world from the scenario's static setup and re-execute ``journal``."""
    from .events import replay

    return replay(build_world(scn, base), journal)


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def strategy_log_lines(report: dict) -> str:
    """Strategy logs as JSON lines, one entry per line, ordered by strategy id then position."""
    lines = []
    for sid in sorted(report["strategy_logs"]):
        for entry in report["strategy_logs"][sid]:
            lines.append(json.dumps({"strategy": sid, **entry}, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")
