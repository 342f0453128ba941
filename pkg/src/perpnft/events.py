"""Replayable state-changing events.

Every mutation a simulation performs after setup goes through :func:`execute`
as a plain JSON-able dict, and is appended to ``world.journal``. Feeding the
journal to :func:`replay` on an identically set-up world reproduces the final
state exactly.
"""

from __future__ import annotations

from typing import Any, Callable, Dict, Iterable

from .fixedpoint import FixedAmount, format_raw
from .world import World


def _amt(value) -> FixedAmount:
    return FixedAmount.of(value)


def _mark(w: World, ev: dict):
    marks = {m: _amt(p) for m, p in ev.get("marks", {}).items()}
    prices = {a: _amt(p) for a, p in ev.get("prices", {}).items()}
    return w.mark_prices(marks, prices)


def _accrue(w: World, ev: dict):
    # end-of-day accrual: interest runs through the start of the next day
    w.accrue(w.tick + 1)


def _roll(w: World, ev: dict):
    return {pid: w.pools[pid].roll_window() for pid in sorted(w.pools)}


def _swap(w: World, ev: dict):
    return w.pools[ev["pool"]].swap(ev["trader"], ev["asset_in"], _amt(ev["amount"]))


def _volume(w: World, ev: dict):
    return w.pools[ev["pool"]].inject_volume(ev["band"], ev["asset"], _amt(ev["amount"]), ev["payer"])


def _provide(w: World, ev: dict):
    return w.pools[ev["pool"]].provide_liquidity(
        ev["provider"], ev["band"], _amt(ev["amount_x"]), _amt(ev["amount_y"])
    )


def _remove(w: World, ev: dict):
    pool = w.pools[ev["pool"]]
    return pool.remove_liquidity(ev["position"], ev.get("fraction", "1"), ev["caller"])


def _claim(w: World, ev: dict):
    return w.pools[ev["pool"]].accrue_and_claim_fees(ev["position"], ev["caller"])


def _open(w: World, ev: dict):
    return w.markets[ev["market"]].open_contract(
        ev["trader"], ev["side"], _amt(ev["collateral"]), ev["leverage"]
    )


def _settle(w: World, ev: dict):
    return w.markets[ev["market"]].settle(ev["contract"], ev["caller"])


def _add_margin(w: World, ev: dict):
    return w.markets[ev["market"]].add_margin(ev["contract"], _amt(ev["amount"]), ev["payer"])


def _remove_margin(w: World, ev: dict):
    return w.markets[ev["market"]].remove_margin(ev["contract"], _amt(ev["amount"]), ev["caller"])


def _borrow(w: World, ev: dict):
    requested = {a: _amt(v) for a, v in ev["requested"].items()}
    return w.vault.borrow(ev["borrower"], ev["token_id"], requested, w.price_map())


def _repay(w: World, ev: dict):
    return w.vault.repay(ev["borrower"], ev["loan"])


def _forward_fees(w: World, ev: dict):
    return w.vault.forward_position_fees(w.pools[ev["pool"]], ev["loan"])


def _transfer_nft(w: World, ev: dict):
    return w.registry.transfer_nft(ev["token_id"], ev["from"], ev["to"])


def _transfer(w: World, ev: dict):
    return w.ledger.transfer(ev["from"], ev["to"], ev["asset"], _amt(ev["amount"]))


HANDLERS: Dict[str, Callable[[World, dict], Any]] = {
    "mark": _mark,
    "accrue": _accrue,
    "roll_window": _roll,
    "swap": _swap,
    "volume": _volume,
    "provide_liquidity": _provide,
    "remove_liquidity": _remove,
    "claim_fees": _claim,
    "open_contract": _open,
    "settle": _settle,
    "add_margin": _add_margin,
    "remove_margin": _remove_margin,
    "borrow": _borrow,
    "repay": _repay,
    "forward_fees": _forward_fees,
    "transfer_nft": _transfer_nft,
    "transfer": _transfer,
}


def normalize(ev: dict) -> dict:
    """Canonical JSON form: amounts as exact decimal strings."""
    out = {}
    for key, value in ev.items():
        if isinstance(value, FixedAmount):
            out[key] = str(value)
        elif isinstance(value, dict):
            out[key] = {k: str(v) if isinstance(v, FixedAmount) else v for k, v in value.items()}
        else:
            out[key] = value
    return out


def execute(world: World, ev: dict):
    kind = ev["type"]
    try:
        handler = HANDLERS[kind]
    except KeyError:
        raise ValueError(f"unknown event type {kind!r}") from None
    result = handler(world, ev)
    world.journal.append({"tick": world.tick, **normalize(ev)})
    return result


def replay(world: World, journal: Iterable[dict]) -> World:
    for ev in journal:
        ev = dict(ev)
        world.tick = ev.pop("tick")
        execute(world, ev)
    return world


def signed_str(raw: int) -> str:
    return format_raw(raw)
