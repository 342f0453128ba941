"""Scenario file format: JSON schema, loading and validation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Union

import jsonschema

from .errors import SchemaError

DECIMAL = {"type": "string", "pattern": r"^[0-9]+(\.[0-9]+)?$"}
POSITIVE_INT = {"type": "integer", "minimum": 0}
ID = {"type": "string", "minLength": 1}

_event_common = {"tick": POSITIVE_INT}


def _event(kind: str, required: list, props: dict) -> dict:
    return {
        "type": "object",
        "properties": {"type": {"const": kind}, **_event_common, **props},
        "required": ["type", "tick", *required],
        "additionalProperties": False,
    }


EVENTS = [
    _event("mark", ["market", "price"], {"market": ID, "price": DECIMAL}),
    _event("price", ["asset", "price"], {"asset": ID, "price": DECIMAL}),
    _event("swap", ["pool", "trader", "asset_in", "amount"],
           {"pool": ID, "trader": ID, "asset_in": ID, "amount": DECIMAL}),
    _event("random_swaps", ["pool", "trader", "count", "max_amount"],
           {"pool": ID, "trader": ID, "count": {"type": "integer", "minimum": 1}, "max_amount": DECIMAL}),
    _event("volume", ["pool", "band", "asset", "amount", "payer"],
           {"pool": ID, "band": POSITIVE_INT, "asset": ID, "amount": DECIMAL, "payer": ID}),
    _event("provide_liquidity", ["pool", "provider", "band", "amount_x", "amount_y"],
           {"pool": ID, "provider": ID, "band": POSITIVE_INT, "amount_x": DECIMAL, "amount_y": DECIMAL}),
    _event("remove_liquidity", ["pool", "position", "caller"],
           {"pool": ID, "position": ID, "caller": ID, "fraction": DECIMAL}),
    _event("claim_fees", ["pool", "position", "caller"], {"pool": ID, "position": ID, "caller": ID}),
    _event("open_contract", ["market", "trader", "side", "collateral", "leverage"],
           {"market": ID, "trader": ID, "side": {"enum": ["long", "short"]},
            "collateral": DECIMAL, "leverage": DECIMAL}),
    _event("settle", ["market", "contract", "caller"], {"market": ID, "contract": ID, "caller": ID}),
    _event("borrow", ["borrower", "token_id", "requested"],
           {"borrower": ID, "token_id": {"type": "integer", "minimum": 1},
            "requested": {"type": "object", "additionalProperties": DECIMAL, "minProperties": 1}}),
    _event("repay", ["borrower", "loan"], {"borrower": ID, "loan": ID}),
    _event("transfer_nft", ["token_id", "from", "to"],
           {"token_id": {"type": "integer", "minimum": 1}, "from": ID, "to": ID}),
    _event("transfer", ["from", "to", "asset", "amount"],
           {"from": ID, "to": ID, "asset": ID, "amount": DECIMAL}),
]

SCHEDULE = {"type": "object", "additionalProperties": POSITIVE_INT}

STRATEGIES = [
    {
        "type": "object",
        "properties": {
            "id": ID,
            "kind": {"const": "leverage-stack"},
            "agent": ID,
            "params": {
                "type": "object",
                "properties": {
                    "market": ID,
                    "collateral": DECIMAL,
                    "leverage": DECIMAL,
                    "depth": {"type": "integer", "minimum": 1},
                    "side": {"enum": ["long", "short"]},
                },
                "required": ["market", "collateral", "leverage", "depth"],
                "additionalProperties": False,
            },
            "schedule": {
                "type": "object",
                "properties": {"open": POSITIVE_INT, "unwind": POSITIVE_INT},
                "required": ["open"],
                "additionalProperties": False,
            },
        },
        "required": ["id", "kind", "agent", "params", "schedule"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "id": ID,
            "kind": {"const": "liquidation-hedge"},
            "agent": ID,
            "params": {
                "type": "object",
                "properties": {
                    "market": ID,
                    "collateral": DECIMAL,
                    "leverage": DECIMAL,
                    "side": {"enum": ["long", "short"]},
                    "hedged": {"type": "boolean"},
                    "adverse_path": {"type": "array", "items": DECIMAL, "minItems": 1},
                    "hedge_ratio": DECIMAL,
                    "hedge_leverage": DECIMAL,
                },
                "required": ["market", "collateral", "leverage", "adverse_path"],
                "additionalProperties": False,
            },
            "schedule": {
                "type": "object",
                "properties": {"open": POSITIVE_INT, "hedge": POSITIVE_INT, "unwind": POSITIVE_INT},
                "required": ["open"],
                "additionalProperties": False,
            },
        },
        "required": ["id", "kind", "agent", "params", "schedule"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "id": ID,
            "kind": {"const": "lp-borrow-extend"},
            "agent": ID,
            "params": {
                "type": "object",
                "properties": {
                    "pool": ID,
                    "band": POSITIVE_INT,
                    "amount_x": DECIMAL,
                    "amount_y": DECIMAL,
                    "band_next": POSITIVE_INT,
                    "expected_volume_next": DECIMAL,
                    "mode": {"enum": ["inclusive", "exclusive"]},
                },
                "required": ["pool", "band", "amount_x", "amount_y", "band_next", "expected_volume_next"],
                "additionalProperties": False,
            },
            "schedule": {
                "type": "object",
                "properties": {"open": POSITIVE_INT, "decide": POSITIVE_INT, "unwind": POSITIVE_INT},
                "required": ["open", "decide"],
                "additionalProperties": False,
            },
        },
        "required": ["id", "kind", "agent", "params", "schedule"],
        "additionalProperties": False,
    },
]

SCENARIO_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "perpnft scenario",
    "type": "object",
    "properties": {
        "name": ID,
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "numeraire": ID,
        "days": POSITIVE_INT,
        "assets": {"type": "array", "items": ID, "minItems": 1, "uniqueItems": True},
        "prices": {"type": "object", "additionalProperties": DECIMAL},
        "balances": {
            "type": "object",
            "additionalProperties": {"type": "object", "additionalProperties": DECIMAL},
        },
        "expected_supply": {"type": "object", "additionalProperties": DECIMAL},
        "pools": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": ID,
                    "asset_x": ID,
                    "asset_y": ID,
                    "fee_tier": DECIMAL,
                    "extra_fee_tiers": {"type": "array", "items": DECIMAL},
                    "bands": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "properties": {"ratio_lo": DECIMAL, "ratio_hi": DECIMAL},
                            "required": ["ratio_lo", "ratio_hi"],
                            "additionalProperties": False,
                        },
                    },
                    "seed_liquidity": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "provider": ID,
                                "band": POSITIVE_INT,
                                "amount_x": DECIMAL,
                                "amount_y": DECIMAL,
                            },
                            "required": ["provider", "band", "amount_x", "amount_y"],
                            "additionalProperties": False,
                        },
                    },
                },
                "required": ["id", "asset_x", "asset_y", "fee_tier", "bands"],
                "additionalProperties": False,
            },
        },
        "perp_markets": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": ID,
                    "underlying": ID,
                    "quote": ID,
                    "mark_price": DECIMAL,
                    "maintenance_margin_ratio": DECIMAL,
                    "liquidation_penalty": DECIMAL,
                    "clearinghouse": ID,
                    "price_series": {
                        "type": "object",
                        "propertyNames": {"pattern": "^[0-9]+$"},
                        "additionalProperties": DECIMAL,
                    },
                },
                "required": ["id", "underlying", "quote", "mark_price", "maintenance_margin_ratio"],
                "additionalProperties": False,
            },
        },
        "lending": {
            "type": "object",
            "properties": {
                "vault": ID,
                "ltv": DECIMAL,
                "liquidation_buffer": DECIMAL,
                "daily_rate": DECIMAL,
                "annual_rate_percent": DECIMAL,
                "per_asset_annual_rate_percent": {"type": "object", "additionalProperties": DECIMAL},
                "rate_csv": {
                    "type": "object",
                    "properties": {"path": ID, "assets": {"type": "array", "items": ID, "minItems": 1}},
                    "required": ["path", "assets"],
                    "additionalProperties": False,
                },
            },
            "required": ["ltv", "liquidation_buffer"],
            "oneOf": [
                {"required": ["daily_rate"]},
                {"required": ["annual_rate_percent"]},
                {"required": ["per_asset_annual_rate_percent"]},
                {"required": ["rate_csv"]},
            ],
            "additionalProperties": False,
        },
        "strategies": {"type": "array", "items": {"oneOf": STRATEGIES}},
        "timeline": {"type": "array", "items": {"oneOf": EVENTS}},
        "analysis": {
            "type": "object",
            "properties": {
                "break_even": {
                    "type": "object",
                    "properties": {
                        "fee_tier": DECIMAL,
                        "annual_rate_percent": DECIMAL,
                        "apr_csv": ID,
                        "assets": {"type": "array", "items": ID, "minItems": 1},
                    },
                    "required": ["fee_tier"],
                    "additionalProperties": False,
                },
                "fee_rewards": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {"pool": ID, "band": POSITIVE_INT},
                        "required": ["pool", "band"],
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
    },
    "required": ["name", "assets", "balances"],
    "additionalProperties": False,
}


def _describe(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.context:
        # oneOf: report the branch that got furthest
        best = max(err.context, key=lambda e: len(e.absolute_path))
        where = "/".join(str(p) for p in best.absolute_path) or where
        return f"{where}: {best.message}"
    return f"{where}: {err.message}"


def validate(data: Any, source: str = "<scenario>") -> dict:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise SchemaError(f"{source}: " + "; ".join(_describe(e) for e in errors[:5]))
    _check_references(data, source)
    return data


def _check_references(data: dict, source: str) -> None:
    assets = set(data["assets"])
    pools = {p["id"]: p for p in data.get("pools", [])}
    markets = {m["id"]: m for m in data.get("perp_markets", [])}

    def fail(msg):
        raise SchemaError(f"{source}: {msg}")

    for acct, bal in data["balances"].items():
        for asset in bal:
            if asset not in assets:
                fail(f"balances/{acct}/{asset}: unknown asset")
    for pid, p in pools.items():
        for key in ("asset_x", "asset_y"):
            if p[key] not in assets:
                fail(f"pools/{pid}/{key}: unknown asset {p[key]}")
        for i, seed in enumerate(p.get("seed_liquidity", [])):
            if seed["band"] >= len(p["bands"]):
                fail(f"pools/{pid}/seed_liquidity/{i}/band: no band {seed['band']}")
    for mid, m in markets.items():
        if m["quote"] not in assets:
            fail(f"perp_markets/{mid}/quote: unknown asset {m['quote']}")
    if markets and "lending" not in data and any(
        s["kind"] in ("leverage-stack", "liquidation-hedge") for s in data.get("strategies", [])
    ):
        fail("strategies need a lending section")
    for i, ev in enumerate(data.get("timeline", [])):
        if "pool" in ev and ev["pool"] not in pools:
            fail(f"timeline/{i}/pool: unknown pool {ev['pool']}")
        if "market" in ev and ev["market"] not in markets:
            fail(f"timeline/{i}/market: unknown market {ev['market']}")
        for key in ("asset", "asset_in"):
            if key in ev and ev[key] not in assets:
                fail(f"timeline/{i}/{key}: unknown asset {ev[key]}")
    seen = set()
    for i, s in enumerate(data.get("strategies", [])):
        if s["id"] in seen:
            fail(f"strategies/{i}/id: duplicate id {s['id']}")
        seen.add(s["id"])
        params = s["params"]
        if "market" in params and params["market"] not in markets:
            fail(f"strategies/{i}/params/market: unknown market {params['market']}")
        if "pool" in params and params["pool"] not in pools:
            fail(f"strategies/{i}/params/pool: unknown pool {params['pool']}")


def load(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read scenario: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate(data, str(path))
