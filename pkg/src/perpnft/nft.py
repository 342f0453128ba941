"""Registry of collateral NFTs: claim rights over perp contracts and LP positions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Protocol

from .errors import (
    DuplicateMint,
    Escrowed,
    NotOwner,
    UnknownToken,
    UnknownUnderlying,
)
from .fixedpoint import FixedAmount


class NftKind(str, Enum):
    PERP = "perp-contract"
    LP = "liquidity-position"


class UnderlyingSource(Protocol):
    """What a market or pool must offer for its objects to be tokenized."""

    def is_live(self, ref: str) -> bool: ...

    def live_refs(self) -> Iterable[str]: ...

    def appraise_ref(self, ref: str, prices: Mapping[str, FixedAmount]) -> FixedAmount: ...

    def close_for(self, ref: str, caller: str) -> Dict[str, FixedAmount]: ...


@dataclass
class CollateralNft:
    token_id: int
    kind: NftKind
    underlying_ref: str
    owner: str
    escrow: Optional[str] = None
    last_appraisal: Optional[FixedAmount] = None

    @property
    def holder(self) -> str:
        """Account currently entitled to settle or claim the underlying."""
        return self.escrow if self.escrow is not None else self.owner

    def to_json(self) -> dict:
        return {
            "token_id": self.token_id,
            "kind": self.kind.value,
            "underlying_ref": self.underlying_ref,
            "owner": self.owner,
            "escrow": self.escrow,
            "last_appraisal": None if self.last_appraisal is None else str(self.last_appraisal),
        }


def ref_prefix(ref: str) -> str:
    return ref.rsplit("/", 1)[0]


class NftRegistry:
    def __init__(self):
        self._sources: Dict[str, UnderlyingSource] = {}
        self._tokens: Dict[int, CollateralNft] = {}
        self._by_ref: Dict[str, int] = {}
        self._ids = itertools.count(1)

    def attach(self, prefix: str, source: UnderlyingSource) -> None:
        """Route refs of the form ``<prefix>/<id>`` to ``source``."""
        self._sources[prefix] = source

    def _source(self, ref: str) -> UnderlyingSource:
        try:
            return self._sources[ref_prefix(ref)]
        except KeyError:
            raise UnknownUnderlying(f"no source for {ref!r}") from None

    def mint(self, kind: NftKind, underlying_ref: str, owner: str) -> CollateralNft:
        if not self._source(underlying_ref).is_live(underlying_ref):
            raise UnknownUnderlying(f"{underlying_ref} is not open")
        if underlying_ref in self._by_ref:
            raise DuplicateMint(f"{underlying_ref} already has token {self._by_ref[underlying_ref]}")
        nft = CollateralNft(next(self._ids), NftKind(kind), underlying_ref, owner)
        self._tokens[nft.token_id] = nft
        self._by_ref[underlying_ref] = nft.token_id
        return nft

    def get(self, token_id: int) -> CollateralNft:
        try:
            return self._tokens[token_id]
        except KeyError:
            raise UnknownToken(f"token {token_id} is not live") from None

    def token_for(self, underlying_ref: str) -> Optional[CollateralNft]:
        tid = self._by_ref.get(underlying_ref)
        return None if tid is None else self._tokens[tid]

    def holder_of(self, underlying_ref: str) -> str:
        nft = self.token_for(underlying_ref)
        if nft is None:
            raise UnknownUnderlying(f"{underlying_ref} has no live token")
        return nft.holder

    def transfer_nft(self, token_id: int, src: str, dst: str) -> None:
        nft = self.get(token_id)
        if nft.owner != src:
            raise NotOwner(f"{src} does not own token {token_id}")
        if nft.escrow is not None:
            raise Escrowed(f"token {token_id} is escrowed by {nft.escrow}")
        nft.owner = dst

    def set_escrow(self, token_id: int, lien_holder: str, caller: str) -> None:
        nft = self.get(token_id)
        if nft.owner != caller:
            raise NotOwner(f"{caller} does not own token {token_id}")
        if nft.escrow is not None:
            raise Escrowed(f"token {token_id} is escrowed by {nft.escrow}")
        nft.escrow = lien_holder

    def release_escrow(self, token_id: int, caller: str) -> None:
        nft = self.get(token_id)
        if nft.escrow != caller:
            raise NotOwner(f"{caller} is not the lien holder of token {token_id}")
        nft.escrow = None

    def burn_for(self, underlying_ref: str) -> Optional[CollateralNft]:
        """Drop the token of a closed underlying. Only the underlying's source calls this."""
        tid = self._by_ref.pop(underlying_ref, None)
        if tid is None:
            return None
        return self._tokens.pop(tid)

    def appraise(self, token_id: int, prices: Mapping[str, FixedAmount]) -> FixedAmount:
        nft = self.get(token_id)
        value = self._source(nft.underlying_ref).appraise_ref(nft.underlying_ref, prices)
        nft.last_appraisal = value
        return value

    def close_underlying(self, token_id: int, caller: str) -> Dict[str, FixedAmount]:
        """Settle or withdraw the underlying in full on behalf of the token's holder."""
        nft = self.get(token_id)
        return self._source(nft.underlying_ref).close_for(nft.underlying_ref, caller)

    def live_tokens(self) -> list[CollateralNft]:
        return [self._tokens[k] for k in sorted(self._tokens)]

    def check_bijection(self) -> bool:
        """Every live token has a live underlying and vice versa."""
        for nft in self._tokens.values():
            if not self._source(nft.underlying_ref).is_live(nft.underlying_ref):
                return False
        live = set()
        for source in self._sources.values():
            live.update(source.live_refs())
        return live == set(self._by_ref)

    def dump(self) -> list[dict]:
        return [nft.to_json() for nft in self.live_tokens()]
