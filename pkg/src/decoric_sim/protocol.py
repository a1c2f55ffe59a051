"""Interface between protocol node state machines and the engine."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Role(Enum):
    CH = "ch"
    BRIDGE = "bridge"
    MEMBER = "member"
    DEAD = "dead"


class RadioMode(Enum):
    ALWAYS_ON = "on"
    RDC = "rdc"
    OFF = "off"


@dataclass(frozen=True)
class TxRequest:
    """Ask the engine for one broadcast this round.

    ``slot`` is the ordinal position in the round (0 .. N-1, finer ordering
    through ``sub``). The frame itself is built at transmission time so it
    reflects everything received up to that instant; a node may decline to send
    by returning None from ``build_frame``.
    """

    slot: int
    sub: int = 0
    half: int | None = None  # 0 or 1: use half-length slots in that half of the round


class ProtocolNode:
    """Node behavior driven by the engine. Subclasses implement all methods."""

    id: int

    def on_round(self, round_index: int):
        """Return None, one TxRequest, or a list of them."""
        raise NotImplementedError

    def build_frame(self):
        raise NotImplementedError

    def on_receive(self, frame, link, rssi: float, now: int) -> None:
        raise NotImplementedError

    def radio_mode(self) -> RadioMode:
        raise NotImplementedError

    def role(self) -> Role:
        raise NotImplementedError

    def cluster_head(self) -> int:
        raise NotImplementedError

    def is_settled(self) -> bool:
        """True once the node's clustering is complete (for cost metrics)."""
        raise NotImplementedError
