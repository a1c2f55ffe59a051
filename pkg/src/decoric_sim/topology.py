"""Node placement and pairwise radio relations."""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum

NodeId = int


class LinkClass(Enum):
    OUT_OF_RANGE = 0
    EXTERNAL = 1
    POTENTIAL = 2


@dataclass(frozen=True)
class RadioModel:
    """Deterministic propagation model.

    ``linear``: RSSI falls linearly in dB from ``tx_power_dbm`` at distance 0 to
    ``sensitivity_dbm`` at the radio range (unit-disk style, as in Cooja's UDGM).

    ``log_distance``: RSSI(d) = P_tx - PL0 - 10*gamma*log10(d/d0). The sensitivity is
    derived so that RSSI(radio_range) equals it exactly.
    """

    kind: str = "linear"
    tx_power_dbm: float = 0.0
    sensitivity_dbm: float = -95.0
    gamma: float = 2.0
    d0: float = 1.0
    pl0_db: float = 40.0

    def __post_init__(self):
        if self.kind not in ("linear", "log_distance"):
            raise ValueError(f"unknown radio model {self.kind!r}")
        if self.kind == "linear" and not self.sensitivity_dbm < self.tx_power_dbm:
            raise ValueError("sensitivity must be below transmit power")
        if self.kind == "log_distance" and (self.gamma <= 0 or self.d0 <= 0):
            raise ValueError("gamma and d0 must be positive")

    def rssi(self, d: float, radio_range: float) -> float:
        if self.kind == "linear":
            return self.tx_power_dbm + (self.sensitivity_dbm - self.tx_power_dbm) * d / radio_range
        d = max(d, self.d0)
        return self.tx_power_dbm - self.pl0_db - 10.0 * self.gamma * math.log10(d / self.d0)

    def sensitivity(self, radio_range: float) -> float:
        return self.rssi(radio_range, radio_range)


@dataclass(frozen=True)
class Topology:
    positions: dict  # NodeId -> (x, y) in meters
    area: tuple = (100.0, 100.0)
    radio_range: float = 50.0
    rssi_threshold: float = -65.0
    model: RadioModel = field(default_factory=RadioModel)

    def __post_init__(self):
        w, h = self.area
        if not (w > 0 and h > 0):
            raise ValueError("area must be positive")
        if not self.radio_range > 0:
            raise ValueError("radio_range must be positive")
        if not math.isfinite(self.rssi_threshold):
            raise ValueError("rssi_threshold must be finite")
        for nid, (x, y) in self.positions.items():
            if nid < 0:
                raise ValueError(f"negative node id {nid}")
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise ValueError(f"node {nid} at ({x}, {y}) lies outside the area")

    @property
    def ids(self) -> list:
        return sorted(self.positions)

    def distance(self, a: NodeId, b: NodeId) -> float:
        return math.dist(self.positions[a], self.positions[b])

    def with_node(self, nid: NodeId, pos: tuple) -> "Topology":
        if nid in self.positions:
            raise ValueError(f"node {nid} already placed")
        positions = dict(self.positions)
        positions[nid] = (float(pos[0]), float(pos[1]))
        return replace(self, positions=positions)

    def neighbor_table(self) -> dict:
        """Map each node to {neighbor: (LinkClass, rssi)} for every in-range pair."""
        ids = self.ids
        table = {i: {} for i in ids}
        for k, a in enumerate(ids):
            for b in ids[k + 1:]:
                cls = classify_link(a, b, self)
                if cls is LinkClass.OUT_OF_RANGE:
                    continue
                r = link_rssi(a, b, self)
                table[a][b] = (cls, r)
                table[b][a] = (cls, r)
        return table


def generate_random_topology(n: int, area=(100.0, 100.0), seed: int = 0, *,
                             radio_range: float = 50.0, rssi_threshold: float = -65.0,
                             model: RadioModel | None = None) -> Topology:
    """Uniform random placement. Uses a Mersenne Twister seeded from a tagged string,
    which is stable across platforms and Python versions."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w, h = area
    if not (w > 0 and h > 0):
        raise ValueError("area must be positive")
    rng = random.Random(f"topology:{seed}")
    positions = {i: (rng.uniform(0.0, w), rng.uniform(0.0, h)) for i in range(n)}
    return Topology(positions, (float(w), float(h)), radio_range, rssi_threshold,
                    model or RadioModel())


def link_rssi(a: NodeId, b: NodeId, topo: Topology) -> float:
    if a == b:
        raise ValueError("link_rssi needs two distinct nodes")
    return topo.model.rssi(topo.distance(a, b), topo.radio_range)


def classify_link(a: NodeId, b: NodeId, topo: Topology) -> LinkClass:
    if a == b:
        raise ValueError("classify_link needs two distinct nodes")
    if topo.distance(a, b) > topo.radio_range:
        return LinkClass.OUT_OF_RANGE
    if link_rssi(a, b, topo) < topo.rssi_threshold:
        return LinkClass.EXTERNAL
    return LinkClass.POTENTIAL


def is_unit_disk_connected(topo: Topology) -> bool:
    ids = topo.ids
    if not ids:
        return True
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        a = stack.pop()
        for b in ids:
            if b not in seen and topo.distance(a, b) <= topo.radio_range:
                seen.add(b)
                stack.append(b)
    return len(seen) == len(ids)


def to_csv(topo: Topology) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "y"])
    for nid in topo.ids:
        x, y = topo.positions[nid]
        w.writerow([nid, repr(x), repr(y)])
    return buf.getvalue()


def from_csv(text: str, **kwargs) -> Topology:
    rows = csv.DictReader(io.StringIO(text))
    positions = {}
    for row in rows:
        nid = int(row["id"])
        if nid in positions:
            raise ValueError(f"duplicate node id {nid}")
        positions[nid] = (float(row["x"]), float(row["y"]))
    return Topology(positions, **kwargs)


# Hand-placed 14-node network reproducing the worked clustering example.
# Radio range 50 m, linear model from 0 dBm to -95 dBm, threshold -65 dBm,
# so potential neighbors sit within ~34.2 m and external ones within 34.2-50 m.
_EXAMPLE_COORDS = {
    1: (-25, 0), 2: (-20, -15), 3: (0, 0), 4: (80, 45), 5: (-15, -25),
    6: (105, -15), 7: (-30, -5), 8: (0, 45), 9: (80, 0), 10: (33, 4),
    11: (0, 90), 12: (75, 40), 13: (90, 40), 14: (33, -4),
}


def example_topology() -> Topology:
    positions = {i: (float(x + 40), float(y + 30)) for i, (x, y) in _EXAMPLE_COORDS.items()}
    return Topology(positions, (160.0, 130.0), 50.0, -65.0, RadioModel())
