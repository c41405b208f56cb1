"""Registration server: static sensor/GTO publication and lookup."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .physnode import NodeKind


class RegistryError(Exception):
    pass


class DuplicateRegistration(RegistryError):
    pass


@dataclass(frozen=True)
class SensorDescriptor:
    node_id: str
    kind: NodeKind
    quantities: frozenset = field(default_factory=frozenset)
    position: tuple[float, float] = (0.0, 0.0)
    agent: str = ""
    owner: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "quantities", frozenset(self.quantities))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.kind is not NodeKind.GTO and not self.quantities:
            raise RegistryError(f"{self.node_id}: sensors must declare at least one quantity")
        if not self.agent:
            raise RegistryError(f"{self.node_id}: descriptor needs an agent")

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "kind": self.kind.value,
            "quantities": sorted(self.quantities),
            "position": list(self.position),
            "agent": self.agent,
            "owner": self.owner,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SensorDescriptor":
        try:
            return cls(obj["node_id"], obj["kind"], obj.get("quantities", ()),
                       tuple(obj["position"]), obj["agent"], obj.get("owner", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise RegistryError(f"bad descriptor {obj!r}: {exc}") from None


def _in_region(pos, region) -> bool:
    (x0, y0), (x1, y1) = region
    return min(x0, x1) <= pos[0] <= max(x0, x1) and min(y0, y1) <= pos[1] <= max(y0, y1)


class Registry:
    def __init__(self, descriptors=()):
        self._by_id: dict[str, SensorDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def __len__(self):
        return len(self._by_id)

    def register(self, d: SensorDescriptor) -> str:
        if d.node_id in self._by_id:
            raise DuplicateRegistration(d.node_id)
        self._by_id[d.node_id] = d
        return d.node_id

    def get(self, node_id: str) -> SensorDescriptor | None:
        return self._by_id.get(node_id)

    def agent_host(self, agent_id: str) -> str | None:
        """Node id of the Type B / GTO host running ``agent_id``."""
        for d in self._by_id.values():
            if d.agent == agent_id and d.kind is not NodeKind.TYPE_A:
                return d.node_id
        return None

    def query(self, quantity: str | None = None, kind: NodeKind | str | None = None,
              region=None, owner: str | None = None) -> list[SensorDescriptor]:
        """Descriptors matching every given criterion, ordered by node id.

        ``region`` is an inclusive axis-aligned rectangle ``((x0, y0), (x1, y1))``.
        """
        kind = NodeKind(kind) if kind is not None else None
        out = []
        for node_id in sorted(self._by_id):
            d = self._by_id[node_id]
            if quantity is not None and quantity not in d.quantities:
                continue
            if kind is not None and d.kind is not kind:
                continue
            if region is not None and not _in_region(d.position, region):
                continue
            if owner is not None and d.owner != owner:
                continue
            out.append(d)
        return out

    def to_json(self) -> list[dict]:
        return [self._by_id[k].to_json() for k in sorted(self._by_id)]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def from_json(cls, doc) -> "Registry":
        if not isinstance(doc, list):
            raise RegistryError("roster must be a JSON array")
        return cls(SensorDescriptor.from_json(obj) for obj in doc)

    @classmethod
    def load(cls, path) -> "Registry":
        return cls.from_json(json.loads(Path(path).read_text()))
