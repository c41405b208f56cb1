"""Physical layer: sensor nodes, gateways and the sensed environment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .channels import ChannelKind
from .simkernel import US_PER_S, Simulator
from .wirecodec import SenMLRecord


class NodeKind(str, Enum):
    TYPE_A = "TypeA"
    TYPE_B = "TypeB"
    GTO = "Gto"

    @property
    def can_host_agent(self) -> bool:
        return self is not NodeKind.TYPE_A


DEFAULT_MAX_TASKS = {NodeKind.TYPE_A: 2, NodeKind.TYPE_B: 8, NodeKind.GTO: 8}

UNITS = {"temperature": "Cel"}


class PhysError(Exception):
    pass


class UnknownQuantity(PhysError):
    pass


class NotTypeA(PhysError):
    pass


class NoGto(PhysError):
    pass


class RosterError(PhysError):
    pass


@dataclass
class PhysicalNode:
    id: str
    kind: NodeKind
    position: tuple[float, float] = (0.0, 0.0)
    gto_ref: str | None = None
    max_tasks: int | None = None

    def __post_init__(self):
        self.kind = NodeKind(self.kind)
        self.position = (float(self.position[0]), float(self.position[1]))
        if self.max_tasks is None:
            self.max_tasks = DEFAULT_MAX_TASKS[self.kind]
        if self.max_tasks < 1:
            raise RosterError(f"{self.id}: max_tasks must be >= 1")
        if self.kind is NodeKind.TYPE_A and not self.gto_ref:
            raise RosterError(f"{self.id}: TypeA node needs a gto_ref")
        if self.kind is not NodeKind.TYPE_A and self.gto_ref:
            raise RosterError(f"{self.id}: only TypeA nodes delegate to a GTO")


@dataclass(frozen=True)
class Fire:
    origin: tuple[float, float]
    start: int  # simulated microseconds
    intensity: float  # degrees above ambient at the origin
    falloff_radius: float

    def __post_init__(self):
        if self.intensity < 0 or self.falloff_radius <= 0:
            raise ValueError("fire needs intensity >= 0 and falloff_radius > 0")


@dataclass(frozen=True)
class Environment:
    ambient_temp: float = 20.0
    fire: Fire | None = None

    def temperature(self, position, at: int) -> float:
        """Linear falloff around a static fire, ambient elsewhere."""
        fire = self.fire
        if fire is None or at < fire.start:
            return self.ambient_temp
        d = math.dist(position, fire.origin)
        return self.ambient_temp + fire.intensity * max(0.0, 1.0 - d / fire.falloff_radius)


class PhysicalLayer:
    def __init__(self, nodes=(), environment: Environment | None = None):
        self.nodes: dict[str, PhysicalNode] = {}
        self.environment = environment or Environment()
        for n in nodes:
            self.add(n)

    def add(self, node: PhysicalNode) -> None:
        if node.id in self.nodes:
            raise RosterError(f"duplicate node {node.id}")
        self.nodes[node.id] = node

    def __getitem__(self, node_id: str) -> PhysicalNode:
        return self.nodes[node_id]

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def validate(self) -> None:
        for node in self.nodes.values():
            if node.kind is NodeKind.TYPE_A:
                gto = self.nodes.get(node.gto_ref)
                if gto is None or not gto.kind.can_host_agent:
                    raise RosterError(f"{node.id}: gto_ref {node.gto_ref!r} is not a Gto/TypeB node")

    def delegates_of(self, host: str) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.gto_ref == host)

    def sample(self, node_id: str, quantity: str, at: int) -> SenMLRecord:
        node = self.nodes[node_id]
        if quantity not in UNITS:
            raise UnknownQuantity(quantity)
        value = self.environment.temperature(node.position, at)
        return SenMLRecord(node_id, quantity, UNITS[quantity], value, at / US_PER_S)

    def delegate_to_gto(self, sim: Simulator, node_id: str, msg, meta=None) -> int:
        """Forward a TypeA node's message over Gi to its gateway."""
        node = self.nodes[node_id]
        if node.kind is not NodeKind.TYPE_A:
            raise NotTypeA(node_id)
        if node.gto_ref not in self.nodes or node.gto_ref not in sim.handlers:
            raise NoGto(f"{node_id} -> {node.gto_ref}")
        return sim.send(node_id, node.gto_ref, msg, ChannelKind.GI, meta=meta)
