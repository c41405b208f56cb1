from enum import Enum


class ChannelKind(str, Enum):
    """Interface a message travels on."""

    DI = "Di"
    CI = "Ci"
    PDI = "PDi"
    PCI = "PCi"
    GI = "Gi"

    @property
    def public(self) -> bool:
        return self in (ChannelKind.DI, ChannelKind.CI)
