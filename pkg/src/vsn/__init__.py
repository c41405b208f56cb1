"""Simulated wireless sensor network virtualization.

Node-level virtualization (several prioritized application tasks per
physical sensor) and network-level virtualization (per-application
overlays over a shared roster), driven by a deterministic discrete-event
kernel. Fire contour estimation is the worked application.
"""

__version__ = "0.1.0"
