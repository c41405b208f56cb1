"""Request/response endpoint gluing the CoAP codec to the simulator.

Each simulated node owns one :class:`Endpoint`. Requests go out as
Confirmable messages; the matching Acknowledgement carries the response
code and payload. Pending requests are matched by token.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from .simkernel import Delivery, Simulator
from .wirecodec import Code, Message, MsgType, decode_message, encode_message

log = logging.getLogger(__name__)


@dataclass
class Exchange:
    """One request and (eventually) its response, seen from the sender."""

    src: str
    dst: str
    request: Message
    sent_at: int
    send_index: int
    channel: object
    response: Message | None = None
    received_at: int | None = None
    receive_index: int | None = None


@dataclass
class Inbound:
    """A decoded request waiting to be answered."""

    endpoint: "Endpoint"
    delivery: Delivery
    msg: Message
    answered: bool = False

    @property
    def src(self) -> str:
        return self.delivery.src

    def respond(self, code: Code, payload: bytes = b"", content_format: int | None = None,
                meta: dict | None = None, delay: int = 0) -> None:
        self.endpoint.respond(self, code, payload, content_format, meta, delay)


class Endpoint:
    def __init__(self, sim: Simulator, node_id: str):
        self.sim = sim
        self.node_id = node_id
        self._next_mid = 0
        self._next_token = 0
        self._pending: dict[bytes, tuple[Exchange, Callable | None]] = {}
        self.routes: list[tuple[tuple[str, ...], Callable[[Inbound], None]]] = []
        self.extra: Callable[[Delivery], None] | None = None
        self.exchanges: list[Exchange] = []
        sim.add_node(node_id, self.on_delivery)

    def route(self, prefix, handler: Callable[[Inbound], None]) -> None:
        """Dispatch inbound requests whose path starts with ``prefix``."""
        self.routes.append((tuple(prefix), handler))
        self.routes.sort(key=lambda r: -len(r[0]))

    def _mid(self) -> int:
        self._next_mid = (self._next_mid + 1) & 0xFFFF
        return self._next_mid

    def _token(self) -> bytes:
        self._next_token += 1
        return self._next_token.to_bytes(4, "big")

    def request(self, dst: str, code: Code, path, payload: bytes = b"",
                content_format: int | None = None, channel=None,
                on_response: Callable[[Exchange], None] | None = None,
                meta: dict | None = None, via: Callable | None = None) -> Exchange:
        """Send a Confirmable request; ``via(dst, data, meta)`` overrides the hop."""
        msg = Message(MsgType.CON, code, self._mid(), self._token(), tuple(path),
                      content_format, payload)
        data = encode_message(msg)
        index = len(self.sim.log)
        if via is None:
            self.sim.send(self.node_id, dst, data, channel, meta=_meta(msg, meta))
        else:
            via(dst, data, _meta(msg, meta))
        ex = Exchange(self.node_id, dst, msg, self.sim.now, index, channel)
        self._pending[msg.token] = (ex, on_response)
        self.exchanges.append(ex)
        return ex

    def respond(self, inbound: Inbound, code: Code, payload: bytes = b"",
                content_format: int | None = None, meta: dict | None = None,
                delay: int = 0) -> None:
        if inbound.answered:
            raise RuntimeError("request already answered")
        inbound.answered = True
        req = inbound.msg
        msg = Message(MsgType.ACK, code, req.message_id, req.token, (), content_format, payload)
        data = encode_message(msg)

        def send():
            self.sim.send(self.node_id, inbound.src, data, inbound.delivery.channel,
                          response=True, meta=_meta(msg, meta))

        if delay:
            self.sim.call_later(delay, self.node_id, send, "respond")
        else:
            send()

    def on_delivery(self, delivery) -> None:
        if not isinstance(delivery, Delivery):
            return
        if not isinstance(delivery.msg, (bytes, bytearray)):
            if self.extra is not None:
                self.extra(delivery)
            return
        msg = decode_message(delivery.msg)
        if msg.msg_type == MsgType.ACK:
            pending = self._pending.pop(msg.token, None)
            if pending is None:
                log.warning("%s: unmatched response token %s", self.node_id, msg.token.hex())
                return
            ex, callback = pending
            ex.response = msg
            ex.received_at = self.sim.now
            ex.receive_index = delivery.log_index
            if callback is not None:
                callback(ex)
            return
        inbound = Inbound(self, delivery, msg)
        for prefix, handler in self.routes:
            if msg.uri_path[:len(prefix)] == prefix:
                handler(inbound)
                return
        inbound.respond(Code.NOT_FOUND)


def _meta(msg: Message, extra: dict | None) -> dict:
    out = {"code": Code(msg.code).dotted, "mtype": msg.msg_type.name}
    if msg.uri_path:
        out["path"] = "/".join(msg.uri_path)
    if msg.content_format is not None:
        out["cf"] = msg.content_format
    if extra:
        out.update(extra)
    return out
