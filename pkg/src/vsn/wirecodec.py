"""CoAP-subset framing and SenML-JSON measurement payloads.

Wire layout of a message::

    0                   1                   2                   3
    |Ver| T |  TKL  |      Code     |          Message ID           |
    | Token (TKL bytes) ...
    | Options (Uri-Path = 11, Content-Format = 12), delta encoded ...
    |1 1 1 1 1 1 1 1| Payload ...

Only Confirmable and Acknowledgement types are used; responses are always
piggybacked on the ACK.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum


class CodecError(Exception):
    pass


class UnsupportedCode(CodecError):
    pass


class OversizeToken(CodecError):
    pass


class Truncated(CodecError):
    pass


class MalformedOption(CodecError):
    pass


class MalformedHeader(CodecError):
    pass


class SenMLError(CodecError):
    pass


class EmptyBatch(SenMLError):
    pass


class MalformedJson(SenMLError):
    pass


class MissingField(SenMLError):
    pass


VERSION = 1
PAYLOAD_MARKER = 0xFF

OPT_URI_PATH = 11
OPT_CONTENT_FORMAT = 12

# Content-Format ids
CF_OCTET_STREAM = 42
CF_JSON = 50
CF_SENML_JSON = 110


class MsgType(IntEnum):
    CON = 0
    ACK = 2


class Code(IntEnum):
    GET = 0x01
    POST = 0x02
    PUT = 0x03
    CREATED = 0x41
    CHANGED = 0x44
    CONTENT = 0x45
    BAD_REQUEST = 0x80
    NOT_FOUND = 0x84

    @property
    def dotted(self) -> str:
        return f"{self >> 5}.{self & 0x1F:02d}"

    @property
    def is_request(self) -> bool:
        return (self >> 5) == 0

    @property
    def is_success(self) -> bool:
        return (self >> 5) == 2


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    code: Code
    message_id: int
    token: bytes = b""
    uri_path: tuple[str, ...] = ()
    content_format: int | None = None
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "uri_path", tuple(self.uri_path))
        object.__setattr__(self, "payload", bytes(self.payload))
        object.__setattr__(self, "token", bytes(self.token))


def _code(value: int) -> Code:
    try:
        return Code(value)
    except ValueError:
        raise UnsupportedCode(f"code {value >> 5}.{value & 0x1F:02d}") from None


def _opt_field(value: int) -> tuple[int, bytes]:
    if value < 13:
        return value, b""
    if value < 269:
        return 13, bytes([value - 13])
    if value < 65805:
        return 14, (value - 269).to_bytes(2, "big")
    raise MalformedOption(f"option field too large: {value}")


def _uint(value: int) -> bytes:
    if value == 0:
        return b""
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def encode_message(m: Message) -> bytes:
    if len(m.token) > 8:
        raise OversizeToken(f"token of {len(m.token)} bytes")
    code = _code(int(m.code))
    if not 0 <= m.message_id <= 0xFFFF:
        raise MalformedHeader(f"message id {m.message_id}")
    if m.content_format is not None and not 0 <= m.content_format <= 0xFFFF:
        raise MalformedOption(f"content format {m.content_format}")
    out = bytearray()
    out.append((VERSION << 6) | (int(m.msg_type) << 4) | len(m.token))
    out.append(int(code))
    out += m.message_id.to_bytes(2, "big")
    out += m.token

    options: list[tuple[int, bytes]] = [(OPT_URI_PATH, seg.encode("utf-8")) for seg in m.uri_path]
    if m.content_format is not None:
        options.append((OPT_CONTENT_FORMAT, _uint(m.content_format)))
    last = 0
    for number, value in sorted(options, key=lambda o: o[0]):
        delta_nib, delta_ext = _opt_field(number - last)
        len_nib, len_ext = _opt_field(len(value))
        out.append((delta_nib << 4) | len_nib)
        out += delta_ext + len_ext + value
        last = number

    if m.payload:
        out.append(PAYLOAD_MARKER)
        out += m.payload
    return bytes(out)


def _read_ext(nib: int, data: bytes, pos: int) -> tuple[int, int]:
    if nib < 13:
        return nib, pos
    if nib == 13:
        if pos + 1 > len(data):
            raise Truncated("option extension")
        return data[pos] + 13, pos + 1
    if nib == 14:
        if pos + 2 > len(data):
            raise Truncated("option extension")
        return int.from_bytes(data[pos:pos + 2], "big") + 269, pos + 2
    raise MalformedOption("reserved nibble 15")


def decode_message(data: bytes) -> Message:
    data = bytes(data)
    if len(data) < 4:
        raise Truncated(f"{len(data)} bytes, header needs 4")
    b0 = data[0]
    if b0 >> 6 != VERSION:
        raise MalformedHeader(f"version {b0 >> 6}")
    try:
        msg_type = MsgType((b0 >> 4) & 0x3)
    except ValueError:
        raise MalformedHeader(f"message type {(b0 >> 4) & 0x3}") from None
    tkl = b0 & 0x0F
    if tkl > 8:
        raise MalformedHeader(f"token length {tkl}")
    code = _code(data[1])
    message_id = int.from_bytes(data[2:4], "big")
    pos = 4
    if pos + tkl > len(data):
        raise Truncated("token")
    token = data[pos:pos + tkl]
    pos += tkl

    uri_path: list[str] = []
    content_format = None
    number = 0
    payload = b""
    while pos < len(data):
        head = data[pos]
        pos += 1
        if head == PAYLOAD_MARKER:
            payload = data[pos:]
            if not payload:
                raise MalformedOption("payload marker followed by empty payload")
            break
        delta, pos = _read_ext(head >> 4, data, pos)
        length, pos = _read_ext(head & 0x0F, data, pos)
        if pos + length > len(data):
            raise Truncated("option value")
        value = data[pos:pos + length]
        pos += length
        number += delta
        if number == OPT_URI_PATH:
            try:
                uri_path.append(value.decode("utf-8"))
            except UnicodeDecodeError:
                raise MalformedOption("Uri-Path is not UTF-8") from None
        elif number == OPT_CONTENT_FORMAT:
            if content_format is not None or length > 2:
                raise MalformedOption("bad Content-Format")
            content_format = int.from_bytes(value, "big")
        else:
            raise MalformedOption(f"unsupported option {number}")

    return Message(msg_type, code, message_id, token, tuple(uri_path), content_format, payload)


# -- SenML ------------------------------------------------------------------

@dataclass(frozen=True)
class SenMLRecord:
    base_name: str
    name: str
    unit: str
    value: float
    time: float

    def __post_init__(self):
        if not self.base_name:
            raise ValueError("base_name must be nonempty")


@dataclass
class MeasurementBatch:
    records: list[SenMLRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


_FIELDS = ("bn", "n", "u", "v", "t")


def record_to_json(r: SenMLRecord) -> dict:
    return {"bn": r.base_name, "n": r.name, "u": r.unit, "v": float(r.value), "t": float(r.time)}


def record_from_json(obj) -> SenMLRecord:
    if not isinstance(obj, dict):
        raise MalformedJson("record is not an object")
    for key in _FIELDS:
        if key not in obj:
            raise MissingField(key)
    if not isinstance(obj["bn"], str) or not obj["bn"]:
        raise MissingField("bn")
    if not isinstance(obj["n"], str) or not isinstance(obj["u"], str):
        raise MalformedJson("n and u must be strings")
    for key in ("v", "t"):
        if isinstance(obj[key], bool) or not isinstance(obj[key], (int, float)):
            raise MalformedJson(f"{key} must be a number")
    return SenMLRecord(obj["bn"], obj["n"], obj["u"], float(obj["v"]), float(obj["t"]))


def encode_senml(batch: MeasurementBatch | list[SenMLRecord]) -> bytes:
    records = list(batch)
    if not records:
        raise EmptyBatch("nothing to encode")
    for r in records:
        if not (math.isfinite(r.value) and math.isfinite(r.time)):
            raise ValueError("SenML values must be finite")
    # float repr is shortest round-trip
    return json.dumps([record_to_json(r) for r in records], separators=(",", ":")).encode("utf-8")


def decode_senml(data: bytes) -> MeasurementBatch:
    try:
        doc = json.loads(bytes(data).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(doc, list):
        raise MalformedJson("top level must be an array")
    if not doc:
        raise EmptyBatch("empty array")
    return MeasurementBatch([record_from_json(obj) for obj in doc])
