"""Typed views over protocol messages, the transmission header, and validation.

A message is held as its wire document (a ``dict`` in layout order, numbers as
decimal strings). The classes here add typed accessors and constructors on top
of that document; the document itself is what gets encrypted, signed and sent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, ClassVar, Iterable, Mapping, Optional, Sequence, Union

from .codec import base64url_decode, pem_decode_public_key
from .errors import (
    DuplicateReading,
    EmptyBatch,
    InvalidEncoding,
    InvalidHeader,
    InvalidPem,
    UnknownMessageType,
    UnsupportedVersion,
)

PROTOCOL_VERSION = 1
_COUNT_RE = re.compile(r"0|[1-9][0-9]*")


def num(value: int) -> str:
    """Render a protocol number the way the wire layouts show it."""
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"protocol numbers are non-negative integers, got {value!r}")
    return str(value)


def parse_num(text: Any) -> int:
    if isinstance(text, str) and _COUNT_RE.fullmatch(text):
        return int(text)
    raise ValueError(f"not a protocol number: {text!r}")


def is_num(text: Any) -> bool:
    return isinstance(text, str) and _COUNT_RE.fullmatch(text) is not None


class MessageType(IntEnum):
    SENSOR_DATA = 1
    SENSOR_DATA_REQUEST = 2
    CONFIGURATION = 3
    ACTUATOR_COMMAND = 4
    ACTUATOR_RESPONSE = 5
    DATA_KEY_UPLOAD = 400
    DATA_KEY_DOWNLOAD = 401
    PUBLIC_KEY_REQUEST = 402
    PUBLIC_KEY_RESPONSE = 403


@dataclass(frozen=True)
class SensorReading:
    n: str
    sv: Optional[str] = None
    t: Optional[int] = None

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {"n": self.n}
        if self.t is not None:
            doc["t"] = num(self.t)
        if self.sv is not None:
            doc["sv"] = self.sv
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "SensorReading":
        t = doc.get("t")
        return cls(n=doc["n"], sv=doc.get("sv"), t=None if t is None else parse_num(t))


def reading_key(reading: Union[SensorReading, Mapping]) -> tuple[bytes, int]:
    """Ordering key: sensor id byte-wise, then time offset; absent t counts as 0."""
    if isinstance(reading, SensorReading):
        return reading.n.encode("utf-8"), reading.t or 0
    t = reading.get("t")
    return reading["n"].encode("utf-8"), 0 if t is None else parse_num(t)


def sort_readings(readings: Iterable[SensorReading]) -> list[SensorReading]:
    readings = list(readings)
    seen: set[tuple[bytes, int]] = set()
    for reading in readings:
        key = reading_key(reading)
        if key in seen:
            raise DuplicateReading(f"duplicate (n,t) = ({reading.n!r}, {key[1]})")
        seen.add(key)
    return sorted(readings, key=reading_key)


class Message:
    """Base view. Subclasses set ``typ`` and ``layout`` (wire member order)."""

    typ: ClassVar[MessageType]
    layout: ClassVar[tuple[str, ...]]
    registry: ClassVar[dict[int, type["Message"]]] = {}

    __slots__ = ("doc",)

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        if "typ" in cls.__dict__:
            Message.registry[int(cls.typ)] = cls

    def __init__(self, doc: dict) -> None:
        self.doc = doc

    @staticmethod
    def from_doc(doc: Any) -> "Message":
        if isinstance(doc, Message):
            return doc
        if not isinstance(doc, dict) or not is_num(doc.get("typ")):
            raise UnknownMessageType("message has no numeric typ")
        cls = Message.registry.get(parse_num(doc["typ"]))
        if cls is None:
            raise UnknownMessageType(f"unknown message type {doc['typ']}", typ=doc["typ"])
        return cls(doc)

    @classmethod
    def _build(cls, **members: Any) -> dict:
        doc: dict[str, Any] = {"typ": num(int(cls.typ))}
        for name in cls.layout[1:]:
            value = members.get(name)
            if value is not None:
                doc[name] = value
        return doc

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Message) and self.doc == other.doc

    def __hash__(self) -> int:
        return hash(json.dumps(self.doc, sort_keys=True))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.doc!r})"

    @property
    def gw(self) -> Optional[str]:
        return self.doc.get("gw")

    @property
    def signed(self) -> bool:
        return "sig" in self.doc


class SensorDataMessage(Message):
    typ = MessageType.SENSOR_DATA
    layout = ("typ", "gw", "bn", "bt", "e")

    @classmethod
    def create(cls, gw: str, bn: str, bt: int, readings: Iterable[SensorReading]) -> "SensorDataMessage":
        """Readings are put in (n, t) order; a repeated (n, t) raises DuplicateReading."""
        return cls(cls._build(gw=gw, bn=bn, bt=num(bt), e=[r.to_doc() for r in sort_readings(readings)]))

    @property
    def bn(self) -> str:
        return self.doc["bn"]

    @property
    def bt(self) -> int:
        return parse_num(self.doc["bt"])

    @property
    def readings(self) -> list[SensorReading]:
        return [SensorReading.from_doc(r) for r in self.doc.get("e", [])]

    def reading_names(self) -> frozenset[str]:
        """Names visible without decryption (empty when the whole array is sealed)."""
        entries = self.doc.get("e")
        if not isinstance(entries, list):
            return frozenset()
        return frozenset(r["n"] for r in entries if isinstance(r, dict) and isinstance(r.get("n"), str))


class SensorDataRequest(Message):
    typ = MessageType.SENSOR_DATA_REQUEST
    layout = ("typ", "gw", "srv", "lim", "off", "bt", "bn", "e")

    @classmethod
    def create(
        cls,
        gw: str,
        srv: str,
        bt: Sequence[int] = (),
        bn: Sequence[str] = (),
        names: Sequence[str] = (),
        lim: Optional[int] = None,
        off: Optional[int] = None,
    ) -> "SensorDataRequest":
        return cls(
            cls._build(
                gw=gw,
                srv=srv,
                lim=None if lim is None else num(lim),
                off=None if off is None else num(off),
                bt=[num(t) for t in bt],
                bn=list(bn),
                e=[{"n": n} for n in names],
            )
        )

    @property
    def srv(self) -> str:
        return self.doc["srv"]

    @property
    def lim(self) -> Optional[int]:
        return None if "lim" not in self.doc else parse_num(self.doc["lim"])

    @property
    def off(self) -> int:
        return parse_num(self.doc.get("off", "0"))

    @property
    def bt(self) -> list[int]:
        return [parse_num(t) for t in self.doc.get("bt", [])]

    @property
    def bn(self) -> list[str]:
        return list(self.doc.get("bn", []))

    @property
    def names(self) -> list[str]:
        return [entry["n"] for entry in self.doc.get("e", [])]


class ConfigurationMessage(Message):
    typ = MessageType.CONFIGURATION
    layout = ("typ", "gw", "bn", "js")

    @classmethod
    def create(cls, gw: str, bn: str, js: str) -> "ConfigurationMessage":
        return cls(cls._build(gw=gw, bn=bn, js=js))

    @property
    def bn(self) -> str:
        return self.doc["bn"]

    @property
    def js(self) -> Optional[str]:
        return self.doc.get("js")


def _params(pairs: Union[Mapping[str, str], Iterable[tuple[str, str]]]) -> list[dict]:
    items = pairs.items() if isinstance(pairs, Mapping) else pairs
    return [{"n": n, "sv": sv} for n, sv in items]


class _Actuator(Message):
    @property
    def srv(self) -> str:
        return self.doc["srv"]

    @property
    def bn(self) -> str:
        return self.doc["bn"]

    @property
    def seq(self) -> Optional[int]:
        return None if "seq" not in self.doc else parse_num(self.doc["seq"])

    @property
    def fn(self) -> Optional[str]:
        return self.doc.get("fn")

    @property
    def params(self) -> list[tuple[str, str]]:
        return [(entry["n"], entry["sv"]) for entry in self.doc.get("e", [])]


class ActuatorCommand(_Actuator):
    typ = MessageType.ACTUATOR_COMMAND
    layout = ("typ", "gw", "srv", "bn", "seq", "fn", "e")

    @classmethod
    def create(
        cls,
        gw: str,
        srv: str,
        bn: str,
        params: Union[Mapping[str, str], Iterable[tuple[str, str]]] = (),
        seq: Optional[int] = None,
        fn: Optional[str] = None,
    ) -> "ActuatorCommand":
        return cls(
            cls._build(gw=gw, srv=srv, bn=bn, seq=None if seq is None else num(seq), fn=fn, e=_params(params))
        )


class ActuatorResponse(_Actuator):
    typ = MessageType.ACTUATOR_RESPONSE
    layout = ("typ", "gw", "srv", "bn", "seq", "fn", "e")

    @classmethod
    def create(
        cls,
        gw: str,
        srv: str,
        bn: str,
        seq: int,
        results: Union[Mapping[str, str], Iterable[tuple[str, str]]] = (),
        fn: Optional[str] = None,
    ) -> "ActuatorResponse":
        return cls(cls._build(gw=gw, srv=srv, bn=bn, seq=num(seq), fn=fn, e=_params(results)))

    @classmethod
    def answering(cls, command: ActuatorCommand, results=()) -> "ActuatorResponse":
        """Copy gw, srv, bn, seq and fn (only if present) from ``command``."""
        if command.seq is None:
            raise ValueError("command carries no seq, so no response can be matched to it")
        return cls.create(command.gw, command.srv, command.bn, command.seq, results, fn=command.fn)


@dataclass(frozen=True)
class KeyEntry:
    n: str
    kid: str
    k: str


class DataKeyUpload(Message):
    typ = MessageType.DATA_KEY_UPLOAD
    layout = ("typ", "gw", "srv", "bt", "bn", "e")

    @classmethod
    def create(
        cls, gw: str, srv: str, bt: tuple[int, int], bn: str, entries: Iterable[KeyEntry]
    ) -> "DataKeyUpload":
        return cls(
            cls._build(
                gw=gw,
                srv=srv,
                bt=[num(bt[0]), num(bt[1])],
                bn=bn,
                e=[{"n": e.n, "kid": e.kid, "k": e.k} for e in entries],
            )
        )

    @property
    def srv(self) -> str:
        return self.doc["srv"]

    @property
    def bn(self) -> str:
        return self.doc["bn"]

    @property
    def window(self) -> tuple[int, int]:
        start, end = self.doc["bt"]
        return parse_num(start), parse_num(end)

    @property
    def entries(self) -> list[KeyEntry]:
        return [KeyEntry(e["n"], e["kid"], e["k"]) for e in self.doc["e"]]


class DataKeyDownload(Message):
    typ = MessageType.DATA_KEY_DOWNLOAD
    layout = ("typ", "gw", "srv", "kid")

    @classmethod
    def create(cls, gw: str, srv: str, kid: str) -> "DataKeyDownload":
        return cls(cls._build(gw=gw, srv=srv, kid=kid))

    @property
    def srv(self) -> str:
        return self.doc["srv"]

    @property
    def kid(self) -> str:
        return self.doc["kid"]


class PublicKeyRequest(Message):
    typ = MessageType.PUBLIC_KEY_REQUEST
    layout = ("typ", "id")

    @classmethod
    def create(cls, entity: str) -> "PublicKeyRequest":
        return cls(cls._build(id=entity))

    @property
    def id(self) -> str:
        return self.doc["id"]


class PublicKeyResponse(Message):
    typ = MessageType.PUBLIC_KEY_RESPONSE
    layout = ("typ", "key")

    @classmethod
    def create(cls, pem: str) -> "PublicKeyResponse":
        return cls(cls._build(key=pem))

    @property
    def key(self) -> str:
        return self.doc["key"]


@dataclass(frozen=True)
class TransmissionHeader:
    ver: int
    seq: int
    pl: tuple[Message, ...]

    def to_doc(self) -> dict:
        return {"ver": num(self.ver), "seq": num(self.seq), "pl": [m.doc for m in self.pl]}


def batch(msgs: Iterable[Union[Message, dict]], seq: int = 0) -> TransmissionHeader:
    msgs = tuple(Message.from_doc(m) for m in msgs)
    if not msgs:
        raise EmptyBatch("a transmission header needs at least one message")
    if seq != 0:
        raise ValueError("header seq is reserved and must be 0")
    return TransmissionHeader(ver=PROTOCOL_VERSION, seq=seq, pl=msgs)


def unbatch(header: Union[TransmissionHeader, dict]) -> list[Message]:
    if isinstance(header, TransmissionHeader):
        doc = header.to_doc()
    else:
        doc = header
    if not isinstance(doc, dict) or not is_num(doc.get("ver")):
        raise InvalidHeader("header has no numeric ver")
    if parse_num(doc["ver"]) != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"unsupported version {doc['ver']}", ver=doc["ver"])
    if doc.get("seq") != "0":
        raise InvalidHeader("header seq must be 0")
    payload = doc.get("pl")
    if not isinstance(payload, list) or not payload:
        raise InvalidHeader("header pl must be a non-empty array")
    return [Message.from_doc(m) for m in payload]


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str

    def __str__(self) -> str:
        return f"{self.path or '/'}: {self.rule}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, path: str, rule: str) -> None:
        self.violations.append(Violation(path, rule))

    def warn(self, path: str, rule: str) -> None:
        self.warnings.append(Violation(path, rule))

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [{"path": v.path, "rule": v.rule} for v in self.violations],
            "warnings": [{"path": v.path, "rule": v.rule} for v in self.warnings],
        }


def _is_id(value: Any) -> bool:
    return isinstance(value, str) and value != ""


def _check_b64(value: Any, size: Optional[int] = None) -> Optional[str]:
    if not isinstance(value, str):
        return "not a base64url string"
    try:
        raw = base64url_decode(value)
    except InvalidEncoding:
        return "invalid base64url"
    if size is not None and len(raw) != size:
        return f"must decode to {size} bytes"
    return None


def _kind_check(kind: str, value: Any, path: str, report: ValidationReport) -> None:
    if kind == "id":
        if not _is_id(value):
            report.add(path, "must be a non-empty string")
    elif kind == "text":
        if not isinstance(value, str):
            report.add(path, "must be a string")
    elif kind == "count":
        if not is_num(value):
            report.add(path, "must be a decimal number string")
    elif kind == "positive":
        if not is_num(value) or parse_num(value) == 0:
            report.add(path, "must be a positive decimal number string")
    elif kind == "json_text":
        if not isinstance(value, str):
            report.add(path, "must be a string")
        else:
            try:
                json.loads(value)
            except ValueError:
                report.add(path, "must be valid JSON text")
    elif kind == "pem":
        if not isinstance(value, str):
            report.add(path, "must be a string")
            return
        try:
            pem_decode_public_key(value)
        except InvalidPem:
            report.add(path, "must be a PEM-encoded P-256 public key")
    elif kind == "b64":
        problem = _check_b64(value)
        if problem:
            report.add(path, problem)
    elif kind == "times":
        _check_time_list(value, path, report, exact=False)
    elif kind == "window":
        _check_time_list(value, path, report, exact=True)
    elif kind == "id_list":
        if not isinstance(value, list):
            report.add(path, "must be an array")
        else:
            for i, item in enumerate(value):
                if not _is_id(item):
                    report.add(f"{path}/{i}", "must be a non-empty string")
    elif kind in _ARRAY_KINDS:
        _check_entries(kind, value, path, report)
    else:  # pragma: no cover - table bug
        raise AssertionError(kind)


def _check_time_list(value: Any, path: str, report: ValidationReport, exact: bool) -> None:
    if not isinstance(value, list):
        report.add(path, "must be an array")
        return
    if exact and len(value) != 2:
        report.add(path, "must be of length two")
    elif len(value) > 2:
        report.add(path, "at most two time bounds")
    if not all(is_num(v) for v in value):
        report.add(path, "time bounds must be decimal number strings")
    elif len(value) == 2 and parse_num(value[0]) > parse_num(value[1]):
        report.add(path, "lower bound exceeds upper bound")


_READING_FIELDS = {"n": ("id", True), "t": ("count", False), "sv": ("text", True)}
_NAME_FIELDS = {"n": ("id", True)}
_PARAM_FIELDS = {"n": ("id", True), "sv": ("text", True)}
_KEY_ENTRY_FIELDS = {"n": ("id", True), "kid": ("id", True), "k": ("b64", True)}

_ARRAY_KINDS = {
    "readings": (_READING_FIELDS, True, True),
    "names": (_NAME_FIELDS, False, False),
    "params": (_PARAM_FIELDS, False, False),
    "key_entries": (_KEY_ENTRY_FIELDS, True, False),
}


def _check_entries(kind: str, value: Any, path: str, report: ValidationReport) -> None:
    fields, non_empty, ordered = _ARRAY_KINDS[kind]
    if not isinstance(value, list):
        report.add(path, "must be an array")
        return
    if non_empty and not value:
        report.add(path, "must not be empty")
    for i, entry in enumerate(value):
        _check_object(entry, fields, f"{path}/{i}", report, ordered=ordered)
    if kind == "readings":
        _check_reading_order(value, path, report)


def _check_reading_order(entries: list, path: str, report: ValidationReport) -> None:
    keys = []
    for entry in entries:
        if not isinstance(entry, dict) or not _is_id(entry.get("n")):
            return
        t = entry.get("t", "0")
        if not is_num(t):
            return
        keys.append((entry["n"].encode("utf-8"), parse_num(t)))
    if len(set(keys)) != len(keys):
        report.add(path, "duplicate (n,t)")
    elif keys != sorted(keys):
        report.add(path, "readings not sorted by (n, t)")


def _check_ev(value: Any, path: str, report: ValidationReport) -> set[str]:
    """Validate one ev array; returns the field names it stands in for."""
    covered: set[str] = set()
    if not isinstance(value, list) or not value:
        report.add(path, "ev must be a non-empty array")
        return covered
    for i, element in enumerate(value):
        where = f"{path}/{i}"
        if not isinstance(element, dict):
            report.add(where, "ev element must be an object")
            continue
        header = element.get("unprotected")
        if not isinstance(header, dict):
            report.add(f"{where}/unprotected", "missing JWE header")
        else:
            if header.get("alg") != "dir":
                report.add(f"{where}/unprotected/alg", "alg must be dir")
            if header.get("enc") != "AESGCM256":
                report.add(f"{where}/unprotected/enc", "enc must be AESGCM256")
            if not _is_id(header.get("kid")):
                report.add(f"{where}/unprotected/kid", "must be a non-empty string")
            inner = header.get("typ")
            if not _is_id(inner) or inner == "ev":
                report.add(f"{where}/unprotected/typ", "must name the encrypted field")
            elif inner in covered:
                report.add(f"{where}/unprotected/typ", f"field {inner!r} encrypted twice in one scope")
            else:
                covered.add(inner)
        for name, size in (("iv", 12), ("ciphertext", None), ("tag", 16)):
            problem = _check_b64(element.get(name), size)
            if problem:
                report.add(f"{where}/{name}", problem)
        for name in element:
            if name not in ("unprotected", "iv", "ciphertext", "tag"):
                report.warn(f"{where}/{name}", "unknown member")
    return covered


def _check_object(
    obj: Any,
    fields: Mapping[str, tuple[str, bool]],
    path: str,
    report: ValidationReport,
    ordered: bool = False,
    top_level: bool = False,
) -> None:
    if not isinstance(obj, dict):
        report.add(path, "must be an object")
        return
    covered: set[str] = set()
    if "ev" in obj and "ev" not in fields:
        covered = _check_ev(obj["ev"], f"{path}/ev", report)
    for name, value in obj.items():
        if name in fields:
            if name in covered:
                report.add(f"{path}/{name}", "present both in plaintext and in ev")
            _kind_check(fields[name][0], value, f"{path}/{name}", report)
        elif name == "ev" or (name == "sig" and top_level):
            continue
        else:
            report.warn(f"{path}/{name}", "unknown member")
    for name, (_, required) in fields.items():
        if required and name not in obj and name not in covered:
            report.add(f"{path}/{name}", "missing required field")
    if ordered:
        present = [name for name in obj if name in fields]
        if present != [name for name in fields if name in obj]:
            report.add(path, "members out of layout order")


_TYPE_FIELDS: dict[int, dict[str, tuple[str, bool]]] = {
    1: {"gw": ("id", True), "bn": ("id", True), "bt": ("count", True), "e": ("readings", True)},
    2: {
        "gw": ("id", True),
        "srv": ("id", True),
        "lim": ("positive", False),
        "off": ("count", False),
        "bt": ("times", False),
        "bn": ("id_list", False),
        "e": ("names", False),
    },
    3: {"gw": ("id", True), "bn": ("id", True), "js": ("json_text", True)},
    4: {
        "gw": ("id", True),
        "srv": ("id", True),
        "bn": ("id", True),
        "seq": ("count", False),
        "fn": ("id", False),
        "e": ("params", True),
    },
    5: {
        "gw": ("id", True),
        "srv": ("id", True),
        "bn": ("id", True),
        "seq": ("count", True),
        "fn": ("id", False),
        "e": ("params", True),
    },
    400: {
        "gw": ("id", True),
        "srv": ("id", True),
        "bt": ("window", True),
        "bn": ("id", True),
        "e": ("key_entries", True),
    },
    401: {"gw": ("id", True), "srv": ("id", True), "kid": ("id", True)},
    402: {"id": ("id", True)},
    403: {"key": ("pem", True)},
}

# the sensor data layout carries a MUST on member order
_ORDERED_TYPES = {1}


def _check_sig(doc: dict, path: str, report: ValidationReport) -> None:
    block = doc["sig"]
    where = f"{path}/sig"
    if not isinstance(block, dict) or not isinstance(block.get("signatures"), list):
        report.add(where, "sig must hold a signatures array")
        return
    signatures = block["signatures"]
    if len(signatures) != 1:
        report.add(f"{where}/signatures", "exactly one signature")
        return
    entry = signatures[0]
    if not isinstance(entry, dict) or not isinstance(entry.get("header"), dict):
        report.add(f"{where}/signatures/0", "signature entry needs a header")
        return
    header = entry["header"]
    if header.get("alg") != "ES256":
        report.add(f"{where}/signatures/0/header/alg", "alg must be ES256")
    if "kid" in header and not _is_id(header["kid"]):
        report.add(f"{where}/signatures/0/header/kid", "must be a non-empty string")
    if "gw" not in doc and "kid" not in header:
        report.add(f"{where}/signatures/0/header", "kid required when the message has no gw")
    problem = _check_b64(entry.get("signature"), 64)
    if problem:
        report.add(f"{where}/signatures/0/signature", problem)


def _validate_payload(doc: Any, path: str, report: ValidationReport) -> None:
    if not isinstance(doc, dict):
        report.add(path, "message must be an object")
        return
    typ = doc.get("typ")
    if not is_num(typ):
        report.add(f"{path}/typ", "missing or non-numeric typ")
        return
    fields = _TYPE_FIELDS.get(parse_num(typ))
    if fields is None:
        report.add(f"{path}/typ", f"unknown message type {typ}")
        return
    if next(iter(doc)) != "typ" and parse_num(typ) in _ORDERED_TYPES:
        report.add(path, "members out of layout order")
    _check_object(
        {k: v for k, v in doc.items() if k != "typ"},
        fields,
        path,
        report,
        ordered=parse_num(typ) in _ORDERED_TYPES,
        top_level=True,
    )
    if "sig" in doc:
        _check_sig(doc, path, report)


def validate(msg: Union[Message, dict]) -> ValidationReport:
    """Check one message against its layout; never raises."""
    report = ValidationReport()
    _validate_payload(msg.doc if isinstance(msg, Message) else msg, "", report)
    return report


def validate_header(doc: Any) -> ValidationReport:
    report = ValidationReport()
    if isinstance(doc, TransmissionHeader):
        doc = doc.to_doc()
    if not isinstance(doc, dict):
        report.add("", "header must be an object")
        return report
    ver = doc.get("ver")
    if not is_num(ver):
        report.add("/ver", "missing or non-numeric ver")
    elif parse_num(ver) != PROTOCOL_VERSION:
        report.add("/ver", "unsupported version")
    if doc.get("seq") != "0":
        report.add("/seq", "seq must be 0")
    payload = doc.get("pl")
    if not isinstance(payload, list) or not payload:
        report.add("/pl", "pl must be a non-empty array")
        payload = []
    for name in doc:
        if name not in ("ver", "seq", "pl"):
            report.warn(f"/{name}", "unknown member")
    for i, message in enumerate(payload):
        _validate_payload(message, f"/pl/{i}", report)
    return report
