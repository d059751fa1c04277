"""Wire codec: JSON text in and out, the canonical signing form, base64url and PEM.

Documents are plain ``dict``/``list``/``str``/``int``/``bool`` trees. Python
dicts keep insertion order, which is what carries the layout order on the wire.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
from json.decoder import WHITESPACE as _WS, JSONArray, JSONObject, scanstring
from json.scanner import py_make_scanner
from typing import Any, Union

from cryptography.exceptions import UnsupportedAlgorithm
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

from .errors import InvalidEncoding, InvalidPem, MalformedJson

JsonDocument = Union[dict, list, str, int, bool]

_B64URL_RE = re.compile(r"[A-Za-z0-9_-]*")
_BOM = "\ufeff"


class _Reject(Exception):
    def __init__(self, reason: str, index: int) -> None:
        super().__init__(reason)
        self.reason = reason
        self.index = index


def _check_text(value: str, index: int) -> None:
    try:
        value.encode("utf-8")
    except UnicodeEncodeError:
        raise _Reject("lone surrogate in string", index) from None


def _checked(scan_once):
    def scan(string: str, idx: int):
        value, end = scan_once(string, idx)
        if value is None:
            raise _Reject("null is not a protocol value", idx)
        if isinstance(value, float):
            raise _Reject("floating point numbers are not protocol values", idx)
        if isinstance(value, int) and not isinstance(value, bool) and value < 0:
            raise _Reject("negative numbers are not protocol values", idx)
        if isinstance(value, str):
            _check_text(value, idx)
        return value, end

    return scan


def _name_offsets(text: str, start: int, scan_once) -> list[int]:
    """Index of every member name of the (already well-formed) object at ``start``."""
    offsets = []
    pos = _WS.match(text, start + 1).end()
    while text[pos] == '"':
        offsets.append(pos)
        _, pos = scanstring(text, pos + 1)
        pos = _WS.match(text, pos).end() + 1  # the colon
        _, pos = scan_once(text, _WS.match(text, pos).end())
        pos = _WS.match(text, pos).end()
        if text[pos] != ",":
            break
        pos = _WS.match(text, pos + 1).end()
    return offsets


def _parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
    text, start = s_and_end[0], s_and_end[1] - 1
    pairs, end = JSONObject(s_and_end, strict, _checked(scan_once), None, list, memo)
    doc: dict[str, Any] = {}
    for index, (name, value) in enumerate(pairs):
        if name in doc:
            raise _Reject(f"duplicate member {name!r}", _name_offsets(text, start, scan_once)[index])
        _check_text(name, start)
        doc[name] = value
    return doc, end


def _parse_array(s_and_end, scan_once):
    return JSONArray(s_and_end, _checked(scan_once))


def _make_decoder() -> json.JSONDecoder:
    decoder = json.JSONDecoder(strict=True)
    decoder.parse_object = _parse_object
    decoder.parse_array = _parse_array
    decoder.scan_once = _checked(py_make_scanner(decoder))
    return decoder


_DECODER = _make_decoder()


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8", "surrogatepass"))


def parse_wire(data: Union[str, bytes]) -> JsonDocument:
    """Parse protocol JSON, keeping member order.

    Raises MalformedJson (with a byte offset) on syntax errors, duplicate
    member names, invalid UTF-8, a byte-order mark, or values the protocol
    never uses (null, floats, negative numbers).
    """
    if isinstance(data, (bytes, bytearray)):
        if data.startswith(b"\xef\xbb\xbf"):
            raise MalformedJson("byte-order mark", 0)
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson("invalid UTF-8", exc.start) from None
    else:
        text = data
        if text.startswith(_BOM):
            raise MalformedJson("byte-order mark", 0)
    try:
        return _DECODER.decode(text)
    except _Reject as exc:
        raise MalformedJson(exc.reason, _byte_offset(text, exc.index)) from None
    except json.JSONDecodeError as exc:
        raise MalformedJson(exc.msg, _byte_offset(text, exc.pos)) from None
    except RecursionError:
        raise MalformedJson("nesting too deep", 0) from None


def encode_wire(doc: JsonDocument) -> str:
    """Compact JSON text with members in stored order."""
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def canonicalize(doc: JsonDocument) -> bytes:
    """Canonical signing form: members sorted by code point, no whitespace, UTF-8.

    Code point order on ``str`` is the same as byte order on the UTF-8
    encoding, so ``sort_keys`` yields the byte-wise ordering.
    """
    return json.dumps(
        doc, ensure_ascii=False, separators=(",", ":"), sort_keys=True, allow_nan=False
    ).encode("utf-8")


def base64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def base64url_decode(text: str) -> bytes:
    """Strict unpadded base64url; rejects padding, whitespace and non-zero trailing bits."""
    if not isinstance(text, str) or not _B64URL_RE.fullmatch(text):
        raise InvalidEncoding("illegal character in base64url text")
    if len(text) % 4 == 1:
        raise InvalidEncoding("impossible base64url length")
    try:
        data = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise InvalidEncoding(str(exc)) from None
    if base64url_encode(data) != text:
        raise InvalidEncoding("non-canonical trailing bits")
    return data


def pem_encode_public_key(key: ec.EllipticCurvePublicKey) -> str:
    return key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    ).decode("ascii")


def pem_decode_public_key(text: str) -> ec.EllipticCurvePublicKey:
    try:
        key = serialization.load_pem_public_key(text.encode("ascii"))
    except (ValueError, TypeError, UnsupportedAlgorithm, UnicodeEncodeError, AttributeError) as exc:
        raise InvalidPem(f"cannot load public key: {exc}") from None
    if not isinstance(key, ec.EllipticCurvePublicKey) or not isinstance(key.curve, ec.SECP256R1):
        raise InvalidPem("public key is not on P-256")
    return key


def public_keys_equal(a: ec.EllipticCurvePublicKey, b: ec.EllipticCurvePublicKey) -> bool:
    return a.public_numbers() == b.public_numbers()


def split_pointer(pointer: str) -> list[Union[str, int]]:
    """JSON Pointer (RFC 6901) to a list of steps; numeric steps become ints."""
    if pointer == "":
        return []
    if not pointer.startswith("/"):
        raise ValueError(f"JSON pointer must start with '/': {pointer!r}")
    steps: list[Union[str, int]] = []
    for raw in pointer[1:].split("/"):
        token = raw.replace("~1", "/").replace("~0", "~")
        steps.append(int(token) if token.isdigit() else token)
    return steps


def resolve(doc: JsonDocument, path) -> Any:
    if isinstance(path, str):
        path = split_pointer(path)
    node = doc
    for step in path:
        node = node[step]
    return node
