"""Field-level encryption (``ev`` arrays) and whole-message signatures (``sig``).

Encryption replaces one or more members of a single object (a *scope*) with an
``ev`` array holding one JWE-style element per member. Signing appends an empty
``sig`` object, canonicalizes, hashes with SHA-256, base64url-encodes the
digest and signs those ASCII bytes with ECDSA P-256/SHA-256.
"""

from __future__ import annotations

import copy
import enum
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence, Union

from cryptography.hazmat.primitives.asymmetric import ec

from .codec import (
    JsonDocument,
    base64url_decode,
    base64url_encode,
    canonicalize,
    parse_wire,
    resolve,
    split_pointer,
)
from .errors import (
    AlreadySigned,
    ExpiredKey,
    InvalidEncoding,
    MalformedEnvelope,
    MalformedJson,
    MalformedSignatureBlock,
    MissingField,
    MissingSignature,
    NonStringValue,
)
from .messages import Message
from .primitives import (
    IV_BYTES,
    TAG_BYTES,
    DataKey,
    RandomNonces,
    SigningKeyPair,
    aes_gcm_decrypt,
    aes_gcm_encrypt,
    ecdsa_verify,
    sha256,
)

ALG = "dir"
ENC = "AESGCM256"
SIG_ALG = "ES256"

NonceSource = Callable[[], bytes]
KeyResolver = Union[Callable[[str], Optional[DataKey]], Mapping[str, DataKey]]
Directory = Union[Callable[[str], Optional[ec.EllipticCurvePublicKey]], Mapping[str, ec.EllipticCurvePublicKey]]

_DEFAULT_NONCES = RandomNonces()


def _as_doc(doc: Union[Message, dict]) -> dict:
    return doc.doc if isinstance(doc, Message) else doc


def _lookup(source, name: str):
    if isinstance(source, Mapping):
        return source.get(name)
    return source(name)


def seal_value(name: str, plaintext: bytes, key: DataKey, nonces: NonceSource = _DEFAULT_NONCES) -> dict:
    """One ``ev`` element encrypting ``plaintext`` that stood under member ``name``."""
    iv = nonces()
    if len(iv) != IV_BYTES:
        raise ValueError(f"nonce source returned {len(iv)} bytes, need {IV_BYTES}")
    ciphertext, tag = aes_gcm_encrypt(key.material, iv, plaintext)
    return {
        "unprotected": {"alg": ALG, "enc": ENC, "kid": key.kid, "typ": name},
        "iv": base64url_encode(iv),
        "ciphertext": base64url_encode(ciphertext),
        "tag": base64url_encode(tag),
    }


def _plaintext(name: str, value: Any) -> bytes:
    if isinstance(value, str):
        return value.encode("utf-8")
    if name == "e" and isinstance(value, list):
        return canonicalize(value)
    raise NonStringValue(f"member {name!r} does not hold a string", field=name)


def encrypt_fields(
    doc: Union[Message, dict],
    scope: Union[str, Sequence[Union[str, int]]],
    field_names: Iterable[str],
    key: DataKey,
    nonces: NonceSource = _DEFAULT_NONCES,
    at: Optional[int] = None,
    allow_expired: bool = False,
) -> dict:
    """Encrypt ``field_names`` of the object at ``scope`` into one ``ev`` array.

    ``scope`` is a JSON pointer (``""`` for the top level, ``"/e/0"`` for the
    first reading) or an equivalent list of steps. The ``ev`` array takes the
    position of the first encrypted member; if the scope already has an ``ev``
    the new elements are appended to it. ``at`` is the time the data refers to;
    a key whose window ended before it is refused unless ``allow_expired``.
    """
    names = list(dict.fromkeys(field_names))
    if not names:
        raise ValueError("nothing to encrypt")
    if at is not None and at > key.end and not allow_expired:
        raise ExpiredKey(f"data key {key.kid} expired at {key.end}", kid=key.kid)
    out = copy.deepcopy(_as_doc(doc))
    steps = split_pointer(scope) if isinstance(scope, str) else list(scope)
    try:
        target = resolve(out, steps)
    except (KeyError, IndexError, TypeError):
        raise MissingField(f"scope {scope!r} does not exist") from None
    if not isinstance(target, dict):
        raise MissingField(f"scope {scope!r} is not an object")
    for name in names:
        if name in ("ev", "sig"):
            raise ValueError(f"member {name!r} cannot be encrypted")
        if name not in target:
            raise MissingField(f"member {name!r} missing in scope {scope!r}", field=name)
    existing = {el.get("unprotected", {}).get("typ") for el in target.get("ev", []) if isinstance(el, dict)}
    clash = existing.intersection(names)
    if clash:
        raise MalformedEnvelope(f"scope already holds encrypted {sorted(clash)}")

    ordered = [name for name in target if name in names]
    sealed = [seal_value(name, _plaintext(name, target[name]), key, nonces) for name in ordered]

    rebuilt: dict[str, Any] = {}
    placed = "ev" in target
    for name, value in target.items():
        if name in names:
            if not placed:
                rebuilt["ev"] = sealed
                placed = True
            continue
        if name == "ev":
            rebuilt["ev"] = list(value) + sealed
            continue
        rebuilt[name] = value
    target.clear()
    target.update(rebuilt)
    return out


def encrypt_readings_array(
    doc: Union[Message, dict],
    key: DataKey,
    nonces: NonceSource = _DEFAULT_NONCES,
    at: Optional[int] = None,
    allow_expired: bool = False,
) -> dict:
    """Replace the whole ``e`` array with a single ``ev`` element.

    Discouraged: sensor ids are hidden as well, so the cloud can no longer
    select readings by name and every reader must decrypt the whole array.
    """
    return encrypt_fields(doc, "", ["e"], key, nonces, at=at, allow_expired=allow_expired)


def _open_element(element: Any, key: DataKey) -> tuple[str, Any]:
    name, iv, ciphertext, tag = _element_parts(element)
    if len(iv) != IV_BYTES or len(tag) != TAG_BYTES:
        raise MalformedEnvelope("iv must be 12 bytes and tag 16 bytes")
    plaintext = aes_gcm_decrypt(key.material, iv, ciphertext, tag)
    if name == "e":
        try:
            value = parse_wire(plaintext)
        except MalformedJson as exc:
            raise MalformedEnvelope(f"encrypted readings array does not parse: {exc}") from None
        if not isinstance(value, list):
            raise MalformedEnvelope("encrypted readings array is not an array")
        return name, value
    try:
        return name, plaintext.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedEnvelope(f"plaintext of {name!r} is not UTF-8") from None


def _element_parts(element: Any) -> tuple[str, bytes, bytes, bytes]:
    if not isinstance(element, dict) or not isinstance(element.get("unprotected"), dict):
        raise MalformedEnvelope("ev element lacks an unprotected header")
    header = element["unprotected"]
    if header.get("alg") != ALG or header.get("enc") != ENC:
        raise MalformedEnvelope(f"unsupported alg/enc {header.get('alg')}/{header.get('enc')}")
    name = header.get("typ")
    if not isinstance(name, str) or not name or name == "ev":
        raise MalformedEnvelope("ev element names no field")
    try:
        return (
            name,
            base64url_decode(element["iv"]),
            base64url_decode(element["ciphertext"]),
            base64url_decode(element["tag"]),
        )
    except (KeyError, InvalidEncoding) as exc:
        raise MalformedEnvelope(f"bad binary field in ev element: {exc}") from None


def element_kid(element: Any) -> str:
    if not isinstance(element, dict) or not isinstance(element.get("unprotected"), dict):
        raise MalformedEnvelope("ev element lacks an unprotected header")
    kid = element["unprotected"].get("kid")
    if not isinstance(kid, str) or not kid:
        raise MalformedEnvelope("ev element has no kid")
    return kid


def encrypted_kids(doc: Union[Message, dict]) -> list[str]:
    """Every kid referenced by an ``ev`` element, in document order, without repeats."""
    found: dict[str, None] = {}

    def walk(node: Any) -> None:
        if isinstance(node, dict):
            for name, value in node.items():
                if name == "ev" and isinstance(value, list):
                    for element in value:
                        found.setdefault(element_kid(element))
                else:
                    walk(value)
        elif isinstance(node, list):
            for item in node:
                walk(item)

    walk(_as_doc(doc))
    return list(found)


def decrypt_message(doc: Union[Message, dict], resolver: KeyResolver) -> tuple[dict, list[str]]:
    """Decrypt every ``ev`` element whose kid resolves to a key.

    Returns the restored document and the kids that could not be resolved (their
    elements stay in place). A single failing tag rejects the whole message with
    AuthenticationFailure; the input document is never modified.
    """
    missing: dict[str, None] = {}

    def open_object(obj: dict) -> dict:
        if not isinstance(obj.get("ev"), list):
            return obj
        restored: list[tuple[str, Any]] = []
        kept: list[Any] = []
        for element in obj["ev"]:
            kid = element_kid(element)
            key = _lookup(resolver, kid)
            if key is None:
                missing.setdefault(kid)
                kept.append(element)
                continue
            restored.append(_open_element(element, key))
        rebuilt: dict[str, Any] = {}
        for name, value in obj.items():
            if name != "ev":
                rebuilt[name] = value
                continue
            for plain_name, plain_value in restored:
                if plain_name in obj:
                    raise MalformedEnvelope(f"member {plain_name!r} both encrypted and in plaintext")
                rebuilt[plain_name] = plain_value
            if kept:
                rebuilt["ev"] = kept
        return rebuilt

    def walk(node: Any) -> Any:
        if isinstance(node, dict):
            node = open_object(node)
            return {name: walk(value) for name, value in node.items()}
        if isinstance(node, list):
            return [walk(item) for item in node]
        return node

    restored_doc = walk(copy.deepcopy(_as_doc(doc)))
    return restored_doc, list(missing)


# ---------------------------------------------------------------- signatures


class VerificationResult(enum.Enum):
    VERIFIED = "Verified"
    BAD_SIGNATURE = "BadSignature"
    UNKNOWN_SIGNER = "UnknownSigner"


def signature_input(doc: Union[Message, dict]) -> bytes:
    """ASCII of base64url(SHA-256(canonical form with an empty ``sig``))."""
    body = {name: value for name, value in _as_doc(doc).items() if name != "sig"}
    body["sig"] = {}
    return base64url_encode(sha256(canonicalize(body))).encode("ascii")


def sign_message(
    doc: Union[Message, dict], keypair: SigningKeyPair, include_kid: Optional[bool] = None
) -> dict:
    """Append a single-signature ``sig`` block.

    The header names the signer with ``kid`` when the message has no ``gw``
    member; ``include_kid=True`` forces it (used by services, whose messages
    carry a ``gw`` that is not theirs).
    """
    body = _as_doc(doc)
    if "sig" in body:
        raise AlreadySigned("message already carries a sig member")
    header: dict[str, str] = {"alg": SIG_ALG}
    if include_kid or (include_kid is None and "gw" not in body):
        header["kid"] = keypair.owner
    signature = keypair.sign(signature_input(body))
    signed = copy.deepcopy(body)
    signed["sig"] = {"signatures": [{"header": header, "signature": base64url_encode(signature)}]}
    return signed


def _signature_entry(doc: dict) -> dict:
    if "sig" not in doc:
        raise MissingSignature("message carries no sig member")
    block = doc["sig"]
    if not isinstance(block, dict) or not isinstance(block.get("signatures"), list):
        raise MalformedSignatureBlock("sig has no signatures array")
    if len(block["signatures"]) != 1:
        raise MalformedSignatureBlock(f"expected one signature, found {len(block['signatures'])}")
    entry = block["signatures"][0]
    if not isinstance(entry, dict) or not isinstance(entry.get("header"), dict):
        raise MalformedSignatureBlock("signature entry has no header")
    if entry["header"].get("alg") != SIG_ALG:
        raise MalformedSignatureBlock(f"unsupported signature alg {entry['header'].get('alg')!r}")
    if not isinstance(entry.get("signature"), str):
        raise MalformedSignatureBlock("signature value is not a string")
    return entry


def signer_of(doc: Union[Message, dict]) -> str:
    """Entity whose key checks the signature: header ``kid`` if present, else ``gw``."""
    body = _as_doc(doc)
    entry = _signature_entry(body)
    signer = entry["header"].get("kid", body.get("gw"))
    if not isinstance(signer, str) or not signer:
        raise MalformedSignatureBlock("no gw member and no kid in the signature header")
    return signer


def verify_signature(doc: Union[Message, dict], directory: Directory) -> VerificationResult:
    body = _as_doc(doc)
    entry = _signature_entry(body)
    signer = signer_of(body)
    try:
        signature = base64url_decode(entry["signature"])
    except InvalidEncoding:
        raise MalformedSignatureBlock("signature is not base64url") from None
    public_key = _lookup(directory, signer)
    if public_key is None:
        return VerificationResult.UNKNOWN_SIGNER
    if ecdsa_verify(public_key, signature_input(body), signature):
        return VerificationResult.VERIFIED
    return VerificationResult.BAD_SIGNATURE
