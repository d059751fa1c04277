"""Low-level primitives: AES-256-GCM, SHA hashes, ECDSA P-256, data keys, key wrapping."""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthenticationFailure, UnwrapFailure, WrongKeyLength

RandomBytes = Callable[[int], bytes]

KEY_BYTES = 32
IV_BYTES = 12
TAG_BYTES = 16
P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
FOREVER = 2**63 - 1


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def key_id(key_bytes: bytes) -> str:
    """Key identifier: lowercase hex SHA-1 of the 32 key bytes."""
    if len(key_bytes) != KEY_BYTES:
        raise WrongKeyLength(f"data keys are {KEY_BYTES} bytes, got {len(key_bytes)}")
    return hashlib.sha1(key_bytes).hexdigest()


def aes_gcm_encrypt(key: bytes, iv: bytes, plaintext: bytes, aad: bytes = b"") -> tuple[bytes, bytes]:
    """Returns ``(ciphertext, tag)``."""
    sealed = AESGCM(key).encrypt(iv, plaintext, aad or None)
    return sealed[:-TAG_BYTES], sealed[-TAG_BYTES:]


def aes_gcm_decrypt(key: bytes, iv: bytes, ciphertext: bytes, tag: bytes, aad: bytes = b"") -> bytes:
    if len(tag) != TAG_BYTES:
        raise AuthenticationFailure("tag has wrong length")
    try:
        return AESGCM(key).decrypt(iv, ciphertext + tag, aad or None)
    except InvalidTag:
        raise AuthenticationFailure("GCM tag mismatch") from None


@dataclass(frozen=True)
class DataKey:
    """A 256-bit data key valid over ``[start, end]`` (milliseconds, inclusive)."""

    material: bytes = field(repr=False)
    start: int = 0
    end: int = FOREVER

    def __post_init__(self) -> None:
        if len(self.material) != KEY_BYTES:
            raise WrongKeyLength(f"data keys are {KEY_BYTES} bytes, got {len(self.material)}")
        if self.start > self.end:
            raise ValueError("validity window start exceeds end")

    @property
    def kid(self) -> str:
        return key_id(self.material)

    @property
    def window(self) -> tuple[int, int]:
        return self.start, self.end

    def valid_at(self, time_ms: int) -> bool:
        return self.start <= time_ms <= self.end

    @classmethod
    def generate(cls, start: int = 0, end: int = FOREVER, rng: RandomBytes = os.urandom) -> "DataKey":
        return cls(rng(KEY_BYTES), start, end)


def _derive_private(rng: RandomBytes) -> ec.EllipticCurvePrivateKey:
    scalar = int.from_bytes(rng(32), "big") % (P256_ORDER - 1) + 1
    return ec.derive_private_key(scalar, ec.SECP256R1())


def _point_bytes(key: ec.EllipticCurvePublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)


_ECDSA = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)


def ecdsa_sign(private_key: ec.EllipticCurvePrivateKey, data: bytes) -> bytes:
    """ECDSA P-256 / SHA-256 with RFC 6979 nonces, as 64-byte ``r || s``."""
    r, s = decode_dss_signature(private_key.sign(data, _ECDSA))
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def ecdsa_verify(public_key: ec.EllipticCurvePublicKey, data: bytes, signature: bytes) -> bool:
    if len(signature) != 64:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    if not (0 < r < P256_ORDER and 0 < s < P256_ORDER):
        return False
    try:
        public_key.verify(encode_dss_signature(r, s), data, ec.ECDSA(hashes.SHA256()))
    except InvalidSignature:
        return False
    return True


@dataclass(frozen=True)
class SigningKeyPair:
    owner: str
    private_key: ec.EllipticCurvePrivateKey = field(repr=False, compare=False)

    @property
    def public_key(self) -> ec.EllipticCurvePublicKey:
        return self.private_key.public_key()

    def sign(self, data: bytes) -> bytes:
        return ecdsa_sign(self.private_key, data)

    @classmethod
    def generate(cls, owner: str, rng: Optional[RandomBytes] = None) -> "SigningKeyPair":
        if rng is None:
            return cls(owner, ec.generate_private_key(ec.SECP256R1()))
        return cls(owner, _derive_private(rng))

    def private_pem(self) -> str:
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        ).decode("ascii")

    @classmethod
    def from_private_pem(cls, owner: str, text: str) -> "SigningKeyPair":
        key = serialization.load_pem_private_key(text.encode("ascii"), password=None)
        if not isinstance(key, ec.EllipticCurvePrivateKey) or not isinstance(key.curve, ec.SECP256R1):
            raise ValueError("private key is not on P-256")
        return cls(owner, key)


class EciesP256Wrapper:
    """Wraps data keys for one recipient: ephemeral ECDH, HKDF-SHA-256, AES-256-GCM.

    Blob layout: ephemeral point (65 bytes, uncompressed) || nonce (12) ||
    ciphertext (32) || tag (16).
    """

    info = b"sensorcloud data key wrap"
    blob_size = 65 + IV_BYTES + KEY_BYTES + TAG_BYTES

    def _kek(self, shared: bytes, ephemeral: bytes, recipient: bytes) -> bytes:
        hkdf = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=self.info + ephemeral + recipient)
        return hkdf.derive(shared)

    def wrap(self, key: DataKey, recipient: ec.EllipticCurvePublicKey, rng: RandomBytes = os.urandom) -> bytes:
        ephemeral = _derive_private(rng)
        eph_point = _point_bytes(ephemeral.public_key())
        kek = self._kek(ephemeral.exchange(ec.ECDH(), recipient), eph_point, _point_bytes(recipient))
        nonce = rng(IV_BYTES)
        ciphertext, tag = aes_gcm_encrypt(kek, nonce, key.material, aad=eph_point)
        return eph_point + nonce + ciphertext + tag

    def unwrap(
        self,
        blob: bytes,
        recipient: ec.EllipticCurvePrivateKey,
        start: int = 0,
        end: int = FOREVER,
    ) -> DataKey:
        if len(blob) != self.blob_size:
            raise UnwrapFailure("wrapped key has wrong length")
        eph_point, rest = blob[:65], blob[65:]
        nonce, ciphertext, tag = rest[:IV_BYTES], rest[IV_BYTES:-TAG_BYTES], rest[-TAG_BYTES:]
        try:
            ephemeral = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), eph_point)
            shared = recipient.exchange(ec.ECDH(), ephemeral)
        except ValueError:
            raise UnwrapFailure("invalid ephemeral point") from None
        kek = self._kek(shared, eph_point, _point_bytes(recipient.public_key()))
        try:
            material = aes_gcm_decrypt(kek, nonce, ciphertext, tag, aad=eph_point)
        except AuthenticationFailure:
            raise UnwrapFailure("wrapped key does not authenticate") from None
        return DataKey(material, start, end)


DEFAULT_WRAPPER = EciesP256Wrapper()


def wrap_data_key(key: DataKey, recipient_public: ec.EllipticCurvePublicKey, rng: RandomBytes = os.urandom) -> bytes:
    return DEFAULT_WRAPPER.wrap(key, recipient_public, rng)


def unwrap_data_key(
    wrapped: bytes, recipient_private: ec.EllipticCurvePrivateKey, start: int = 0, end: int = FOREVER
) -> DataKey:
    return DEFAULT_WRAPPER.unwrap(wrapped, recipient_private, start, end)


# ------------------------------------------------------------------ nonces


class RandomNonces:
    """96-bit IVs from the OS CSPRNG."""

    def __call__(self) -> bytes:
        return os.urandom(IV_BYTES)


class CounterNonces:
    """Deterministic IVs: a 4-byte prefix followed by a 64-bit counter.

    Safe to share between threads; never repeats a value for a given prefix.
    """

    def __init__(self, prefix: bytes = b"\x00" * 4, start: int = 0) -> None:
        if len(prefix) != 4:
            raise ValueError("counter nonce prefix must be 4 bytes")
        self._prefix = prefix
        self._next = start
        self._lock = threading.Lock()

    def __call__(self) -> bytes:
        with self._lock:
            value = self._next
            self._next += 1
        return self._prefix + value.to_bytes(8, "big")


class RecordingNonces:
    """Wraps another nonce source and keeps every value it handed out."""

    def __init__(self, inner: Callable[[], bytes]) -> None:
        self.inner = inner
        self.issued: list[bytes] = []
        self._lock = threading.Lock()

    def __call__(self) -> bytes:
        value = self.inner()
        with self._lock:
            self.issued.append(value)
        return value

    def __iter__(self) -> Iterator[bytes]:
        return iter(list(self.issued))
