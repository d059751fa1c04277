"""Data-key lifecycle, access control lists, key stores and messages 400-403."""

from __future__ import annotations

import bisect
import os
import threading
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from cryptography.hazmat.primitives.asymmetric import ec

from .codec import base64url_decode, base64url_encode, pem_decode_public_key, pem_encode_public_key, public_keys_equal
from .errors import (
    DuplicateKid,
    InvalidEncoding,
    MixedValidity,
    NoValidKey,
    NotAuthorized,
    OverlappingValidity,
    UnknownEntity,
    UnknownKid,
    UnwrapFailure,
    WrongRecipient,
)
from .messages import DataKeyDownload, DataKeyUpload, KeyEntry, PublicKeyRequest, PublicKeyResponse
from .primitives import DataKey, RandomBytes, unwrap_data_key, wrap_data_key

WILDCARD = "*"
DAY_MS = 24 * 60 * 60 * 1000


# ------------------------------------------------------------------------ ACL


@dataclass(frozen=True)
class AclEntry:
    srv: str
    gw: str
    bn: str = WILDCARD
    n: str = WILDCARD
    sensitive: bool = True

    def __post_init__(self) -> None:
        for name in ("srv", "gw", "bn", "n"):
            if not getattr(self, name):
                raise ValueError(f"ACL field {name} must be non-empty")
        if self.srv == WILDCARD or self.gw == WILDCARD:
            raise ValueError("wildcards are allowed for bn and n only")

    def matches(self, gw: str, bn: str, n: Optional[str] = None) -> bool:
        """``n=None`` asks about the device as a whole (any sensor)."""
        return (
            self.gw == gw
            and self.bn in (WILDCARD, bn)
            and (n is None or self.n in (WILDCARD, n))
        )

    def to_line(self) -> str:
        return f"{self.srv} {self.gw} {self.bn} {self.n} {'sensitive' if self.sensitive else 'plain'}"


class Acl:
    """The data owner's access control list.

    File format: one entry per line, ``srv gw bn n [sensitive|plain]``, with
    ``*`` as wildcard for ``bn`` and ``n``. Blank lines and ``#`` comments are
    ignored; the flag defaults to ``sensitive``.
    """

    def __init__(self, entries: Iterable[AclEntry] = ()) -> None:
        self.entries: tuple[AclEntry, ...] = tuple(entries)

    def __iter__(self) -> Iterator[AclEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def without(self, entry: AclEntry) -> "Acl":
        return Acl(e for e in self.entries if e != entry)

    def authorized_services(self, gw: str, bn: str, n: Optional[str] = None) -> list[str]:
        return sorted({e.srv for e in self.entries if e.matches(gw, bn, n)})

    def is_authorized(self, srv: str, gw: str, bn: str, n: Optional[str] = None) -> bool:
        return any(e.srv == srv and e.matches(gw, bn, n) for e in self.entries)

    def is_sensitive(self, gw: str, bn: str, n: str) -> bool:
        return any(e.sensitive and e.matches(gw, bn, n) for e in self.entries)

    @classmethod
    def parse(cls, text: str) -> "Acl":
        entries = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ValueError(f"ACL line {lineno}: expected 'srv gw bn n [flag]'")
            sensitive = True
            if len(parts) == 5:
                if parts[4] not in ("sensitive", "plain"):
                    raise ValueError(f"ACL line {lineno}: flag must be 'sensitive' or 'plain'")
                sensitive = parts[4] == "sensitive"
            entries.append(AclEntry(*parts[:4], sensitive=sensitive))
        return cls(entries)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Acl":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        return "".join(entry.to_line() + "\n" for entry in self.entries)


def authorized_services(acl: Acl, gw: str, bn: str, n: str) -> list[str]:
    return acl.authorized_services(gw, bn, n)


# ------------------------------------------------------------------- key store


def rotation_window(time_ms: int, length_ms: int = DAY_MS) -> tuple[int, int]:
    """The fixed-length window containing ``time_ms``, bounds inclusive."""
    start = time_ms - time_ms % length_ms
    return start, start + length_ms - 1


class KeyStore:
    """Data keys by kid, indexed per ``(bn, n)`` stream by validity start.

    Windows of one stream never overlap, so a point in time selects at most
    one key. Readers and writers are serialized by one lock.
    """

    def __init__(self) -> None:
        self._by_kid: dict[str, DataKey] = {}
        self._index: dict[tuple[str, str], list[DataKey]] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._by_kid)

    def get(self, kid: str) -> Optional[DataKey]:
        return self._by_kid.get(kid)

    def __contains__(self, kid: object) -> bool:
        return kid in self._by_kid

    def streams(self) -> list[tuple[str, str]]:
        with self._lock:
            return sorted(self._index)

    def keys_for(self, bn: str, n: str) -> list[DataKey]:
        with self._lock:
            return list(self._index.get((bn, n), ()))

    def add(self, bn: str, n: str, key: DataKey) -> DataKey:
        with self._lock:
            keys = self._index.setdefault((bn, n), [])
            starts = [k.start for k in keys]
            pos = bisect.bisect_left(starts, key.start)
            neighbours = keys[max(pos - 1, 0) : pos + 1]
            for other in neighbours:
                if other.start <= key.end and key.start <= other.end:
                    raise OverlappingValidity(
                        f"window [{key.start},{key.end}] overlaps [{other.start},{other.end}] for ({bn},{n})"
                    )
            keys.insert(pos, key)
            self._by_kid[key.kid] = key
            return key

    def generate_data_key(
        self, bn: str, n: str, validity: tuple[int, int], rng: RandomBytes = os.urandom
    ) -> DataKey:
        start, end = validity
        if start > end:
            raise ValueError("validity start exceeds end")
        with self._lock:
            self._check_free(bn, n, start, end)
            return self.add(bn, n, DataKey.generate(start, end, rng))

    def _check_free(self, bn: str, n: str, start: int, end: int) -> None:
        for other in self._index.get((bn, n), ()):
            if other.start <= end and start <= other.end:
                raise OverlappingValidity(f"window [{start},{end}] overlaps an existing key for ({bn},{n})")

    def select_key(self, bn: str, n: str, time_ms: int) -> DataKey:
        with self._lock:
            keys = self._index.get((bn, n), [])
            pos = bisect.bisect_right([k.start for k in keys], time_ms)
            if pos and keys[pos - 1].end >= time_ms:
                return keys[pos - 1]
        raise NoValidKey(f"no key for ({bn},{n}) at {time_ms}", bn=bn, n=n, time=time_ms)

    def ensure_key(
        self, bn: str, n: str, time_ms: int, window_ms: int = DAY_MS, rng: RandomBytes = os.urandom
    ) -> DataKey:
        """Key covering ``time_ms``; creates one for the rotation window if needed.

        A fresh window is clipped against neighbouring keys so the
        non-overlap invariant survives irregular manual windows.
        """
        with self._lock:
            try:
                return self.select_key(bn, n, time_ms)
            except NoValidKey:
                pass
            start, end = rotation_window(time_ms, window_ms)
            for other in self._index.get((bn, n), ()):
                if other.end < time_ms:
                    start = max(start, other.end + 1)
                elif other.start > time_ms:
                    end = min(end, other.start - 1)
            return self.generate_data_key(bn, n, (start, end), rng)


# ------------------------------------------------------------- public keys


class PublicKeyDirectory(Mapping):
    """Entity id to P-256 public key; provisioned out of band."""

    def __init__(self, keys: Optional[dict[str, ec.EllipticCurvePublicKey]] = None) -> None:
        self._keys: dict[str, ec.EllipticCurvePublicKey] = dict(keys or {})
        self._lock = threading.Lock()

    def __getitem__(self, entity: str) -> ec.EllipticCurvePublicKey:
        return self._keys[entity]

    def __iter__(self):
        return iter(list(self._keys))

    def __len__(self) -> int:
        return len(self._keys)

    def register(self, entity: str, key: Union[str, ec.EllipticCurvePublicKey]) -> None:
        if isinstance(key, str):
            key = pem_decode_public_key(key)
        with self._lock:
            self._keys[entity] = key

    def pem(self, entity: str) -> str:
        try:
            return pem_encode_public_key(self._keys[entity])
        except KeyError:
            raise UnknownEntity(f"no public key for {entity!r}", id=entity) from None

    @classmethod
    def load_dir(cls, path: Union[str, Path]) -> "PublicKeyDirectory":
        """Every ``<entity>.pem`` file in ``path``."""
        directory = cls()
        for pem_file in sorted(Path(path).glob("*.pem")):
            directory.register(pem_file.stem, pem_file.read_text(encoding="ascii"))
        return directory


def answer_pubkey_request(req: PublicKeyRequest, directory: PublicKeyDirectory) -> PublicKeyResponse:
    return PublicKeyResponse.create(directory.pem(req.id))


# ----------------------------------------------------------- 400 / 401 flows


def build_key_upload(
    gw: str,
    srv: str,
    bn: str,
    entries: Sequence[tuple[str, DataKey]],
    recipient_pub: ec.EllipticCurvePublicKey,
    rng: RandomBytes = os.urandom,
    directory: Optional[Mapping] = None,
) -> DataKeyUpload:
    """One type-400 message carrying ``entries`` wrapped for ``srv``.

    All keys must share one validity window because the message has a single
    ``bt``; pass ``directory`` to check that ``recipient_pub`` really is ``srv``'s.
    """
    if not entries:
        raise ValueError("a key upload needs at least one entry")
    windows = {key.window for _, key in entries}
    if len(windows) != 1:
        raise MixedValidity("keys in one upload must share a validity window; split the upload")
    if directory is not None:
        registered = directory.get(srv)
        if registered is None or not public_keys_equal(registered, recipient_pub):
            raise WrongRecipient(f"recipient key does not belong to {srv!r}")
    wrapped = [
        KeyEntry(n=n, kid=key.kid, k=base64url_encode(wrap_data_key(key, recipient_pub, rng))) for n, key in entries
    ]
    return DataKeyUpload.create(gw, srv, windows.pop(), bn, wrapped)


def group_by_window(entries: Iterable[tuple[str, DataKey]]) -> list[list[tuple[str, DataKey]]]:
    groups: dict[tuple[int, int], list[tuple[str, DataKey]]] = {}
    for n, key in entries:
        groups.setdefault(key.window, []).append((n, key))
    return [groups[w] for w in sorted(groups)]


@dataclass(frozen=True)
class _StoredWrap:
    gw: str
    bn: str
    n: str
    window: tuple[int, int]
    upload: dict


class CloudKeyStore:
    """The cloud's view: wrapped key copies per ``(kid, srv)``, never plaintext."""

    def __init__(self) -> None:
        self._wraps: dict[tuple[str, str], _StoredWrap] = {}
        self._kids: set[str] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._wraps)

    def process_key_upload(self, msg: Union[DataKeyUpload, dict]) -> None:
        msg = msg if isinstance(msg, DataKeyUpload) else DataKeyUpload(msg)
        staged = {}
        for entry in msg.entries:
            record = _StoredWrap(msg.gw, msg.bn, entry.n, msg.window, msg.doc)
            with self._lock:
                previous = self._wraps.get((entry.kid, msg.srv))
            if previous is not None and (previous.gw, previous.bn, previous.n, previous.window) != (
                record.gw,
                record.bn,
                record.n,
                record.window,
            ):
                raise DuplicateKid(f"kid {entry.kid} already bound to a different stream", kid=entry.kid)
            staged[(entry.kid, msg.srv)] = record
        with self._lock:
            self._wraps.update(staged)
            self._kids.update(kid for kid, _ in staged)

    def answer_key_download(self, req: Union[DataKeyDownload, dict]) -> DataKeyUpload:
        """The stored (gateway-signed) upload that carries ``req.kid`` for ``req.srv``."""
        req = req if isinstance(req, DataKeyDownload) else DataKeyDownload(req)
        with self._lock:
            known = req.kid in self._kids
            record = self._wraps.get((req.kid, req.srv))
        if not known:
            raise UnknownKid(f"unknown kid {req.kid}", kid=req.kid)
        if record is None:
            raise NotAuthorized(f"no copy of {req.kid} wrapped for {req.srv}", kid=req.kid, srv=req.srv)
        if record.gw != req.gw:
            raise UnknownKid(f"kid {req.kid} is not managed by {req.gw}", kid=req.kid)
        return DataKeyUpload(record.upload)


class ServiceKeyring:
    """A service's unwrapped data keys (kid -> DataKey), filled from type-400 messages."""

    def __init__(self, srv: str, private_key: ec.EllipticCurvePrivateKey) -> None:
        self.srv = srv
        self._private = private_key
        self._keys: dict[str, DataKey] = {}
        self._streams: dict[str, tuple[str, str, str]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, kid: object) -> bool:
        return kid in self._keys

    def get(self, kid: str) -> Optional[DataKey]:
        return self._keys.get(kid)

    def stream_of(self, kid: str) -> Optional[tuple[str, str, str]]:
        return self._streams.get(kid)

    def kids(self) -> list[str]:
        return list(self._keys)

    def process_key_upload(self, msg: Union[DataKeyUpload, dict]) -> list[DataKey]:
        msg = msg if isinstance(msg, DataKeyUpload) else DataKeyUpload(msg)
        if msg.srv != self.srv:
            raise WrongRecipient(f"upload is addressed to {msg.srv!r}, not {self.srv!r}")
        start, end = msg.window
        unwrapped = []
        for entry in msg.entries:
            try:
                blob = base64url_decode(entry.k)
            except InvalidEncoding:
                raise UnwrapFailure("key material is not base64url") from None
            key = unwrap_data_key(blob, self._private, start, end)
            if key.kid != entry.kid:
                raise DuplicateKid(f"kid {entry.kid} does not match the wrapped key material", kid=entry.kid)
            unwrapped.append((entry, key))
        with self._lock:
            for entry, key in unwrapped:
                previous = self._keys.get(key.kid)
                if previous is not None and previous.material != key.material:
                    raise DuplicateKid(f"kid {key.kid} already bound to other material")
                self._keys[key.kid] = key
                self._streams[key.kid] = (msg.gw, msg.bn, entry.n)
        return [key for _, key in unwrapped]

