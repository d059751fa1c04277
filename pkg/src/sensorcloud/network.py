"""In-memory transport between protocol nodes, and the node base class.

The network is lossless and ordered: one global FIFO, so per-sender order is
preserved. Every payload is a wire-encoded transmission header. Errors a node
wants to report back to a sender travel as transport-level notifications,
because the protocol has no error message type of its own.
"""

from __future__ import annotations

import logging
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Union

from cryptography.hazmat.primitives.asymmetric import ec

from .codec import encode_wire, parse_wire, pem_decode_public_key
from .envelope import VerificationResult, sign_message, signer_of, verify_signature
from .errors import (
    InvalidHeader,
    InvalidPem,
    MalformedJson,
    MalformedSignatureBlock,
    MissingSignature,
    SensorCloudError,
    UnknownDestination,
    UnknownMessageType,
    UnsupportedVersion,
)
from .messages import (
    Message,
    MessageType,
    PublicKeyRequest,
    PublicKeyResponse,
    batch,
    unbatch,
)
from .primitives import SigningKeyPair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Delivery:
    index: int
    src: str
    dst: str
    text: str

    def to_dict(self) -> dict:
        return {"index": self.index, "src": self.src, "dst": self.dst, "bytes": self.text}


@dataclass(frozen=True)
class Notification:
    src: str
    dst: str
    report: dict

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "report": self.report}


class SimNetwork:
    """Registry of nodes, FIFO delivery queue and a complete delivery log."""

    def __init__(self) -> None:
        self._nodes: dict[str, "Node"] = {}
        self._queue: deque[Delivery] = deque()
        self.log: list[Delivery] = []
        self.notifications: list[Notification] = []
        self._lock = threading.Lock()
        self._running = False

    def register(self, node: "Node") -> "Node":
        if node.entity in self._nodes:
            raise ValueError(f"entity {node.entity!r} already registered")
        self._nodes[node.entity] = node
        node.network = self
        return node

    def __contains__(self, entity: object) -> bool:
        return entity in self._nodes

    def node(self, entity: str) -> "Node":
        try:
            return self._nodes[entity]
        except KeyError:
            raise UnknownDestination(f"no node registered as {entity!r}", dst=entity) from None

    @property
    def entities(self) -> list[str]:
        return list(self._nodes)

    def deliver(self, src: str, dst: str, header_text: str) -> None:
        if dst not in self._nodes:
            raise UnknownDestination(f"no node registered as {dst!r}", dst=dst)
        try:
            doc = parse_wire(header_text)
        except MalformedJson as exc:
            raise InvalidHeader(f"payload is not JSON: {exc}") from None
        if not isinstance(doc, dict) or "ver" not in doc:
            raise InvalidHeader("payload is not a transmission header")
        with self._lock:
            delivery = Delivery(len(self.log), src, dst, header_text)
            self.log.append(delivery)
            self._queue.append(delivery)

    def inbox(self, entity: str) -> list[Delivery]:
        with self._lock:
            return [d for d in self._queue if d.dst == entity]

    def pending(self) -> int:
        return len(self._queue)

    def notify(self, src: str, dst: str, report: dict) -> None:
        note = Notification(src, dst, report)
        with self._lock:
            self.notifications.append(note)
        if dst in self._nodes:
            self._nodes[dst].on_notification(note)

    def _next_delivery(self, rng: Optional[random.Random]) -> Delivery:
        if rng is None:
            return self._queue.popleft()
        # any link may go next, but each (src, dst) link stays FIFO
        heads: dict[tuple[str, str], int] = {}
        for index, delivery in enumerate(self._queue):
            heads.setdefault((delivery.src, delivery.dst), index)
        index = rng.choice(list(heads.values()))
        delivery = self._queue[index]
        del self._queue[index]
        return delivery

    def step(self, rng: Optional[random.Random] = None) -> bool:
        with self._lock:
            if not self._queue:
                return False
            delivery = self._next_delivery(rng)
        node = self._nodes[delivery.dst]
        try:
            messages = unbatch(parse_wire(delivery.text))
        except (UnsupportedVersion, InvalidHeader, UnknownMessageType, MalformedJson) as exc:
            log.info("dropped delivery %d to %s: %s", delivery.index, delivery.dst, exc)
            self.notify(delivery.dst, delivery.src, {**exc.to_dict(), "delivery": delivery.index})
            return True
        node.receive(delivery.src, messages)
        return True

    def run(self, limit: int = 1_000_000, rng: Optional[random.Random] = None) -> int:
        """Process queued deliveries until the queue is empty.

        With ``rng`` the next delivery is drawn at random among the links
        that have traffic queued, so links interleave arbitrarily while each
        link keeps its order. Re-entrant calls (a handler pumping the
        network) return immediately; the outer loop keeps draining.
        """
        if self._running:
            return 0
        self._running = True
        processed = 0
        try:
            while processed < limit and self.step(rng):
                processed += 1
        finally:
            self._running = False
        return processed

    def count(self, typ: int, src: Optional[str] = None, dst: Optional[str] = None) -> int:
        """How many payloads of message type ``typ`` went over the wire."""
        total = 0
        for delivery in self.log:
            if (src and delivery.src != src) or (dst and delivery.dst != dst):
                continue
            doc = parse_wire(delivery.text)
            total += sum(1 for m in doc.get("pl", []) if isinstance(m, dict) and m.get("typ") == str(typ))
        return total


def required_signer(doc: dict) -> Optional[str]:
    """Who must have signed a message of this type, or None if anyone registered may."""
    typ = doc.get("typ")
    if typ in ("2", "4", "401"):
        return doc.get("srv")
    if typ == "402":
        return None
    return doc.get("gw")


class Node:
    """Base class for protocol nodes attached to a SimNetwork.

    Subclasses implement ``handle(src, message)``; replies go through
    ``reply``/``send`` and are batched per destination while a header is
    being processed.
    """

    def __init__(self, entity: str, keypair: Optional[SigningKeyPair] = None, cloud: str = "cloud") -> None:
        self.entity = entity
        self.keypair = keypair
        self.cloud = cloud
        self.network: Optional[SimNetwork] = None
        self.diagnostics: list[dict] = []
        self.public_keys: dict[str, ec.EllipticCurvePublicKey] = {}
        self._fetching: deque[str] = deque()
        self._key_waiters: dict[str, list[Callable[[Optional[ec.EllipticCurvePublicKey]], None]]] = {}
        self._outbox: Optional[list[tuple[str, dict]]] = None

    # -- sending

    def sign(self, msg: Union[Message, dict], include_kid: Optional[bool] = None) -> dict:
        if self.keypair is None:
            raise ValueError(f"{self.entity} has no signing key")
        return sign_message(msg, self.keypair, include_kid=include_kid)

    def send(self, dst: str, messages: Iterable[Union[Message, dict]]) -> None:
        docs = [m.doc if isinstance(m, Message) else m for m in messages]
        if not docs:
            return
        if self._outbox is not None:
            self._outbox.extend((dst, d) for d in docs)
            return
        if self.network is None:
            raise UnknownDestination(f"{self.entity} is not attached to a network")
        self.network.deliver(self.entity, dst, encode_wire(batch(docs).to_doc()))

    def _flush_outbox(self, outbox: list[tuple[str, dict]]) -> None:
        grouped: dict[str, list[dict]] = {}
        for dst, doc in outbox:
            grouped.setdefault(dst, []).append(doc)
        for dst, docs in grouped.items():
            try:
                self.send(dst, docs)
            except UnknownDestination as exc:
                self.report(exc, dst=dst)

    # -- receiving

    def receive(self, src: str, messages: list[Message]) -> None:
        outer = self._outbox is None
        if outer:
            self._outbox = []
        try:
            for message in messages:
                try:
                    self.handle(src, message)
                except SensorCloudError as exc:
                    self.on_error(src, message, exc)
        finally:
            if outer:
                outbox, self._outbox = self._outbox, None
                self._flush_outbox(outbox)

    def handle(self, src: str, message: Message) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def on_error(self, src: str, message: Message, exc: SensorCloudError) -> None:
        self.report(exc, src=src, typ=message.doc.get("typ"))

    def on_notification(self, note: Notification) -> None:
        self.diagnostics.append({"notification": note.report, "from": note.src})
        report = note.report
        if report.get("typ") == str(int(MessageType.PUBLIC_KEY_REQUEST)) and "id" in report:
            self._public_key_failed(report["id"])

    def report(self, exc: SensorCloudError, **context: Any) -> None:
        entry = {**exc.to_dict(), **{k: v for k, v in context.items() if v is not None}}
        self.diagnostics.append(entry)
        log.debug("%s: %s", self.entity, entry)

    # -- public keys (402/403), correlated in FIFO order because 403 has no id

    def with_public_key(self, entity: str, callback: Callable[[Optional[ec.EllipticCurvePublicKey]], None]) -> None:
        if entity in self.public_keys:
            callback(self.public_keys[entity])
            return
        self._key_waiters.setdefault(entity, []).append(callback)
        if entity not in self._fetching:
            self._fetching.append(entity)
            self.send(self.cloud, [self.sign(PublicKeyRequest.create(entity))])

    def request_public_keys(self, entities: Iterable[str]) -> None:
        for entity in entities:
            self.with_public_key(entity, lambda key: None)

    def _on_public_key_response(self, message: PublicKeyResponse) -> None:
        if not self._fetching:
            self.diagnostics.append({"error": "UnexpectedResponse", "typ": "403"})
            return
        entity = self._fetching.popleft()
        try:
            key = pem_decode_public_key(message.key)
        except InvalidPem as exc:
            self.report(exc, id=entity)
            key = None
        if key is not None:
            self.public_keys[entity] = key
        for callback in self._key_waiters.pop(entity, []):
            callback(key)

    def _public_key_failed(self, entity: str) -> None:
        if entity in self._fetching:
            self._fetching.remove(entity)
        for callback in self._key_waiters.pop(entity, []):
            callback(None)

    def check_signature(self, doc: dict, key: Optional[ec.EllipticCurvePublicKey]) -> VerificationResult:
        """Verify ``doc`` against ``key`` after checking the signer fits the message role."""
        try:
            signer = signer_of(doc)
        except (MissingSignature, MalformedSignatureBlock):
            return VerificationResult.BAD_SIGNATURE
        expected = required_signer(doc)
        if expected is not None and signer != expected:
            return VerificationResult.BAD_SIGNATURE
        if key is None:
            return VerificationResult.UNKNOWN_SIGNER
        try:
            return verify_signature(doc, {signer: key})
        except (MissingSignature, MalformedSignatureBlock):
            return VerificationResult.BAD_SIGNATURE


@dataclass
class NodeClock:
    """Injectable millisecond clock; scenarios move it forward explicitly."""

    now: int = 0

    def __call__(self) -> int:
        return self.now

    def advance_to(self, time_ms: int) -> None:
        if time_ms < self.now:
            raise ValueError("clock cannot go backwards")
        self.now = time_ms
