"""A cloud service: queries data items, fetches data keys, verifies and decrypts, drives actuators.

Every delivered data item runs through the same pipeline: the gateway's
public key is obtained (type 402/403 when uncached), the signature is
verified, data keys for unknown kids are downloaded (type 401, answered with
a type 400), and only then is anything decrypted.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .envelope import VerificationResult, decrypt_message, encrypted_kids
from .errors import (
    AuthenticationFailure,
    BadSignature,
    InconsistentEcho,
    KeyDownloadFailed,
    MalformedEnvelope,
    SensorCloudError,
    UnexpectedMessage,
    UnmatchedResponse,
)
from .keys import ServiceKeyring
from .messages import (
    ActuatorCommand,
    ActuatorResponse,
    DataKeyDownload,
    DataKeyUpload,
    Message,
    MessageType,
    PublicKeyResponse,
    SensorDataMessage,
    SensorDataRequest,
)
from .network import Node, Notification
from .primitives import SigningKeyPair


@dataclass
class QueryResult:
    """One delivered data item: the signed original, the decrypted view, and kids left sealed."""

    original: dict
    plaintext: dict
    undecrypted: list[str]

    @property
    def gw(self) -> str:
        return self.original["gw"]

    def values(self) -> dict[tuple[str, int], str]:
        """Decrypted or plain ``sv`` by (sensor name, absolute time)."""
        bt = int(self.plaintext["bt"])
        out = {}
        for reading in self.plaintext.get("e", []):
            if isinstance(reading, dict) and "sv" in reading:
                out[(reading["n"], bt + int(reading.get("t", "0")))] = reading["sv"]
        return out


@dataclass
class _PendingItem:
    doc: dict
    waiting: set[str] = field(default_factory=set)


class ServiceNode(Node):
    def __init__(self, entity: str, keypair: SigningKeyPair, cloud: str = "cloud") -> None:
        super().__init__(entity, keypair, cloud)
        self.keyring = ServiceKeyring(entity, keypair.private_key)
        self.results: list[QueryResult] = []
        self.pending: dict[int, ActuatorCommand] = {}
        self.responses: list[tuple[ActuatorCommand, ActuatorResponse]] = []
        self.trace: list[tuple] = []
        self._seq = itertools.count(1)
        self._command_lock = threading.Lock()
        self._items: list[_PendingItem] = []
        self._requested: set[str] = set()
        self._failed: set[str] = set()
        self._learned_kids: set[str] = set()

    # -- queries

    def query(
        self,
        gw_or_request: Union[str, SensorDataRequest],
        bt: Iterable[int] = (),
        bn: Iterable[str] = (),
        names: Iterable[str] = (),
        lim: Optional[int] = None,
        off: Optional[int] = None,
    ) -> list[QueryResult]:
        """Send a type-2 request, let the network settle, return the processed items."""
        if isinstance(gw_or_request, SensorDataRequest):
            request = gw_or_request
        else:
            request = SensorDataRequest.create(gw_or_request, self.entity, list(bt), list(bn), list(names), lim, off)
        if request.srv != self.entity:
            raise ValueError(f"request names {request.srv!r}, not this service")
        first = len(self.results)
        self._failed.clear()
        self.send(self.cloud, [self.sign(request, include_kid=True)])
        if self.network is not None:
            self.network.run()
        self._finish_waiting()
        return self.results[first:]

    def _on_item(self, message: SensorDataMessage) -> None:
        index = len(self.trace)
        self.trace.append(("received", index))

        def verified(key) -> None:
            result = self.check_signature(message.doc, key)
            self.trace.append(("verify", index, result.value))
            if result is not VerificationResult.VERIFIED:
                self.report(BadSignature(f"data item discarded: {result.value}"), gw=message.gw, bt=message.bt)
                return
            try:
                kids = encrypted_kids(message.doc)
            except MalformedEnvelope as exc:
                self.report(exc, gw=message.gw)
                return
            self._learned_kids.update(kids)
            item = _PendingItem(message.doc)
            for kid in kids:
                if kid in self.keyring or kid in self._failed:
                    continue
                item.waiting.add(kid)
                if kid not in self._requested:
                    self._requested.add(kid)
                    download = DataKeyDownload.create(message.gw, self.entity, kid)
                    self.trace.append(("download", kid))
                    self.send(self.cloud, [self.sign(download, include_kid=True)])
            self._items.append(item)
            self._advance()

        self.with_public_key(message.gw, verified)

    def _advance(self) -> None:
        ready = [item for item in self._items if not item.waiting]
        self._items = [item for item in self._items if item.waiting]
        for item in ready:
            self._decrypt(item.doc)

    def _decrypt(self, doc: dict) -> None:
        self.trace.append(("decrypt", doc.get("gw"), doc.get("bt")))
        try:
            plaintext, missing = decrypt_message(doc, self.keyring.get)
        except (AuthenticationFailure, MalformedEnvelope) as exc:
            self.report(exc, gw=doc.get("gw"), bt=doc.get("bt"))
            return
        self.results.append(QueryResult(doc, plaintext, missing))

    def _resolve_kid(self, kid: str, failed: bool) -> None:
        self._requested.discard(kid)
        if failed:
            self._failed.add(kid)
            self.report(KeyDownloadFailed(f"data key {kid} could not be downloaded", kid=kid))
        for item in self._items:
            item.waiting.discard(kid)
        self._advance()

    def _finish_waiting(self) -> None:
        for kid in sorted({kid for item in self._items for kid in item.waiting}):
            self._resolve_kid(kid, failed=True)

    def _on_key_upload(self, upload: DataKeyUpload) -> None:
        def verified(key) -> None:
            result = self.check_signature(upload.doc, key)
            if result is not VerificationResult.VERIFIED:
                self.report(BadSignature(f"key upload discarded: {result.value}"), gw=upload.gw)
                for entry in upload.entries:
                    if entry.kid in self._requested:
                        self._resolve_kid(entry.kid, failed=True)
                return
            try:
                keys = self.keyring.process_key_upload(upload)
            except SensorCloudError as exc:
                self.report(exc, gw=upload.gw, typ="400")
                keys = []
            learned = {key.kid for key in keys}
            self._learned_kids.update(learned)
            for entry in upload.entries:
                if entry.kid in self._requested:
                    self._resolve_kid(entry.kid, failed=entry.kid not in learned)

        self.with_public_key(upload.gw, verified)

    # -- actuators

    def send_command(
        self,
        gw: str,
        bn: str,
        params: Union[Mapping[str, str], Iterable[tuple[str, str]]] = (),
        fn: Optional[str] = None,
        expect_response: bool = True,
    ) -> Optional[int]:
        """Emit a signed type-4 command; returns its seq when a response is expected."""
        if not gw or not bn:
            raise ValueError("gateway and actuator ids must be non-empty")
        with self._command_lock:
            seq = next(self._seq) if expect_response else None
            command = ActuatorCommand.create(gw, self.entity, bn, params, seq=seq, fn=fn)
            if seq is not None:
                self.pending[seq] = command
        self.send(self.cloud, [self.sign(command, include_kid=True)])
        return seq

    def receive_response(self, resp: ActuatorResponse) -> ActuatorCommand:
        """Match ``resp`` to its pending command by seq and check the copied fields."""
        with self._command_lock:
            command = self.pending.get(resp.seq) if resp.seq is not None else None
            if command is None:
                raise UnmatchedResponse(f"no pending command with seq {resp.seq}", seq=resp.seq)
            for name in ("gw", "srv", "bn", "fn"):
                if command.doc.get(name) != resp.doc.get(name):
                    raise InconsistentEcho(
                        f"response {name} {resp.doc.get(name)!r} differs from command {command.doc.get(name)!r}",
                        seq=resp.seq,
                        field=name,
                    )
            del self.pending[resp.seq]
        self.responses.append((command, resp))
        return command

    def _on_response(self, resp: ActuatorResponse) -> None:
        def verified(key) -> None:
            result = self.check_signature(resp.doc, key)
            if result is not VerificationResult.VERIFIED:
                self.report(BadSignature(f"actuator response discarded: {result.value}"), seq=resp.seq)
                return
            try:
                self.receive_response(resp)
            except SensorCloudError as exc:
                self.report(exc, typ="5")

        self.with_public_key(resp.gw, verified)

    # -- dispatch

    def handle(self, src: str, message: Message) -> None:
        if isinstance(message, SensorDataMessage):
            self._on_item(message)
        elif isinstance(message, DataKeyUpload):
            self._on_key_upload(message)
        elif isinstance(message, PublicKeyResponse):
            self._on_public_key_response(message)
        elif isinstance(message, ActuatorResponse):
            self._on_response(message)
        else:
            raise UnexpectedMessage(f"service does not accept type {message.doc.get('typ')}")

    def on_notification(self, note: Notification) -> None:
        super().on_notification(note)
        report = note.report
        if report.get("typ") == str(int(MessageType.DATA_KEY_DOWNLOAD)) and report.get("kid") in self._requested:
            self._resolve_kid(report["kid"], failed=True)

    def emitted_kids(self) -> set[str]:
        """Kids this service has put into type-401 requests (for audits)."""
        return {entry[1] for entry in self.trace if entry[0] == "download"}

    def learned_kids(self) -> set[str]:
        return set(self._learned_kids)
