"""The gateway: the trust boundary between a sensor network and the cloud.

It buffers plaintext readings, turns them into signed data items with
sensitive values encrypted under per-stream data keys, distributes those
keys wrapped for each authorized service, and enforces the ACL on actuator
commands coming back from the cloud.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Callable, Iterable, Mapping, Optional

from .envelope import NonceSource, VerificationResult, encrypt_fields
from .errors import (
    BadSignature,
    DuplicateReading,
    EmptyBuffer,
    InvalidSchemaText,
    UnexpectedMessage,
    UnknownActuator,
    UnknownEntity,
    UnknownFunction,
)
from .keys import DAY_MS, Acl, KeyStore, build_key_upload, group_by_window
from .messages import (
    ActuatorCommand,
    ActuatorResponse,
    ConfigurationMessage,
    DataKeyUpload,
    Message,
    PublicKeyResponse,
    SensorDataMessage,
    SensorReading,
    sort_readings,
)
from .network import Node, NodeClock
from .primitives import DataKey, RandomBytes, RandomNonces, SigningKeyPair

ActuatorFunction = Callable[[str, list[tuple[str, str]]], Iterable[tuple[str, str]]]

ERR = "err"


class GatewayNode(Node):
    """A gateway with its signing key, data-key store, ACL and simulated actuators.

    ``actuators`` maps device ids to parameter tables; ``functions`` maps
    ``fn`` names to callables taking ``(bn, params)`` and returning ``(n, sv)``
    result pairs.
    """

    def __init__(
        self,
        entity: str,
        keypair: SigningKeyPair,
        acl: Optional[Acl] = None,
        clock: Optional[NodeClock] = None,
        rng: RandomBytes = os.urandom,
        nonces: Optional[NonceSource] = None,
        rotation_ms: int = DAY_MS,
        cloud: str = "cloud",
        auto_rotate: bool = False,
    ) -> None:
        super().__init__(entity, keypair, cloud)
        self.acl = acl if acl is not None else Acl()
        self.clock = clock if clock is not None else NodeClock()
        self.rng = rng
        self.nonces = nonces if nonces is not None else RandomNonces()
        self.rotation_ms = rotation_ms
        self.auto_rotate = auto_rotate
        self.keystore = KeyStore()
        self.actuators: dict[str, dict[str, str]] = {}
        self.functions: dict[str, ActuatorFunction] = {}
        self.actuations: list[tuple[str, str, list[tuple[str, str]]]] = []
        self._buffers: dict[str, dict[tuple[str, int], str]] = {}
        self._buffer_lock = threading.Lock()
        self._distributed: set[tuple[str, str]] = set()

    # -- readings and data items

    def ingest_reading(self, bn: str, n: str, t_abs_ms: int, value: str) -> None:
        if not bn or not n:
            raise ValueError("device and sensor ids must be non-empty")
        if t_abs_ms < 0:
            raise ValueError("reading time must be non-negative")
        with self._buffer_lock:
            buffer = self._buffers.setdefault(bn, {})
            if (n, t_abs_ms) in buffer:
                raise DuplicateReading(f"reading ({n!r}, {t_abs_ms}) already buffered for {bn!r}", bn=bn, n=n)
            buffer[(n, t_abs_ms)] = value

    def buffered(self, bn: str) -> int:
        with self._buffer_lock:
            return len(self._buffers.get(bn, ()))

    def devices(self) -> list[str]:
        with self._buffer_lock:
            return [bn for bn, buffer in self._buffers.items() if buffer]

    def is_sensitive(self, bn: str, n: str) -> bool:
        return self.acl.is_sensitive(self.entity, bn, n)

    def rotate_keys(self, at: Optional[int] = None) -> list[DataKey]:
        """Make sure every sensitive stream has a key covering ``at`` and every buffered reading.

        Streams come from buffered readings and from ACL entries naming a
        concrete device and sensor. Returns the keys created.
        """
        at = self.clock() if at is None else at
        wanted: dict[tuple[str, str], set[int]] = {}
        for entry in self.acl:
            if entry.sensitive and entry.gw == self.entity and "*" not in (entry.bn, entry.n):
                wanted.setdefault((entry.bn, entry.n), set()).add(at)
        with self._buffer_lock:
            for bn, buffer in self._buffers.items():
                for n, t in buffer:
                    if self.is_sensitive(bn, n):
                        wanted.setdefault((bn, n), set()).add(t)
        created = []
        for (bn, n), times in sorted(wanted.items()):
            for t in sorted(times):
                before = len(self.keystore)
                key = self.keystore.ensure_key(bn, n, t, self.rotation_ms, self.rng)
                if len(self.keystore) > before:
                    created.append(key)
        return created

    def flush_device(self, bn: str) -> SensorDataMessage:
        """Build, encrypt, sign and upload one data item from the buffer of ``bn``."""
        with self._buffer_lock:
            buffer = dict(self._buffers.get(bn, {}))
        if not buffer:
            raise EmptyBuffer(f"no buffered readings for {bn!r}", bn=bn)
        if self.auto_rotate:
            for n, t in buffer:
                if self.is_sensitive(bn, n):
                    self.keystore.ensure_key(bn, n, t, self.rotation_ms, self.rng)
        bt = min(t for _, t in buffer)
        readings = sort_readings(
            SensorReading(n=n, sv=value, t=(t - bt) or None) for (n, t), value in buffer.items()
        )
        doc = SensorDataMessage.create(self.entity, bn, bt, readings).doc
        for index, reading in enumerate(readings):
            if self.is_sensitive(bn, reading.n):
                at = bt + (reading.t or 0)
                key = self.keystore.select_key(bn, reading.n, at)
                doc = encrypt_fields(doc, f"/e/{index}", ["sv"], key, self.nonces, at=at)
        signed = SensorDataMessage(self.sign(doc))
        with self._buffer_lock:
            current = self._buffers.get(bn, {})
            for slot in buffer:
                current.pop(slot, None)
        if self.network is not None:
            self.send(self.cloud, [signed])
        return signed

    def flush_all(self) -> list[SensorDataMessage]:
        return [self.flush_device(bn) for bn in self.devices()]

    # -- key distribution

    def _key_plan(self) -> dict[tuple[str, str], list[tuple[str, DataKey]]]:
        """Keys each (service, device) pair should hold but has not been sent yet."""
        plan: dict[tuple[str, str], list[tuple[str, DataKey]]] = {}
        for bn, n in self.keystore.streams():
            if not self.is_sensitive(bn, n):
                continue
            for srv in self.acl.authorized_services(self.entity, bn, n):
                for key in self.keystore.keys_for(bn, n):
                    if (srv, key.kid) not in self._distributed:
                        plan.setdefault((srv, bn), []).append((n, key))
        return plan

    def distribute_keys(self) -> list[DataKeyUpload]:
        """Upload every not-yet-distributed key, wrapped for each authorized service.

        One type-400 message goes out per (service, device, validity window).
        Public keys of services are fetched from the cloud when not cached.
        Uploads for services whose key cannot be obtained are skipped and
        reported with UnknownEntity after the others have been sent.
        """
        plan = self._key_plan()
        needed = sorted({srv for srv, _ in plan if srv not in self.public_keys})
        if needed:
            self.request_public_keys(needed)
            if self.network is not None:
                self.network.run()
        uploads: list[DataKeyUpload] = []
        missing: list[str] = []
        for (srv, bn), entries in sorted(plan.items()):
            recipient = self.public_keys.get(srv)
            if recipient is None:
                if srv not in missing:
                    missing.append(srv)
                continue
            for group in group_by_window(entries):
                upload = build_key_upload(self.entity, srv, bn, group, recipient, self.rng)
                uploads.append(DataKeyUpload(self.sign(upload)))
                self._distributed.update((srv, key.kid) for _, key in group)
        if uploads and self.network is not None:
            self.send(self.cloud, uploads)
        if missing:
            raise UnknownEntity(f"no public key for {', '.join(missing)}", id=missing)
        return uploads

    # -- configuration

    def emit_configuration(self, bn: str, schema_text: str) -> ConfigurationMessage:
        try:
            json.loads(schema_text)
        except (TypeError, ValueError) as exc:
            raise InvalidSchemaText(f"device description is not JSON text: {exc}", bn=bn) from None
        signed = ConfigurationMessage(self.sign(ConfigurationMessage.create(self.entity, bn, schema_text)))
        if self.network is not None:
            self.send(self.cloud, [signed])
        return signed

    # -- actuators

    def register_actuator(self, bn: str, parameters: Optional[Mapping[str, str]] = None) -> None:
        self.actuators[bn] = dict(parameters or {})

    def register_function(self, fn: str, function: ActuatorFunction) -> None:
        self.functions[fn] = function

    def execute(self, cmd: ActuatorCommand) -> list[tuple[str, str]]:
        """Run an authorized command; raises UnknownActuator or UnknownFunction."""
        if cmd.bn not in self.actuators:
            raise UnknownActuator(f"no actuator {cmd.bn!r}", bn=cmd.bn)
        params = cmd.params
        if cmd.fn is not None:
            function = self.functions.get(cmd.fn)
            if function is None:
                raise UnknownFunction(f"no function {cmd.fn!r}", fn=cmd.fn)
            results = [(str(n), str(sv)) for n, sv in function(cmd.bn, params) or ()]
        else:
            self.actuators[cmd.bn].update(params)
            results = []
        self.actuations.append((cmd.srv, cmd.bn, params))
        return results

    def handle_actuator_command(self, cmd: ActuatorCommand) -> Optional[ActuatorResponse]:
        """Authorize and execute ``cmd``; the signed response, or None when no seq was given.

        Refusals and failures are answered with an error array
        ``[{"n": "err", "sv": reason}]`` and leave every actuator untouched.
        """
        if not self.acl.is_authorized(cmd.srv, self.entity, cmd.bn):
            results = [(ERR, "unauthorized")]
        else:
            try:
                results = self.execute(cmd)
            except UnknownActuator:
                results = [(ERR, "unknown actuator")]
            except UnknownFunction:
                results = [(ERR, "unknown function")]
        if cmd.seq is None:
            return None
        return ActuatorResponse(self.sign(ActuatorResponse.answering(cmd, results)))

    # -- inbound traffic

    def handle(self, src: str, message: Message) -> None:
        if isinstance(message, PublicKeyResponse):
            self._on_public_key_response(message)
        elif isinstance(message, ActuatorCommand):
            self._on_command(src, message)
        else:
            raise UnexpectedMessage(f"gateway does not accept type {message.doc.get('typ')}")

    def _on_command(self, src: str, cmd: ActuatorCommand) -> None:
        if cmd.gw != self.entity:
            raise UnexpectedMessage(f"command addressed to {cmd.gw!r}", gw=cmd.gw)

        def verified(key) -> None:
            result = self.check_signature(cmd.doc, key)
            if result is not VerificationResult.VERIFIED:
                self.report(BadSignature(f"command signature: {result.value}"), src=src, typ="4", seq=cmd.seq)
                return
            response = self.handle_actuator_command(cmd)
            if response is not None:
                self.send(self.cloud, [response])

        self.with_public_key(cmd.srv, verified)
