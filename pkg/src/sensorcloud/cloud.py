"""The cloud: stores signed data items, answers queries, relays keys, routes actuator traffic."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from .codec import encode_wire, parse_wire
from .envelope import VerificationResult
from .errors import (
    BadSignature,
    SensorCloudError,
    UnknownDestination,
    ValidationFailure,
)
from .keys import WILDCARD, Acl, CloudKeyStore, PublicKeyDirectory, answer_pubkey_request
from .messages import (
    ActuatorCommand,
    ActuatorResponse,
    ConfigurationMessage,
    DataKeyDownload,
    DataKeyUpload,
    Message,
    MessageType,
    PublicKeyRequest,
    SensorDataMessage,
    SensorDataRequest,
    batch,
    unbatch,
    validate,
)
from .network import Node, required_signer

INFINITY = float("inf")


@dataclass(frozen=True)
class StoredItem:
    seq: int
    wire: str
    gw: str
    bn: str
    bt: int
    names: frozenset[str]

    @property
    def doc(self) -> dict:
        return parse_wire(self.wire)


@dataclass(frozen=True)
class QueryPlan:
    """A normalized sensor data request."""

    srv: str
    gw: str
    lo: int = 0
    hi: Union[int, float] = INFINITY
    bn: frozenset[str] = frozenset()
    n: frozenset[str] = frozenset()
    lim: Optional[int] = None
    off: int = 0

    @classmethod
    def from_request(cls, req: Union[SensorDataRequest, dict]) -> "QueryPlan":
        req = req if isinstance(req, SensorDataRequest) else SensorDataRequest(req)
        bounds = req.bt
        lo = bounds[0] if bounds else 0
        hi = bounds[1] if len(bounds) == 2 else INFINITY
        return cls(
            srv=req.srv,
            gw=req.gw,
            lo=lo,
            hi=hi,
            bn=frozenset(req.bn),
            n=frozenset(req.names),
            lim=req.lim,
            off=req.off,
        )


def _item_authorized(item: StoredItem, plan: QueryPlan, acl: Acl) -> bool:
    names = item.names & plan.n if plan.n else item.names
    if names:
        return any(acl.is_authorized(plan.srv, item.gw, item.bn, n) for n in names)
    # readings hidden by whole-array encryption: only a sensor wildcard grants access
    return any(
        e.srv == plan.srv and e.gw == item.gw and e.bn in (WILDCARD, item.bn) and e.n == WILDCARD for e in acl
    )


def evaluate_query(
    req: Union[SensorDataRequest, dict, QueryPlan], items: Iterable[StoredItem], acl: Acl
) -> list[StoredItem]:
    """Filter by gateway, time range, devices, sensor names and ACL; sort; page.

    Order is (bt, bn, insertion sequence). ``off`` items are skipped and at
    most ``lim`` returned; items are always returned whole.
    """
    plan = req if isinstance(req, QueryPlan) else QueryPlan.from_request(req)
    selected = [
        item
        for item in items
        if item.gw == plan.gw
        and plan.lo <= item.bt <= plan.hi
        and (not plan.bn or item.bn in plan.bn)
        and (not plan.n or item.names & plan.n)
        and _item_authorized(item, plan, acl)
    ]
    selected.sort(key=lambda item: (item.bt, item.bn, item.seq))
    end = None if plan.lim is None else plan.off + plan.lim
    return selected[plan.off : end]


class DataStore:
    """In-memory item store with an optional append-only journal.

    The journal holds one wire-encoded transmission header per line, each
    carrying one stored item.
    """

    def __init__(self, journal: Optional[Union[str, Path]] = None) -> None:
        self._items: list[StoredItem] = []
        self._lock = threading.Lock()
        self.journal = Path(journal) if journal is not None else None

    def __len__(self) -> int:
        return len(self._items)

    def snapshot(self) -> tuple[StoredItem, ...]:
        with self._lock:
            return tuple(self._items)

    def ingest(self, msg: Union[str, dict], directory: PublicKeyDirectory, journal: bool = True) -> StoredItem:
        doc = parse_wire(msg) if isinstance(msg, str) else msg
        report = validate(doc)
        if not report.ok or doc.get("typ") != "1":
            rules = [str(v) for v in report.violations] or ["not a sensor data message"]
            raise ValidationFailure("; ".join(rules), violations=rules)
        if "sig" not in doc:
            raise BadSignature("data item is not signed")
        result = Node.check_signature(None, doc, directory.get(doc["gw"]))
        if result is not VerificationResult.VERIFIED:
            raise BadSignature(f"data item signature: {result.value}", gw=doc["gw"])
        message = SensorDataMessage(doc)
        wire = encode_wire(doc)
        with self._lock:
            item = StoredItem(len(self._items), wire, message.gw, message.bn, message.bt, message.reading_names())
            self._items.append(item)
            if journal and self.journal is not None:
                with self.journal.open("a", encoding="utf-8") as fh:
                    fh.write(encode_wire(batch([doc]).to_doc()) + "\n")
        return item

    def replay(self, directory: PublicKeyDirectory) -> int:
        """Re-ingest every journal line (signatures are checked again)."""
        if self.journal is None or not self.journal.exists():
            return 0
        count = 0
        for line in self.journal.read_text(encoding="utf-8").splitlines():
            if line.strip():
                for message in unbatch(parse_wire(line)):
                    self.ingest(message.doc, directory, journal=False)
                    count += 1
        return count

    def evaluate_query(self, req, acl: Acl) -> list[StoredItem]:
        return evaluate_query(req, self.snapshot(), acl)


class CloudNode(Node):
    """Single logical cloud node.

    Every inbound message must carry a valid signature from the entity its
    type designates (gateway for data, keys and responses; service for
    requests, key downloads and commands). Failures are reported to the
    sender as transport notifications.
    """

    def __init__(
        self,
        entity: str = "cloud",
        directory: Optional[PublicKeyDirectory] = None,
        acl: Optional[Acl] = None,
        journal: Optional[Union[str, Path]] = None,
    ) -> None:
        super().__init__(entity, keypair=None, cloud=entity)
        self.directory = directory if directory is not None else PublicKeyDirectory()
        self.acl = acl if acl is not None else Acl()
        self.store = DataStore(journal)
        self.keys = CloudKeyStore()
        self.configurations: dict[tuple[str, str], dict] = {}

    def on_error(self, src: str, message: Message, exc: SensorCloudError) -> None:
        report = {**exc.to_dict(), "typ": message.doc.get("typ")}
        for name in ("id", "kid", "seq"):
            if name in message.doc:
                report[name] = message.doc[name]
        self.report(exc, src=src, typ=message.doc.get("typ"))
        if self.network is not None:
            self.network.notify(self.entity, src, report)

    def _authenticate(self, doc: dict) -> None:
        signer = required_signer(doc)
        if signer is None:
            try:
                from .envelope import signer_of

                signer = signer_of(doc)
            except SensorCloudError as exc:
                raise BadSignature(str(exc)) from None
        result = self.check_signature(doc, self.directory.get(signer))
        if result is not VerificationResult.VERIFIED:
            raise BadSignature(f"signature check for {signer}: {result.value}", signer=signer)

    def handle(self, src: str, message: Message) -> None:
        doc = message.doc
        report = validate(doc)
        if not report.ok:
            rules = [str(v) for v in report.violations]
            raise ValidationFailure("; ".join(rules), violations=rules)
        typ = MessageType(int(doc["typ"]))
        if typ is MessageType.SENSOR_DATA:
            self.store.ingest(doc, self.directory)
            return
        self._authenticate(doc)
        if typ is MessageType.SENSOR_DATA_REQUEST:
            items = self.store.evaluate_query(doc, self.acl)
            if items:
                self.send(message.doc["srv"], [item.doc for item in items])
        elif typ is MessageType.CONFIGURATION:
            config = ConfigurationMessage(doc)
            self.configurations[(config.gw, config.bn)] = doc
        elif typ in (MessageType.ACTUATOR_COMMAND, MessageType.ACTUATOR_RESPONSE):
            self.route_actuator(message)
        elif typ in (
            MessageType.DATA_KEY_UPLOAD,
            MessageType.DATA_KEY_DOWNLOAD,
            MessageType.PUBLIC_KEY_REQUEST,
        ):
            response = self.relay_key_message(message)
            if response is not None:
                dst = src if typ is MessageType.PUBLIC_KEY_REQUEST else doc["srv"]
                self.send(dst, [response])

    def relay_key_message(self, message: Union[Message, dict]) -> Optional[Message]:
        """Store a 400, answer a 401 with the stored 400, answer a 402 with a 403."""
        message = Message.from_doc(message)
        if isinstance(message, DataKeyUpload):
            self.keys.process_key_upload(message)
            return None
        if isinstance(message, DataKeyDownload):
            return self.keys.answer_key_download(message)
        if isinstance(message, PublicKeyRequest):
            return answer_pubkey_request(message, self.directory)
        raise ValueError(f"not a key management request: typ {message.doc.get('typ')}")

    def route_actuator(self, message: Union[Message, dict]) -> None:
        """Commands go to the node registered under ``gw``, responses to ``srv``."""
        message = Message.from_doc(message)
        if isinstance(message, ActuatorCommand):
            dst = message.gw
        elif isinstance(message, ActuatorResponse):
            dst = message.srv
        else:
            raise ValueError("only actuator commands and responses are routed")
        if self.network is None or dst not in self.network:
            raise UnknownDestination(f"no node registered as {dst!r}", dst=dst)
        self.send(dst, [message])

    def ingest(self, msg: Union[str, dict]) -> StoredItem:
        return self.store.ingest(msg, self.directory)

    def evaluate_query(self, req) -> list[StoredItem]:
        return self.store.evaluate_query(req, self.acl)
