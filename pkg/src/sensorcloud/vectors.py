"""Conformance vectors for cross-implementation testing.

Every file is line-oriented JSON (one record per line) and binary values are
unpadded base64url. The same seed always produces byte-identical files.

* ``messages.jsonl``   - wire text, canonical bytes and the expected validation verdict
* ``encryption.jsonl`` - plaintext message, data key, IVs and the expected encrypted message
* ``signatures.jsonl`` - message, P-256 key pair, signature input and the expected signed message
* ``keywrap.jsonl``    - recipient key, data key and the expected wrapped blob
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Iterator, Union

from .codec import base64url_encode, canonicalize, encode_wire, pem_encode_public_key
from .envelope import encrypt_fields, encrypt_readings_array, sign_message, signature_input
from .keys import KeyStore
from .messages import (
    ActuatorCommand,
    ActuatorResponse,
    ConfigurationMessage,
    DataKeyDownload,
    DataKeyUpload,
    KeyEntry,
    Message,
    PublicKeyRequest,
    PublicKeyResponse,
    SensorDataMessage,
    SensorDataRequest,
    SensorReading,
    validate,
)
from .primitives import DataKey, RecordingNonces, SigningKeyPair, wrap_data_key

FILES = ("messages.jsonl", "encryption.jsonl", "signatures.jsonl", "keywrap.jsonl")


def _sample_messages(rng: random.Random, pem: str) -> list[tuple[str, Message]]:
    fake_wrap = base64url_encode(rng.randbytes(125))
    return [
        (
            "sensor-data",
            SensorDataMessage.create(
                "gw1",
                "dev1",
                1_700_000_000_000,
                [SensorReading("hum", "40"), SensorReading("temp", "21.5"), SensorReading("temp", "21.7", 500)],
            ),
        ),
        ("sensor-data-request", SensorDataRequest.create("gw1", "srv1", [1000, 2000], ["dev1"], ["temp"], 10, 5)),
        ("sensor-data-request-open", SensorDataRequest.create("gw1", "srv1", [1000])),
        ("configuration", ConfigurationMessage.create("gw1", "dev1", '{"sensors":["hum","temp"]}')),
        ("actuator-command", ActuatorCommand.create("gw1", "srv1", "lamp", {"power": "on"}, seq=7)),
        ("actuator-command-fn", ActuatorCommand.create("gw1", "srv1", "lamp", [("level", "3")], seq=8, fn="dim")),
        ("actuator-response", ActuatorResponse.create("gw1", "srv1", "lamp", 7)),
        ("actuator-response-err", ActuatorResponse.create("gw1", "srv1", "lamp", 9, [("err", "unauthorized")])),
        (
            "data-key-upload",
            DataKeyUpload.create("gw1", "srv1", (0, 86_399_999), "dev1", [KeyEntry("hum", "0" * 40, fake_wrap)]),
        ),
        ("data-key-download", DataKeyDownload.create("gw1", "srv1", "0" * 40)),
        ("public-key-request", PublicKeyRequest.create("srv1")),
        ("public-key-response", PublicKeyResponse.create(pem)),
    ]


def _invalid_messages() -> list[tuple[str, dict]]:
    reading_a = {"n": "a", "sv": "1"}
    reading_b = {"n": "b", "sv": "2"}
    return [
        ("unsorted-readings", {"typ": "1", "gw": "gw1", "bn": "d", "bt": "0", "e": [reading_b, reading_a]}),
        ("duplicate-reading", {"typ": "1", "gw": "gw1", "bn": "d", "bt": "0", "e": [reading_a, {"n": "a", "t": "0", "sv": "2"}]}),
        ("missing-gw", {"typ": "3", "bn": "d", "js": "{}"}),
        ("number-not-string", {"typ": "401", "gw": "gw1", "srv": "s", "kid": 5}),
        ("leading-zero", {"typ": "1", "gw": "gw1", "bn": "d", "bt": "007", "e": [reading_a]}),
    ]


def _records(seed: int) -> dict[str, Iterator[dict]]:
    rng = random.Random(seed)
    signer = SigningKeyPair.generate("gw1", rng.randbytes)
    service = SigningKeyPair.generate("srv1", rng.randbytes)
    pem = pem_encode_public_key(service.public_key)
    samples = _sample_messages(rng, pem)

    messages = []
    for name, message in samples:
        report = validate(message)
        messages.append(
            {
                "name": name,
                "wire": encode_wire(message.doc),
                "canonical": base64url_encode(canonicalize(message.doc)),
                "valid": report.ok,
                "violations": report.rules(),
            }
        )
    for name, doc in _invalid_messages():
        report = validate(doc)
        messages.append(
            {
                "name": name,
                "wire": encode_wire(doc),
                "canonical": base64url_encode(canonicalize(doc)),
                "valid": report.ok,
                "violations": report.rules(),
            }
        )

    encryption = []
    data = samples[0][1]
    key = DataKey(rng.randbytes(32))
    cases = [
        ("reading-sv", lambda nonces: encrypt_fields(data, "/e/0", ["sv"], key, nonces)),
        ("reading-n-and-sv", lambda nonces: encrypt_fields(data, "/e/1", ["n", "sv"], key, nonces)),
        ("top-level-bn", lambda nonces: encrypt_fields(data, "", ["bn"], key, nonces)),
        ("whole-e", lambda nonces: encrypt_readings_array(data, key, nonces)),
    ]
    for name, build in cases:
        nonces = RecordingNonces(lambda: rng.randbytes(12))
        sealed = build(nonces)
        encryption.append(
            {
                "name": name,
                "plaintext": encode_wire(data.doc),
                "key": base64url_encode(key.material),
                "kid": key.kid,
                "ivs": [base64url_encode(iv) for iv in nonces.issued],
                "encrypted": encode_wire(sealed),
            }
        )

    signatures = []
    for name, message in samples:
        owner = signer if "gw" in message.doc else service
        signed = sign_message(message, owner)
        signatures.append(
            {
                "name": name,
                "message": encode_wire(message.doc),
                "signer": owner.owner,
                "private_scalar": base64url_encode(owner.private_key.private_numbers().private_value.to_bytes(32, "big")),
                "public_key": pem_encode_public_key(owner.public_key),
                "signature_input": signature_input(message.doc).decode("ascii"),
                "signed": encode_wire(signed),
            }
        )

    keywrap = []
    store = KeyStore()
    for index in range(3):
        data_key = store.generate_data_key("dev1", "hum", (index * 1000, index * 1000 + 999), rng.randbytes)
        draws: list[bytes] = []

        def recorded(size: int) -> bytes:
            value = rng.randbytes(size)
            draws.append(value)
            return value

        blob = wrap_data_key(data_key, service.public_key, recorded)
        keywrap.append(
            {
                "name": f"wrap-{index}",
                "recipient_private_scalar": base64url_encode(
                    service.private_key.private_numbers().private_value.to_bytes(32, "big")
                ),
                "recipient_public_key": pem,
                "data_key": base64url_encode(data_key.material),
                "kid": data_key.kid,
                "window": [data_key.start, data_key.end],
                "random_draws": [base64url_encode(d) for d in draws],
                "wrapped": base64url_encode(blob),
            }
        )

    return {
        "messages.jsonl": iter(messages),
        "encryption.jsonl": iter(encryption),
        "signatures.jsonl": iter(signatures),
        "keywrap.jsonl": iter(keywrap),
    }


def emit_conformance_vectors(seed: int, out_dir: Union[str, Path]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, records in _records(seed).items():
        path = out / filename
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
        written.append(path)
    return written
