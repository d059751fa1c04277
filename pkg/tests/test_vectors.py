"""The emitted conformance vectors re-check against the library and an independent SHA-1."""

import json

from cryptography.hazmat.primitives.asymmetric import ec

from oracles import sha1_hex
from sensorcloud.codec import base64url_decode, canonicalize, parse_wire
from sensorcloud.envelope import VerificationResult, decrypt_message, signature_input, verify_signature
from sensorcloud.keys import PublicKeyDirectory
from sensorcloud.messages import validate
from sensorcloud.primitives import DataKey, SigningKeyPair, unwrap_data_key
from sensorcloud.vectors import FILES, emit_conformance_vectors


def load(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def test_emission_is_byte_identical(tmp_path):
    a = emit_conformance_vectors(9, tmp_path / "a")
    b = emit_conformance_vectors(9, tmp_path / "b")
    assert [p.name for p in a] == list(FILES)
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_vectors_check_out(tmp_path):
    files = {p.name: p for p in emit_conformance_vectors(1, tmp_path)}

    for record in load(files["messages.jsonl"]):
        doc = parse_wire(record["wire"])
        assert base64url_decode(record["canonical"]) == canonicalize(doc)
        report = validate(doc)
        assert report.ok == record["valid"] and report.rules() == record["violations"]
        assert record["valid"] == (not record["violations"])
        if not record["valid"]:
            assert len(record["violations"]) == 1, record

    for record in load(files["encryption.jsonl"]):
        key = DataKey(base64url_decode(record["key"]))
        assert key.kid == record["kid"] == sha1_hex(key.material)
        plain, missing = decrypt_message(parse_wire(record["encrypted"]), {key.kid: key})
        assert plain == parse_wire(record["plaintext"]) and not missing
        assert len(record["ivs"]) >= 1

    for record in load(files["signatures.jsonl"]):
        signed = parse_wire(record["signed"])
        directory = PublicKeyDirectory()
        directory.register(record["signer"], record["public_key"])
        assert verify_signature(signed, directory) is VerificationResult.VERIFIED
        assert signature_input(signed).decode() == record["signature_input"]
        scalar = int.from_bytes(base64url_decode(record["private_scalar"]), "big")
        keypair = SigningKeyPair(record["signer"], ec.derive_private_key(scalar, ec.SECP256R1()))
        # RFC 6979 nonces make the signature reproducible from the private scalar
        assert keypair.sign(signature_input(signed)) == base64url_decode(
            signed["sig"]["signatures"][0]["signature"]
        )

    for record in load(files["keywrap.jsonl"]):
        scalar = int.from_bytes(base64url_decode(record["recipient_private_scalar"]), "big")
        private = ec.derive_private_key(scalar, ec.SECP256R1())
        key = unwrap_data_key(base64url_decode(record["wrapped"]), private, *record["window"])
        assert key.material == base64url_decode(record["data_key"])
        assert key.kid == record["kid"]
