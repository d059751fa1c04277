"""Exit criteria, one test per criterion, at the stated sizes and tolerances.

Each test is marked ``acceptance(number, title)``; the conftest hook prints a
PASS/FAIL line per criterion in the terminal summary.
"""

import copy
import itertools
import random
import time

import pytest

from generators import rand_document, rand_message, rand_readings, shuffled
from known_answers import GCM_VECTORS, RFC6979_SIGS, RFC6979_X
from oracles import query_oracle, select_key_oracle, sha1_hex
from sensorcloud.cloud import StoredItem, evaluate_query
from sensorcloud.codec import base64url_decode, base64url_encode, canonicalize, encode_wire, parse_wire
from sensorcloud.envelope import (
    VerificationResult,
    decrypt_message,
    encrypt_fields,
    encrypt_readings_array,
    sign_message,
    signature_input,
    verify_signature,
)
from sensorcloud.errors import AuthenticationFailure, MalformedJson, MalformedSignatureBlock, NoValidKey
from sensorcloud.keys import Acl, AclEntry, KeyStore
from sensorcloud.messages import DataKeyDownload, SensorDataMessage, SensorDataRequest, batch, unbatch, validate
from sensorcloud.primitives import (
    CounterNonces,
    DataKey,
    SigningKeyPair,
    aes_gcm_decrypt,
    aes_gcm_encrypt,
    ecdsa_verify,
    key_id,
    sha256,
    unwrap_data_key,
    wrap_data_key,
)
from sensorcloud.scenario import Simulation, demo_scenario, run_scenario

from cryptography.hazmat.primitives.asymmetric import ec

TYPES = (1, 2, 3, 4, 5, 400, 401, 402, 403)


# ------------------------------------------------------------------ 1


@pytest.mark.acceptance(1, "codec roundtrip: 10,000 messages, all nine types, zero violations, < 30 s")
def test_codec_roundtrip():
    rng = random.Random(1)
    started = time.perf_counter()
    seen_types = set()
    for index in range(10_000):
        message = rand_message(rng, TYPES[index % len(TYPES)])
        text = encode_wire(batch([message]).to_doc())
        (parsed,) = unbatch(parse_wire(text))
        report = validate(parsed)
        assert report.ok, (index, report.violations)
        assert parsed == message
        seen_types.add(parsed.doc["typ"])
    elapsed = time.perf_counter() - started
    assert seen_types == {str(t) for t in TYPES}
    assert elapsed < 30, elapsed


# ------------------------------------------------------------------ 2


@pytest.mark.acceptance(2, "canonicalization: idempotent and order-independent; permuted renderings sign identically")
def test_canonicalization():
    rng = random.Random(2)
    for _ in range(10_000):
        doc = rand_document(rng)
        once = canonicalize(doc)
        assert canonicalize(parse_wire(once)) == once
        assert canonicalize(shuffled(doc, rng)) == once
    signer = SigningKeyPair.generate("gw", random.Random(22).randbytes)
    for index in range(10_000):
        doc = rand_message(rng, TYPES[index % len(TYPES)]).doc
        first = parse_wire(encode_wire(shuffled(doc, rng)))
        second = parse_wire(encode_wire(shuffled(doc, rng)))
        assert signature_input(first) == signature_input(second)
        if index < 1000:
            # RFC 6979 nonces: identical input means identical signature bytes
            assert sign_message(first, signer)["sig"] == sign_message(second, signer)["sig"]


# ------------------------------------------------------------------ 3


@pytest.mark.acceptance(3, "crypto known answers: AES-256-GCM, ECDSA P-256 with bit mutations, SHA-1 kid")
def test_crypto_known_answers():
    for _, key, iv, pt, aad, ct, tag in GCM_VECTORS:
        key, iv, pt, aad, ct, tag = map(bytes.fromhex, (key, iv, pt, aad, ct, tag))
        assert aes_gcm_encrypt(key, iv, pt, aad) == (ct, tag)
        assert aes_gcm_decrypt(key, iv, ct, tag, aad) == pt
        for bit in range(128):
            bad = bytearray(tag)
            bad[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(AuthenticationFailure):
                aes_gcm_decrypt(key, iv, ct, bytes(bad), aad)

    public = ec.derive_private_key(RFC6979_X, ec.SECP256R1()).public_key()
    for message, r, s in RFC6979_SIGS:
        signature = bytes.fromhex(r) + bytes.fromhex(s)
        assert ecdsa_verify(public, message, signature)
        for bit in range(512):
            bad = bytearray(signature)
            bad[bit // 8] ^= 1 << (bit % 8)
            assert not ecdsa_verify(public, message, bytes(bad))
        for bit in range(len(message) * 8):
            bad = bytearray(message)
            bad[bit // 8] ^= 1 << (bit % 8)
            assert not ecdsa_verify(public, bytes(bad), signature)

    rng = random.Random(3)
    for _ in range(1000):
        material = rng.randbytes(32)
        assert key_id(material) == sha1_hex(material)


# ------------------------------------------------------------------ 4


def _sealed_case(rng: random.Random, doc: dict, keys: list[DataKey]) -> dict:
    """Encrypt ``doc`` with one of the advanced schemes, chosen at random."""
    nonces = CounterNonces(rng.randbytes(4))
    scheme = rng.choice(["per-field", "multi-field", "multi-scope", "whole-e", "nested"])
    readings = len(doc["e"])
    if scheme == "per-field":
        index = rng.randrange(readings)
        return encrypt_fields(doc, f"/e/{index}", ["sv"], rng.choice(keys), nonces)
    if scheme == "multi-field":
        index = rng.randrange(readings)
        fields = [name for name in doc["e"][index] if rng.random() < 0.7] or ["n"]
        return encrypt_fields(doc, f"/e/{index}", fields, rng.choice(keys), nonces)
    if scheme == "multi-scope":
        out = doc
        for index in rng.sample(range(readings), rng.randint(1, readings)):
            out = encrypt_fields(out, f"/e/{index}", ["sv"], rng.choice(keys), nonces)
        if rng.random() < 0.5:
            out = encrypt_fields(out, "", rng.sample(["bn", "bt"], rng.randint(1, 2)), rng.choice(keys), nonces)
        return out
    if scheme == "whole-e":
        return encrypt_readings_array(doc, rng.choice(keys), nonces)
    inner = encrypt_fields(doc, "/e/0", ["sv"], keys[0], nonces)
    return encrypt_readings_array(inner, keys[1], nonces)


@pytest.mark.acceptance(4, "envelope roundtrip: 1,000 random (message, partition, key) cases")
def test_envelope_roundtrip():
    rng = random.Random(4)
    schemes = set()
    for _ in range(1000):
        doc = SensorDataMessage.create("gw1", f"dev{rng.randint(0, 9)}", rng.randint(0, 10**12), rand_readings(rng)).doc
        keys = [DataKey(rng.randbytes(32)) for _ in range(3)]
        sealed = _sealed_case(rng, doc, keys)
        schemes.add(tuple(sorted(el["unprotected"]["typ"] for el in _all_ev(sealed))))
        restored, missing = decrypt_message(sealed, {key.kid: key for key in keys})
        assert missing == []
        assert canonicalize(restored) == canonicalize(doc)
    assert len(schemes) > 3


def _all_ev(node):
    if isinstance(node, dict):
        for name, value in node.items():
            if name == "ev":
                yield from value
            else:
                yield from _all_ev(value)
    elif isinstance(node, list):
        for item in node:
            yield from _all_ev(item)


# ------------------------------------------------------------------ 5


@pytest.mark.acceptance(5, "tamper detection: byte mutations outside sig, bit flips in ciphertext/tag/iv")
def test_tamper_detection():
    rng = random.Random(5)
    gateway = SigningKeyPair.generate("gw", random.Random(55).randbytes)
    anyone = lambda entity: gateway.public_key  # noqa: E731 - the relying party expects this key
    mutations = 0
    for index in range(1000):
        message = rand_message(rng, TYPES[index % len(TYPES)])
        signed = sign_message(message, gateway, include_kid=rng.random() < 0.5)
        signature = base64url_decode(signed["sig"]["signatures"][0]["signature"])
        body = {name: value for name, value in signed.items() if name != "sig"}
        body["sig"] = {}
        canonical = canonicalize(body)
        assert canonical.count(b'"sig":{}') == 1
        hole = canonical.index(b'"sig":{}')
        outside = [p for p in range(len(canonical)) if not hole <= p < hole + len(b'"sig":{}')]
        for position in rng.sample(outside, min(12, len(outside))):
            mutated = bytearray(canonical)
            mutated[position] = rng.choice([b for b in range(256) if b != canonical[position]])
            mutated = bytes(mutated)
            mutations += 1
            # the signature covers exactly these bytes
            assert not ecdsa_verify(gateway.public_key, base64url_encode(sha256(mutated)).encode(), signature)
            try:
                doc = parse_wire(mutated)
            except MalformedJson:
                continue  # rejected before verification is even attempted
            if not isinstance(doc, dict) or "sig" not in doc:
                continue
            doc["sig"] = signed["sig"]
            if canonicalize({**doc, "sig": {}}) == canonical:
                continue  # a different spelling of the same message, e.g. \u001f vs \u001F
            if "gw" not in doc and "kid" not in doc["sig"]["signatures"][0]["header"]:
                # the mutation renamed the member naming the signer: nobody to verify against
                with pytest.raises(MalformedSignatureBlock):
                    verify_signature(doc, anyone)
                continue
            assert verify_signature(doc, anyone) is VerificationResult.BAD_SIGNATURE
    assert mutations >= 10_000

    flips = 0
    for _ in range(1000):
        key = DataKey(rng.randbytes(32))
        doc = SensorDataMessage.create("gw", "dev", rng.randint(0, 10**9), rand_readings(rng)).doc
        sealed = doc
        for index in range(len(doc["e"])):
            sealed = encrypt_fields(sealed, f"/e/{index}", ["sv"], key, CounterNonces(rng.randbytes(4)))
        target = rng.randrange(len(doc["e"]))
        element = sealed["e"][target]["ev"][0]
        parts = {name: base64url_decode(element[name]) for name in ("iv", "ciphertext", "tag")}
        for name, raw in parts.items():
            for bit in range(len(raw) * 8):
                bad = bytearray(raw)
                bad[bit // 8] ^= 1 << (bit % 8)
                trial = dict(parts, **{name: bytes(bad)})
                with pytest.raises(AuthenticationFailure):
                    aes_gcm_decrypt(key.material, trial["iv"], trial["ciphertext"], trial["tag"])
                flips += 1
            if raw:
                # and through the full message path: the whole message is rejected
                bad = bytearray(raw)
                bit = rng.randrange(len(raw) * 8)
                bad[bit // 8] ^= 1 << (bit % 8)
                broken = copy.deepcopy(sealed)
                broken["e"][target]["ev"][0][name] = base64url_encode(bytes(bad))
                with pytest.raises(AuthenticationFailure):
                    decrypt_message(broken, {key.kid: key})
    assert flips > 200_000


# ------------------------------------------------------------------ 6


def _grid_store(rng: random.Random, count: int) -> list[StoredItem]:
    return [
        StoredItem(
            seq,
            "",
            rng.choice(["g1", "g2"]),
            rng.choice(["d1", "d2"]),
            rng.randint(0, 6),
            frozenset(rng.sample(["a", "b"], rng.randint(0, 2))),
        )
        for seq in range(count)
    ]


def _check_query(items, acl, srv, gw, bt, bns, names, lim, off):
    req = SensorDataRequest.create(gw, srv, bt, bns, names, lim, off)
    got = [item.seq for item in evaluate_query(req, items, acl)]
    lo = bt[0] if bt else 0
    hi = bt[1] if len(bt) == 2 else None
    expected = query_oracle(
        [(i.seq, i.gw, i.bn, i.bt, i.names) for i in items], srv, gw, lo, hi, bns, names, lim, off or 0, list(acl)
    )
    assert got == expected, (srv, gw, bt, bns, names, lim, off)


@pytest.mark.acceptance(6, "query-oracle equivalence: exhaustive grid on small stores, 1,000 random stores")
def test_query_oracle_equivalence():
    rng = random.Random(6)
    acl = Acl(
        [
            AclEntry("s1", "g1"),
            AclEntry("s1", "g2", "d1", "a"),
            AclEntry("s2", "g1", "d2", "*"),
            AclEntry("s2", "g1", "*", "b"),
            AclEntry("s2", "g2", "d1", "b"),
        ]
    )
    points = [0, 3, 6]
    bounds = [[]] + [[p] for p in points] + [[lo, hi] for lo, hi in itertools.combinations_with_replacement(points, 2)]
    device_sets = [[], ["d1"], ["d2"], ["d1", "d2"]]
    name_sets = [[], ["a"], ["b"], ["a", "b"]]
    queries = 0
    for size in (1, 12, 50):
        items = _grid_store(rng, size)
        for srv, gw, bt, bns, names, lim, off in itertools.product(
            ["s1", "s2"], ["g1"], bounds, device_sets, name_sets, [None, 1, 4], [None, 0, 3]
        ):
            _check_query(items, acl, srv, gw, bt, bns, names, lim, off)
            queries += 1
    assert queries == 3 * 2 * 10 * 4 * 4 * 3 * 3

    for _ in range(1000):
        size = rng.randint(0, 1000)
        items = [
            StoredItem(
                seq,
                "",
                rng.choice(["g1", "g2", "g3"]),
                rng.choice(["d1", "d2", "d3", "d4"]),
                rng.randint(0, 10_000),
                frozenset(rng.sample(["a", "b", "c", "d"], rng.randint(0, 3))),
            )
            for seq in range(size)
        ]
        random_acl = Acl(
            AclEntry(
                rng.choice(["s1", "s2"]),
                rng.choice(["g1", "g2", "g3"]),
                rng.choice(["d1", "d2", "d3", "d4", "*"]),
                rng.choice(["a", "b", "c", "d", "*"]),
            )
            for _ in range(rng.randint(0, 6))
        )
        bt = sorted(rng.randint(0, 10_000) for _ in range(rng.randint(0, 2)))
        _check_query(
            items,
            random_acl,
            rng.choice(["s1", "s2"]),
            rng.choice(["g1", "g2", "g3"]),
            bt,
            rng.sample(["d1", "d2", "d3", "d4"], rng.randint(0, 3)),
            rng.sample(["a", "b", "c", "d"], rng.randint(0, 2)),
            rng.choice([None, rng.randint(1, 200)]),
            rng.choice([None, 0, rng.randint(0, 300)]),
        )


# ------------------------------------------------------------------ 7


def _random_scenario(rng: random.Random, seed: int) -> dict:
    gateways = [f"g{i}" for i in range(1, rng.randint(1, 3) + 1)]
    services = [f"s{i}" for i in range(1, rng.randint(1, 5) + 1)]
    streams = set()
    for _ in range(rng.randint(1, 10)):
        streams.add((rng.choice(gateways), rng.choice(["d1", "d2", "d3"]), rng.choice(["a", "b", "c", "d"])))
    streams = sorted(streams)
    acl = []
    for srv in services:
        for _ in range(rng.randint(0, 3)):
            gw, bn, n = rng.choice(streams)
            bn = rng.choice([bn, bn, "*"])
            n = rng.choice([n, n, "*"])
            acl.append(f"{srv} {gw} {bn} {n} {rng.choice(['sensitive', 'sensitive', 'plain'])}")
    events = []
    used = set()
    for round_start in (0, 3000):
        for gw, bn, n in streams:
            for _ in range(rng.randint(1, 3)):
                t = rng.randrange(round_start, round_start + 3000)
                if (gw, bn, n, t) in used:
                    continue
                used.add((gw, bn, n, t))
                events.append({"at": round_start, "do": "ingest", "gw": gw, "bn": bn, "n": n, "t": t, "value": f"v{t}-{rng.random():.6f}"})
        at = round_start + 3000
        for gw in gateways:
            events += [{"at": at, "do": "rotate", "gw": gw}, {"at": at, "do": "flush", "gw": gw}, {"at": at, "do": "distribute", "gw": gw}]
        for srv in services:
            for gw in gateways:
                events.append({"at": at, "do": "query", "srv": srv, "gw": gw})
    return {
        "name": f"random-{seed}",
        "seed": seed,
        "rotation_ms": 1000,
        "gateways": [{"id": gw} for gw in gateways],
        "services": [{"id": srv} for srv in services],
        "acl": acl,
        "events": events,
        "assertions": [{"kind": "confidentiality", "srv": srv} for srv in services] + [{"kind": "all_valid"}],
    }


@pytest.mark.acceptance(7, "end-to-end confidentiality partition on 100 random scenarios")
def test_confidentiality_partition():
    rng = random.Random(7)
    recovered_total = 0
    for seed in range(100):
        scenario = _random_scenario(rng, seed)
        report = run_scenario(scenario)
        sim = report.simulation
        acl = sim.acl
        for srv, service in sim.services.items():
            expected = {
                f"{gw}/{bn}/{n}@{t}": value
                for (gw, bn, n, t), value in sim.ingested.items()
                if acl.is_sensitive(gw, bn, n) and acl.is_authorized(srv, gw, bn, n)
            }
            assert sim.recovered(srv) == expected, (seed, srv)
            recovered_total += len(expected)
            delivered = [
                message.doc
                for delivery in sim.network.log
                if delivery.dst == srv
                for message in unbatch(parse_wire(delivery.text))
                if message.doc["typ"] == "1"
            ]
            for doc in delivered:
                assert verify_signature(doc, sim.directory) is VerificationResult.VERIFIED
            assert len(service.results) == len(delivered)
            assert not [d for d in service.diagnostics if d.get("error") == "BadSignature"]
    assert recovered_total > 100


# ------------------------------------------------------------------ 8


@pytest.mark.acceptance(8, "actuator RPC: 500 random interleavings, bijective seq matching, err arrays")
def test_actuator_rpc():
    rng = random.Random(8)
    commands_total = refused_total = 0
    for trial in range(500):
        gateways = [f"g{i}" for i in range(1, rng.randint(1, 2) + 1)]
        services = [f"s{i}" for i in range(1, rng.randint(2, 3) + 1)]
        acl = [
            f"{rng.choice(services)} {rng.choice(gateways)} {rng.choice(['a1', 'a2', '*'])} *"
            for _ in range(rng.randint(0, 4))
        ]
        sim = Simulation(
            {
                "seed": trial,
                "gateways": [
                    {"id": gw, "actuators": {"a1": {"p": "0"}, "a2": {}}, "functions": {"f1": {"done": "yes"}}}
                    for gw in gateways
                ],
                "services": [{"id": s} for s in services],
                "acl": acl,
            }
        )
        issued = []
        for _ in range(rng.randint(2, 8)):
            srv, gw = rng.choice(services), rng.choice(gateways)
            bn = rng.choice(["a1", "a2", "ghost"])
            fn = rng.choice([None, None, "f1", "nofn"])
            params = {f"p{i}": str(rng.randint(0, 9)) for i in range(rng.randint(0, 2))}
            expect = rng.random() < 0.9
            seq = sim.services[srv].send_command(gw, bn, params, fn, expect)
            issued.append((srv, gw, bn, fn, seq))
            if rng.random() < 0.3:
                sim.network.run(limit=rng.randint(0, 5), rng=rng)
        sim.network.run(rng=rng)

        for srv, service in sim.services.items():
            mine = [c for c in issued if c[0] == srv and c[4] is not None]
            assert sorted(resp.seq for _, resp in service.responses) == sorted(c[4] for c in mine)
            assert not service.pending
            for command, response in service.responses:
                for name in ("gw", "srv", "bn", "seq"):
                    assert response.doc[name] == command.doc[name]
                assert ("fn" in response.doc) == ("fn" in command.doc)
                assert response.doc.get("fn") == command.doc.get("fn")
                allowed = sim.acl.is_authorized(srv, command.gw, command.bn)
                if not allowed:
                    expected = [("err", "unauthorized")]
                elif command.bn == "ghost":
                    expected = [("err", "unknown actuator")]
                elif command.fn == "nofn":
                    expected = [("err", "unknown function")]
                elif command.fn == "f1":
                    expected = [("done", "yes")]
                else:
                    expected = []
                assert response.params == expected
                refused_total += not allowed
        for gw, gateway in sim.gateways.items():
            for srv, bn, _ in gateway.actuations:
                assert sim.acl.is_authorized(srv, gw, bn)
            executed = [
                c for c in issued
                if c[1] == gw and sim.acl.is_authorized(c[0], gw, c[2]) and c[2] != "ghost" and c[3] != "nofn"
            ]
            assert len(gateway.actuations) == len(executed)
        commands_total += len(issued)
    assert commands_total > 1000 and refused_total > 100


# ------------------------------------------------------------------ 9


@pytest.mark.acceptance(9, "key lifecycle: select_key vs linear scan, wrap/unwrap, 401 always answered by 400")
def test_key_lifecycle():
    rng = random.Random(9)
    probes = 0
    while probes < 10_000:
        store = KeyStore()
        windows, cursor = [], rng.randint(0, 100)
        for _ in range(rng.randint(0, 12)):
            start = cursor + rng.choice([0, rng.randint(1, 50)])
            end = start + rng.randint(0, 100)
            windows.append((start, end, store.generate_data_key("d", "n", (start, end), rng.randbytes)))
            cursor = end + 1
        times = [rng.randint(0, cursor + 50) for _ in range(50)]
        times += [edge for start, end, _ in windows for edge in (start - 1, start, end, end + 1) if edge >= 0]
        for t in times:
            expected = select_key_oracle(windows, t)
            try:
                got = store.select_key("d", "n", t)
            except NoValidKey:
                got = None
            assert got is expected, t
            probes += 1

    recipients = [SigningKeyPair.generate(f"r{i}", rng.randbytes) for i in range(10)]
    for _ in range(1000):
        recipient = rng.choice(recipients)
        start = rng.randint(0, 10**12)
        key = DataKey(rng.randbytes(32), start, start + rng.randint(0, 10**9))
        blob = wrap_data_key(key, recipient.public_key, rng.randbytes)
        assert len(blob) == 125
        assert unwrap_data_key(blob, recipient.private_key, key.start, key.end) == key

    acl = ["s1 g1 d1 *", "s2 g1 * a", "s3 g1 d2 b"]
    sim = Simulation({"seed": 9, "rotation_ms": 250, "gateways": [{"id": "g1"}], "services": [{"id": s} for s in ("s1", "s2", "s3")], "acl": acl})
    gateway = sim.gateways["g1"]
    for bn, n in itertools.product(["d1", "d2", "d3"], ["a", "b", "c"]):
        for t in range(0, 3000, 250):
            gateway.ingest_reading(bn, n, t, f"{bn}{n}{t}")
    gateway.rotate_keys(0)
    gateway.flush_all()
    gateway.distribute_keys()
    sim.network.run()
    answered = 0
    for srv, service in sim.services.items():
        for bn, n in gateway.keystore.streams():
            for key in gateway.keystore.keys_for(bn, n):
                if not sim.acl.is_authorized(srv, "g1", bn, n):
                    continue
                before = len(sim.network.log)
                service.send("cloud", [service.sign(DataKeyDownload.create("g1", srv, key.kid), include_kid=True)])
                sim.network.run()
                replies = [
                    message
                    for delivery in sim.network.log[before:]
                    if delivery.dst == srv
                    for message in unbatch(parse_wire(delivery.text))
                ]
                # the first answer may be preceded by the gateway's public key (403) for verification
                answers = [m for m in replies if m.doc["typ"] != "403"]
                assert [m.doc["typ"] for m in answers] == ["400"]
                assert key.kid in [entry.kid for entry in answers[0].entries]
                assert service.keyring.get(key.kid).material == key.material
                answered += 1
    assert answered > 50


# ------------------------------------------------------------------ 10


@pytest.mark.acceptance(10, "determinism: the demo scenario twice with one seed gives byte-identical delivery logs")
def test_determinism():
    first = run_scenario(demo_scenario()).delivery_log_bytes()
    second = run_scenario(demo_scenario()).delivery_log_bytes()
    assert first and first == second
