import copy
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import query_oracle
from sensorcloud.cloud import CloudNode, DataStore, QueryPlan, StoredItem, evaluate_query
from sensorcloud.codec import encode_wire
from sensorcloud.envelope import sign_message
from sensorcloud.errors import BadSignature, UnknownDestination, ValidationFailure
from sensorcloud.keys import Acl, AclEntry, PublicKeyDirectory
from sensorcloud.messages import ActuatorCommand, SensorDataMessage, SensorDataRequest, SensorReading
from sensorcloud.network import SimNetwork
from sensorcloud.primitives import SigningKeyPair
from sensorcloud.scenario import Simulation

GW = SigningKeyPair.generate("gw1", random.Random(31).randbytes)


def random_store(rng: random.Random, count: int):
    items = []
    for seq in range(count):
        gw = rng.choice(["g1", "g2"])
        bn = rng.choice(["d1", "d2", "d3"])
        names = frozenset(rng.sample(["a", "b", "c"], rng.randint(0, 2)))
        items.append(StoredItem(seq, "", gw, bn, rng.randint(0, 20), names))
    return items


def random_acl(rng: random.Random) -> Acl:
    return Acl(
        AclEntry(rng.choice(["s1", "s2"]), rng.choice(["g1", "g2"]), rng.choice(["d1", "d2", "*"]), rng.choice(["a", "b", "*"]))
        for _ in range(rng.randint(0, 5))
    )


def as_tuples(items):
    return [(i.seq, i.gw, i.bn, i.bt, i.names) for i in items]


@given(st.integers(0, 2**32))
def test_query_matches_oracle(seed):
    rng = random.Random(seed)
    items = random_store(rng, rng.randint(0, 40))
    acl = random_acl(rng)
    bounds = sorted(rng.sample(range(0, 21), rng.randint(0, 2)))
    bns = rng.sample(["d1", "d2", "d3"], rng.randint(0, 2))
    names = rng.sample(["a", "b", "c"], rng.randint(0, 2))
    lim, off = rng.choice([None, rng.randint(1, 10)]), rng.choice([None, rng.randint(0, 10)])
    req = SensorDataRequest.create("g1", "s1", bounds, bns, names, lim, off)
    got = [i.seq for i in evaluate_query(req, items, acl)]
    hi = bounds[1] if len(bounds) == 2 else None
    lo = bounds[0] if bounds else 0
    assert got == query_oracle(as_tuples(items), "s1", "g1", lo, hi, bns, names, lim, off or 0, list(acl))


def test_bounds_are_inclusive():
    items = [StoredItem(i, "", "g", "d", bt, frozenset({"a"})) for i, bt in enumerate([9, 10, 11, 20, 21])]
    acl = Acl([AclEntry("s", "g")])
    req = SensorDataRequest.create("g", "s", [10, 20])
    assert [i.bt for i in evaluate_query(req, items, acl)] == [10, 11, 20]
    assert [i.bt for i in evaluate_query(SensorDataRequest.create("g", "s", [20]), items, acl)] == [20, 21]


def test_pages_concatenate_to_the_full_result():
    rng = random.Random(3)
    items = random_store(rng, 60)
    acl = Acl([AclEntry("s1", "g1")])
    full = evaluate_query(SensorDataRequest.create("g1", "s1"), items, acl)
    pages = []
    for off in range(0, len(full) + 7, 7):
        pages += evaluate_query(SensorDataRequest.create("g1", "s1", lim=7, off=off), items, acl)
    assert pages == full


def test_acl_filters_never_leak():
    rng = random.Random(8)
    items = random_store(rng, 200)
    acl = Acl([AclEntry("s1", "g1", "d1", "a"), AclEntry("s1", "g1", "d2")])
    for item in evaluate_query(QueryPlan("s1", "g1"), items, acl):
        assert any(acl.is_authorized("s1", "g1", item.bn, n) for n in item.names) or (
            not item.names and item.bn == "d2"
        )


def signed_item(bn="dev1", bt=1000, readings=(("temp", "20"),)):
    msg = SensorDataMessage.create("gw1", bn, bt, [SensorReading(n, v) for n, v in readings])
    return sign_message(msg, GW)


def directory():
    d = PublicKeyDirectory()
    d.register("gw1", GW.public_key)
    return d


def test_store_rejects_invalid_and_unsigned_items():
    store = DataStore()
    with pytest.raises(ValidationFailure):
        store.ingest({"typ": "1", "gw": "gw1"}, directory())
    unsigned = SensorDataMessage.create("gw1", "d", 0, [SensorReading("a", "1")]).doc
    with pytest.raises(BadSignature):
        store.ingest(unsigned, directory())
    forged = copy.deepcopy(signed_item())
    forged["bt"] = "1001"
    with pytest.raises(BadSignature):
        store.ingest(forged, directory())
    store.ingest(encode_wire(signed_item()), directory())
    assert len(store) == 1


def test_journal_replay(tmp_path):
    journal = tmp_path / "journal.jsonl"
    store = DataStore(journal)
    for bt in (5, 3, 9):
        store.ingest(signed_item(bt=bt), directory())
    assert len(journal.read_text().splitlines()) == 3
    again = DataStore(journal)
    assert again.replay(directory()) == 3
    assert [i.wire for i in again.snapshot()] == [i.wire for i in store.snapshot()]
    assert journal.read_text().count("\n") == 3


def test_route_to_unknown_gateway():
    cloud = CloudNode("cloud", directory())
    SimNetwork().register(cloud)
    with pytest.raises(UnknownDestination):
        cloud.route_actuator(ActuatorCommand.create("nowhere", "s", "lamp", {}))


def test_cloud_notifies_sender_about_bad_items():
    sim = Simulation({"seed": 1, "gateways": [{"id": "gw1"}], "services": [{"id": "s1"}], "acl": []})
    gateway = sim.gateways["gw1"]
    forged = SensorDataMessage.create("gw1", "d", 0, [SensorReading("a", "1")]).doc
    gateway.send("cloud", [forged])
    sim.network.run()
    assert len(sim.cloud.store) == 0
    assert gateway.diagnostics[-1]["notification"]["error"] == "BadSignature"


def test_empty_query_result_sends_nothing():
    sim = Simulation({"seed": 1, "gateways": [{"id": "gw1"}], "services": [{"id": "s1"}], "acl": ["s1 gw1 * *"]})
    before = len(sim.network.log)
    assert sim.services["s1"].query("gw1") == []
    assert [d.dst for d in sim.network.log[before:]] == ["cloud"]
