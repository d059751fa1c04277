"""Declarative simulation scenarios: build a network, replay timed events, check assertions.

Runs are deterministic for a given seed: signing keys and data keys come from
seeded generators, IVs from per-gateway counters, and ECDSA nonces are
derived per RFC 6979, so the delivery log is byte-for-byte reproducible.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema

from .cloud import CloudNode
from .codec import parse_wire
from .errors import AssertionFailed, ScenarioError, SensorCloudError
from .gateway import GatewayNode
from .keys import DAY_MS, Acl, PublicKeyDirectory
from .messages import SensorDataRequest, unbatch, validate
from .network import NodeClock, SimNetwork
from .primitives import CounterNonces, SigningKeyPair
from .service import ServiceNode


def _data_text(name: str) -> str:
    return resources.files("sensorcloud").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def scenario_schema() -> dict:
    return json.loads(_data_text("scenario.schema.json"))


def demo_scenario() -> dict:
    """1 gateway, 2 sensors (1 sensitive), 2 services (1 authorized), one actuator."""
    return json.loads(_data_text("demo_scenario.json"))


def load_scenario(source: Union[str, Path, dict]) -> dict:
    scenario = source if isinstance(source, dict) else json.loads(Path(source).read_text(encoding="utf-8"))
    try:
        jsonschema.validate(scenario, scenario_schema())
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"scenario does not match the schema: {exc.message}", path=list(exc.absolute_path)) from None
    last = 0
    for index, event in enumerate(scenario.get("events", [])):
        at = event.get("at", last)
        if at < last:
            raise ScenarioError(f"event {index} goes back in time ({at} < {last})", event=index)
        last = at
    return scenario


@dataclass
class ScenarioReport:
    name: str = ""
    deliveries: list[dict] = field(default_factory=list)
    notifications: list[dict] = field(default_factory=list)
    nodes: dict[str, dict] = field(default_factory=dict)
    assertions: list[dict] = field(default_factory=list)
    simulation: Optional["Simulation"] = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return all(a["ok"] for a in self.assertions)

    def delivery_log_bytes(self) -> bytes:
        return "".join(f"{d['index']} {d['src']} {d['dst']} {d['bytes']}\n" for d in self.deliveries).encode("utf-8")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ok": self.ok,
            "deliveries": self.deliveries,
            "notifications": self.notifications,
            "nodes": self.nodes,
            "assertions": self.assertions,
        }


class Simulation:
    """A built network plus bookkeeping of what every gateway ingested."""

    def __init__(self, scenario: dict) -> None:
        self.scenario = scenario
        seed = scenario.get("seed", 0)
        self.clock = NodeClock()
        self.network = SimNetwork()
        self.acl = Acl.parse("\n".join(scenario.get("acl", [])))
        cloud_id = scenario.get("cloud", "cloud")
        key_rng = random.Random(seed)
        gateways = scenario.get("gateways", [])
        services = scenario.get("services", [])
        self.directory = PublicKeyDirectory()
        self.cloud = self.network.register(CloudNode(cloud_id, self.directory, self.acl))
        self.gateways: dict[str, GatewayNode] = {}
        self.services: dict[str, ServiceNode] = {}
        # plaintext ground truth: (gw, bn, n, t) -> value
        self.ingested: dict[tuple[str, str, str, int], str] = {}
        for index, spec in enumerate(gateways):
            keypair = SigningKeyPair.generate(spec["id"], key_rng.randbytes)
            gateway = GatewayNode(
                spec["id"],
                keypair,
                self.acl,
                clock=self.clock,
                rng=random.Random(f"{seed}/{spec['id']}").randbytes,
                nonces=CounterNonces(hashlib.sha256(spec["id"].encode()).digest()[:4]),
                rotation_ms=scenario.get("rotation_ms", DAY_MS),
                cloud=cloud_id,
                auto_rotate=scenario.get("auto_rotate", False),
            )
            for bn, table in spec.get("actuators", {}).items():
                gateway.register_actuator(bn, table)
            for fn, results in spec.get("functions", {}).items():
                gateway.register_function(fn, lambda bn, params, results=results: list(results.items()))
            self.gateways[spec["id"]] = self.network.register(gateway)
            self.directory.register(spec["id"], keypair.public_key)
        for spec in services:
            keypair = SigningKeyPair.generate(spec["id"], key_rng.randbytes)
            self.services[spec["id"]] = self.network.register(ServiceNode(spec["id"], keypair, cloud_id))
            self.directory.register(spec["id"], keypair.public_key)

    def gateway(self, gw: str) -> GatewayNode:
        try:
            return self.gateways[gw]
        except KeyError:
            raise ScenarioError(f"unknown gateway {gw!r}") from None

    def service(self, srv: str) -> ServiceNode:
        try:
            return self.services[srv]
        except KeyError:
            raise ScenarioError(f"unknown service {srv!r}") from None

    def apply(self, event: dict) -> None:
        self.clock.advance_to(event.get("at", self.clock.now))
        action = event["do"]
        if action == "ingest":
            t = event.get("t", self.clock.now)
            self.gateway(event["gw"]).ingest_reading(event["bn"], event["n"], t, event["value"])
            self.ingested[(event["gw"], event["bn"], event["n"], t)] = event["value"]
        elif action == "rotate":
            self.gateway(event["gw"]).rotate_keys(self.clock.now)
        elif action == "flush":
            gateway = self.gateway(event["gw"])
            if "bn" in event:
                gateway.flush_device(event["bn"])
            else:
                gateway.flush_all()
        elif action == "distribute":
            self.gateway(event["gw"]).distribute_keys()
        elif action == "configure":
            schema = event["schema"]
            text = schema if isinstance(schema, str) else json.dumps(schema, sort_keys=True)
            self.gateway(event["gw"]).emit_configuration(event["bn"], text)
        elif action == "query":
            service = self.service(event["srv"])
            spec = event.get("filter", {})
            request = SensorDataRequest.create(
                event["gw"], service.entity, spec.get("bt", ()), spec.get("bn", ()), spec.get("n", ()),
                spec.get("lim"), spec.get("off"),
            )
            service.query(request)
        elif action == "command":
            self.service(event["srv"]).send_command(
                event["gw"], event["bn"], event.get("params", {}), event.get("fn"), event.get("expect_response", True)
            )
        self.network.run()

    # -- observations used by assertions

    def recovered(self, srv: str) -> dict[str, str]:
        """Sensitive values ``srv`` decrypted, keyed ``gw/bn/n@t``."""
        out = {}
        for result in self.service(srv).results:
            bt = int(result.original["bt"])
            for sealed, opened in zip(result.original.get("e", []), result.plaintext.get("e", [])):
                if isinstance(sealed, dict) and "ev" in sealed and "sv" in opened:
                    t = bt + int(opened.get("t", "0"))
                    out[f"{result.gw}/{result.original['bn']}/{opened['n']}@{t}"] = opened["sv"]
        return out

    def confidentiality_violations(self, srv: str) -> list[str]:
        """Every sealed reading is opened iff the ACL authorizes ``srv``, and opens to the ingested value."""
        problems = []
        for result in self.service(srv).results:
            gw, bn, bt = result.gw, result.original["bn"], int(result.original["bt"])
            for sealed, opened in zip(result.original.get("e", []), result.plaintext.get("e", [])):
                if not isinstance(sealed, dict):
                    continue
                n = sealed.get("n")
                t = bt + int(sealed.get("t", "0"))
                where = f"{gw}/{bn}/{n}@{t}"
                truth = self.ingested.get((gw, bn, n, t))
                allowed = self.acl.is_authorized(srv, gw, bn, n)
                if "ev" in sealed:
                    if allowed and opened.get("sv") != truth:
                        problems.append(f"{where}: authorized value not recovered")
                    if not allowed and "sv" in opened:
                        problems.append(f"{where}: unauthorized value decrypted")
                elif opened.get("sv") != truth:
                    problems.append(f"{where}: plain value differs from ingested")
        return problems


def _check(sim: Simulation, assertion: dict) -> tuple[bool, Any]:
    kind = assertion["kind"]
    if kind == "confidentiality":
        problems = sim.confidentiality_violations(assertion["srv"])
        return not problems, problems
    if kind == "recovered":
        got = sim.recovered(assertion["srv"])
        return got == assertion["values"], got
    if kind == "decrypted_count":
        got = len(sim.recovered(assertion["srv"]))
        return got == assertion["equals"], got
    if kind == "message_count":
        got = sim.network.count(assertion["typ"], assertion.get("src"), assertion.get("dst"))
        return got == assertion["equals"], got
    if kind == "actuator":
        got = sim.gateway(assertion["gw"]).actuators.get(assertion["bn"])
        return got == assertion["parameters"], got
    if kind == "pending":
        got = len(sim.service(assertion["srv"]).pending)
        return got == assertion["equals"], got
    if kind == "responses":
        got = len(sim.service(assertion["srv"]).responses)
        return got == assertion["equals"], got
    if kind == "stored_items":
        got = len(sim.cloud.store)
        return got == assertion["equals"], got
    if kind == "all_valid":
        problems = []
        for delivery in sim.network.log:
            for message in unbatch(parse_wire(delivery.text)):
                report = validate(message)
                if not report.ok:
                    problems.append({"delivery": delivery.index, "violations": [str(v) for v in report.violations]})
        return not problems, problems
    raise ScenarioError(f"unknown assertion kind {kind!r}")


def _node_states(sim: Simulation) -> dict[str, dict]:
    nodes: dict[str, dict] = {
        sim.cloud.entity: {
            "role": "cloud",
            "stored_items": len(sim.cloud.store),
            "wrapped_keys": len(sim.cloud.keys),
            "diagnostics": sim.cloud.diagnostics,
        }
    }
    for gw, node in sim.gateways.items():
        nodes[gw] = {
            "role": "gateway",
            "data_keys": [
                {"bn": bn, "n": n, "kid": key.kid, "window": list(key.window)}
                for bn, n in node.keystore.streams()
                for key in node.keystore.keys_for(bn, n)
            ],
            "actuators": node.actuators,
            "diagnostics": node.diagnostics,
        }
    for srv, node in sim.services.items():
        nodes[srv] = {
            "role": "service",
            "items": len(node.results),
            "recovered": sim.recovered(srv),
            "kids": sorted(node.keyring.kids()),
            "pending": sorted(node.pending),
            "responses": [resp.doc for _, resp in node.responses],
            "diagnostics": node.diagnostics,
        }
    return nodes


def run_scenario(scenario: Union[str, Path, dict], raise_on_failure: bool = True) -> ScenarioReport:
    """Execute ``scenario``; raises AssertionFailed at the first failing assertion."""
    scenario = load_scenario(scenario)
    sim = Simulation(scenario)
    for index, event in enumerate(scenario.get("events", [])):
        try:
            sim.apply(event)
        except SensorCloudError as exc:
            raise ScenarioError(f"event {index} ({event['do']}) failed: {exc}", event=index, cause=exc.code) from exc
    report = ScenarioReport(
        name=scenario.get("name", ""),
        simulation=sim,
        deliveries=[d.to_dict() for d in sim.network.log],
        notifications=[n.to_dict() for n in sim.network.notifications],
    )
    report.nodes = _node_states(sim) if (sim.gateways or sim.services or sim.network.log) else {}
    for assertion in scenario.get("assertions", []):
        ok, observed = _check(sim, assertion)
        report.assertions.append({**assertion, "ok": ok, "observed": observed})
        if not ok and raise_on_failure:
            raise AssertionFailed(f"assertion failed: {json.dumps(assertion, sort_keys=True)}", report=report)
    return report
