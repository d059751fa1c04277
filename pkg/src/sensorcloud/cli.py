"""Command-line harness: codec and crypto operations on files, scenario runs, conformance vectors.

Every subcommand reads files (``-`` for standard input), writes its result to
standard output or ``--out``, exits 0 on success and, on failure, exits
non-zero with a JSON error report on standard error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from .codec import base64url_decode, base64url_encode, canonicalize, encode_wire, parse_wire, pem_encode_public_key
from .envelope import (
    VerificationResult,
    decrypt_message,
    encrypt_fields,
    encrypt_readings_array,
    sign_message,
    verify_signature,
)
from .errors import AssertionFailed, SensorCloudError
from .keys import PublicKeyDirectory
from .messages import batch, validate, validate_header
from .primitives import FOREVER, DataKey, RandomNonces, SigningKeyPair
from .scenario import demo_scenario, run_scenario
from .vectors import emit_conformance_vectors

EXIT_OK = 0
EXIT_NEGATIVE = 1  # the operation ran but the verdict is negative (invalid, bad signature, failed assertion)
EXIT_ERROR = 2


class CliError(Exception):
    def __init__(self, report: dict, status: int = EXIT_ERROR) -> None:
        super().__init__(report.get("message", ""))
        self.report = report
        self.status = status


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _read_doc(path: str):
    return parse_wire(_read_text(path))


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_data_key(path: str) -> DataKey:
    record = json.loads(_read_text(path))
    return DataKey(base64url_decode(record["k"]), int(record.get("start", 0)), int(record.get("end", FOREVER)))


def _data_key_record(key: DataKey) -> dict:
    return {"kid": key.kid, "k": base64url_encode(key.material), "start": key.start, "end": key.end}


# -- subcommands


def cmd_keygen(args: argparse.Namespace) -> int:
    rng = random.Random(args.seed).randbytes if args.seed is not None else None
    if args.kind == "data":
        key = DataKey.generate(args.start, args.end, rng) if rng else DataKey.generate(args.start, args.end)
        _write(json.dumps(_data_key_record(key), indent=2), args.out)
        return EXIT_OK
    if not args.entity:
        raise CliError({"error": "UsageError", "message": "signing keys need --entity"})
    keypair = SigningKeyPair.generate(args.entity, rng)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    private_path = out_dir / f"{args.entity}.key"
    public_path = out_dir / f"{args.entity}.pem"
    private_path.write_text(keypair.private_pem(), encoding="ascii")
    public_path.write_text(pem_encode_public_key(keypair.public_key), encoding="ascii")
    _write(json.dumps({"entity": args.entity, "private": str(private_path), "public": str(public_path)}), None)
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    doc = _read_doc(args.input)
    if isinstance(doc, dict) and "pl" in doc:
        text = encode_wire(doc)
    else:
        messages = doc if isinstance(doc, list) else [doc]
        text = encode_wire(batch(messages).to_doc())
    _write(text, args.out)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    doc = _read_doc(args.input)
    report = validate_header(doc) if isinstance(doc, dict) and "pl" in doc else validate(doc)
    _write(json.dumps(report.to_dict(), indent=2), args.out)
    return EXIT_OK if report.ok else EXIT_NEGATIVE


def cmd_canonicalize(args: argparse.Namespace) -> int:
    data = canonicalize(_read_doc(args.input))
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data + b"\n")
    return EXIT_OK


def cmd_encrypt(args: argparse.Namespace) -> int:
    doc = _read_doc(args.input)
    key = _load_data_key(args.key)
    if args.whole_e:
        sealed = encrypt_readings_array(doc, key, RandomNonces())
    else:
        if not args.field:
            raise CliError({"error": "UsageError", "message": "name at least one --field (or use --whole-e)"})
        sealed = encrypt_fields(doc, args.scope, args.field, key, RandomNonces())
    _write(encode_wire(sealed), args.out)
    return EXIT_OK


def cmd_decrypt(args: argparse.Namespace) -> int:
    doc = _read_doc(args.input)
    keys = {key.kid: key for key in map(_load_data_key, args.key)}
    plain, missing = decrypt_message(doc, keys)
    _write(encode_wire(plain), args.out)
    if missing:
        sys.stderr.write(json.dumps({"undecrypted_kids": missing}) + "\n")
    return EXIT_OK


def cmd_sign(args: argparse.Namespace) -> int:
    keypair = SigningKeyPair.from_private_pem(args.entity, _read_text(args.key))
    signed = sign_message(_read_doc(args.input), keypair, include_kid=True if args.include_kid else None)
    _write(encode_wire(signed), args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    directory = PublicKeyDirectory.load_dir(args.keys) if args.keys else PublicKeyDirectory()
    for binding in args.pubkey:
        entity, _, path = binding.partition("=")
        directory.register(entity, _read_text(path))
    result = verify_signature(_read_doc(args.input), directory)
    _write(json.dumps({"result": result.value}), args.out)
    return EXIT_OK if result is VerificationResult.VERIFIED else EXIT_NEGATIVE


def cmd_run_scenario(args: argparse.Namespace) -> int:
    scenario = demo_scenario() if args.demo else json.loads(_read_text(args.scenario))
    if args.seed is not None:
        scenario["seed"] = args.seed
    status = EXIT_OK
    try:
        report = run_scenario(scenario)
    except AssertionFailed as exc:
        report = exc.report
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        status = EXIT_NEGATIVE
    if args.log:
        Path(args.log).write_bytes(report.delivery_log_bytes())
    _write(json.dumps(report.to_dict(), indent=2, sort_keys=True), args.out)
    return status


def cmd_emit_vectors(args: argparse.Namespace) -> int:
    paths = emit_conformance_vectors(args.seed, args.out_dir)
    _write(json.dumps({"files": [str(p) for p in paths]}), None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensorcloud", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str, takes_input: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        if takes_input:
            p.add_argument("input", help="input file, '-' for standard input")
        p.add_argument("-o", "--out", help="output file (default: standard output)")
        p.set_defaults(handler=handler)
        return p

    p = command("keygen", cmd_keygen, "generate a P-256 signing key pair or a 256-bit data key", takes_input=False)
    p.add_argument("kind", choices=["signing", "data"])
    p.add_argument("--entity", help="entity id owning the signing key")
    p.add_argument("--out-dir", help="directory for <entity>.key and <entity>.pem")
    p.add_argument("--start", type=int, default=0, help="data key validity start (ms)")
    p.add_argument("--end", type=int, default=FOREVER, help="data key validity end (ms, inclusive)")
    p.add_argument("--seed", type=int, help="deterministic generation (tests only)")

    command("encode", cmd_encode, "wrap a message (or list of messages) in a transmission header, compact wire text")
    command("validate", cmd_validate, "validate a message or transmission header against the message layouts")
    command("canonicalize", cmd_canonicalize, "write the canonical bytes used for signing")

    p = command("encrypt", cmd_encrypt, "encrypt members of one object into an ev array")
    p.add_argument("--key", required=True, help="data key file (from 'keygen data')")
    p.add_argument("--scope", default="", help="JSON pointer of the object, e.g. /e/0 (default: top level)")
    p.add_argument("--field", action="append", default=[], help="member to encrypt (repeatable)")
    p.add_argument("--whole-e", action="store_true", help="encrypt the whole readings array")

    p = command("decrypt", cmd_decrypt, "decrypt every ev element whose kid matches a given key")
    p.add_argument("--key", action="append", default=[], required=True, help="data key file (repeatable)")

    p = command("sign", cmd_sign, "append a signature block")
    p.add_argument("--key", required=True, help="PKCS#8 PEM private key")
    p.add_argument("--entity", required=True, help="signer's entity id")
    p.add_argument("--include-kid", action="store_true", help="name the signer in the header even if gw is set")

    p = command("verify", cmd_verify, "verify a signature block")
    p.add_argument("--keys", help="directory of <entity>.pem public keys")
    p.add_argument("--pubkey", action="append", default=[], metavar="ENTITY=PEM", help="one public key (repeatable)")

    p = command("run-scenario", cmd_run_scenario, "run a simulation scenario and print its report", takes_input=False)
    p.add_argument("scenario", nargs="?", help="scenario JSON file")
    p.add_argument("--demo", action="store_true", help="run the built-in demo scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--log", help="write the delivery log here")

    p = command("emit-vectors", cmd_emit_vectors, "write conformance vector files", takes_input=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run-scenario" and not (args.demo or args.scenario):
        parser.error("run-scenario needs a scenario file or --demo")
    try:
        return args.handler(args)
    except CliError as exc:
        report, status = exc.report, exc.status
    except SensorCloudError as exc:
        report, status = exc.to_dict(), EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        report, status = {"error": type(exc).__name__, "message": str(exc)}, EXIT_ERROR
    sys.stderr.write(json.dumps(report) + "\n")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
