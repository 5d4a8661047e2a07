"""Command-line entry points: ``adns``, ``adns-verify`` and ``adns-scenario``."""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
import threading
import time

from . import attest, verifier
from .dnswire import Name
from .ledger import compute_root, read_ledger_file
from .netio import Listeners, SocketTransport
from .policy import PolicyError, eval_policy


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _seed(text: str | None) -> int:
    return int(text, 16) if text else 0


def _read_report(path: str) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return bytes.fromhex(raw.decode("ascii").strip())
    except (UnicodeDecodeError, ValueError):
        return raw


# ---------------------------------------------------------------------------
# adns
# ---------------------------------------------------------------------------


def _serve(args) -> int:
    from .server import AdnsServer
    from .zone import load_config

    if args.ledger and os.path.exists(args.ledger) and os.path.getsize(args.ledger):
        print(f"refusing to start: ledger {args.ledger} is not empty", file=sys.stderr)
        return 2
    seed = _seed(args.seed)
    platform = None if args.platform == "none" else attest.SimPlatform(args.platform, f"adns-sim:{seed}".encode())
    clock = (lambda: int(time.time())) if args.virtual_time is None else (lambda: args.virtual_time)
    transport = SocketTransport()
    ca = (lambda m, p, b, h: transport.rpc(args.ca, m, p, b, headers=h)) if args.ca else None
    server = AdnsServer(random.Random(seed), clock, platform, ca=ca, ledger_path=args.ledger)
    if args.config:
        server.configure(load_config(args.config))
    listeners = Listeners()
    udp, tcp = listeners.dns(server, args.dns_udp, args.dns_tcp)
    rpc = listeners.https(lambda m, t, b, h, ck: server.http(m, t, b, ck), server.tls_key, args.rpc)
    _dump({"dns_udp": udp, "dns_tcp": tcp, "rpc": rpc, "endorsements": server.endorsements()})
    sys.stdout.flush()
    stop = threading.Event()
    try:
        stop.wait(args.duration if args.duration else None)
    except KeyboardInterrupt:
        pass
    finally:
        listeners.close()
    return 0


def _claim_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_claim_text(v) for v in value)
    return str(value)


def _attest_verify(args) -> int:
    raw = _read_report(args.report)
    if args.anchors:
        with open(args.anchors, encoding="utf-8") as fh:
            anchors = attest.anchors_from_json(json.load(fh))
    else:
        seed = f"adns-sim:{_seed(args.sim_seed)}".encode()
        anchors = tuple(attest.SimPlatform(f, seed).anchor for f in (attest.SIM_SGX, attest.SIM_SNP))
    try:
        report = attest.report_decode(raw)
        now = args.now if args.now is not None else report.time
        claims = attest.verify_report(report, anchors, now, args.max_age)
    except attest.AttestationError as exc:
        if args.json:
            _dump({"ok": False, "code": exc.code, "message": str(exc)})
        else:
            print(f"error={exc.code}", file=sys.stderr)
            print(str(exc), file=sys.stderr)
        return 4
    out = {"ok": True, "claims": claims}
    if args.policy:
        with open(args.policy, encoding="utf-8") as fh:
            text = fh.read()
        try:
            out["policy"] = eval_policy(text, claims, report.config.as_map())
        except PolicyError as exc:
            out["policy"] = False
            out["policy_error"] = f"{type(exc).__name__}: {exc}"
        out["ok"] = bool(out["policy"])
    if args.json:
        _dump(out)
    else:
        for key in sorted(claims):
            print(f"{key}={_claim_text(claims[key])}")
        if "policy" in out:
            print(f"policy={_claim_text(out['policy'])}", file=sys.stderr)
            if "policy_error" in out:
                print(out["policy_error"], file=sys.stderr)
    return 0 if out["ok"] else 5


def _read_entries(path: str):
    """Binary ledger file, or a JSON / JSON-lines dump of entries."""
    from .ledger import LedgerEntry

    with open(path, "rb") as fh:
        head = fh.read(1)
    if head in (b"[", b"{"):
        data = verifier.load_json(path)
        items = data["entries"] if isinstance(data, dict) else data
        return [LedgerEntry.from_json(e) for e in items]
    return read_ledger_file(path)


def _ledger_dump(args) -> int:
    from .zone import load_config, records_digest, replay_records

    entries = _read_entries(args.ledger)
    for e in entries:
        sys.stdout.write(json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) + "\n")
    summary = {"tree_size": len(entries)}
    if entries:
        summary["root"] = compute_root(entries).hex()
        try:
            cfg = load_config(args.config) if args.config else None
            summary["replay_digest"] = records_digest(replay_records(entries, cfg))
        except Exception as exc:  # report, do not crash, on a divergent ledger
            summary["replay_error"] = f"{type(exc).__name__}: {exc}"
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return 0 if "replay_error" not in summary else 7


def adns_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="adns", description="Attested DNS instance tools.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run one aDNS instance on loopback sockets")
    s.add_argument("--config", help="zone bootstrap JSON; omit to wait for /configure")
    s.add_argument("--dns-udp", default="127.0.0.1:5353")
    s.add_argument("--dns-tcp", default="127.0.0.1:5353")
    s.add_argument("--rpc", default="127.0.0.1:8443")
    s.add_argument("--seed", help="hex seed for key generation")
    s.add_argument("--platform", default=attest.SIM_SNP, choices=[attest.SIM_SGX, attest.SIM_SNP, "none"])
    s.add_argument("--ledger", help="append-only ledger file")
    s.add_argument("--ca", help="mock CA RPC address")
    s.add_argument("--virtual-time", type=int, help="freeze the clock at this time")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(func=_serve)

    a = sub.add_parser("attest", help="attestation report tools")
    asub = a.add_subparsers(dest="attest_command", required=True)
    v = asub.add_parser("verify", help="verify a report and print its claims")
    v.add_argument("report", help="report file (binary or hex)")
    v.add_argument("--anchors", help="platform anchors JSON (default: sim anchors)")
    v.add_argument("--sim-seed", help="hex seed of the simulated platforms")
    v.add_argument("--now", type=int)
    v.add_argument("--max-age", type=int, default=attest.DEFAULT_MAX_AGE)
    v.add_argument("--policy", help="policy file evaluated over the claims")
    v.add_argument("--json", action="store_true", help="print one JSON document instead of key=value lines")
    v.set_defaults(func=_attest_verify)

    ld = sub.add_parser("ledger", help="ledger tools")
    lsub = ld.add_subparsers(dest="ledger_command", required=True)
    d = lsub.add_parser("dump", help="print one JSON object per entry; root and replay digest go to stderr")
    d.add_argument("ledger", help="binary ledger file or a JSON dump")
    d.add_argument("--config", help="zone config used for replay")
    d.set_defaults(func=_ledger_dump)

    args = p.parse_args(argv)
    return args.func(args)


# ---------------------------------------------------------------------------
# adns-verify
# ---------------------------------------------------------------------------


def _store_from_args(args) -> verifier.TrustStore:
    if args.trust:
        store = verifier.TrustStore.from_json(verifier.load_json(args.trust))
    else:
        store = verifier.TrustStore()
    if args.discovery:
        store.discovery = args.discovery
    if args.policy:
        with open(args.policy, encoding="utf-8") as fh:
            store.local_policies[Name.from_text(args.name).lower()] = fh.read().strip()
    for item in args.pin:
        zone, _, keyfile = item.partition("=")
        with open(keyfile, encoding="utf-8") as fh:
            store.pin(zone, bytes.fromhex(fh.read().strip()))
    return store


def verify_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="adns-verify", description="Verify an attested service name.")
    p.add_argument("name")
    p.add_argument("--port", type=int, default=443)
    p.add_argument("--proto", default="https")
    p.add_argument("--resolver", action="append", default=[], help="root server address (repeatable)")
    p.add_argument("--trust", help="trust store JSON (root DS, anchors, aDNS policy)")
    p.add_argument("--policy", help="local policy file for NAME")
    p.add_argument("--discovery", choices=["off", "trust-parent", "prompt"])
    p.add_argument("--pin", action="append", default=[], metavar="ZONE=KEYFILE")
    p.add_argument("--route", action="append", default=[], metavar="ADDR=HOST:PORT",
                   help="map a published address to a reachable socket")
    p.add_argument("--now", type=int, help="verification time (default: wall clock)")
    p.add_argument("--fragments", action="store_true", help="fetch ATTEST via AAAA fragments")
    p.add_argument("--audit", metavar="LEDGER_DUMP", help="ledger dump JSON to replay")
    p.add_argument("--snapshot", help="served zone snapshot JSON for --audit")
    p.add_argument("--json", action="store_true")
    args = p.parse_args(argv)

    out: dict = {"name": args.name}
    code = 0
    if args.audit:
        dump = verifier.load_json(args.audit)
        entries = dump["entries"] if isinstance(dump, dict) else dump
        snapshot = verifier.load_json(args.snapshot) if args.snapshot else None
        if isinstance(snapshot, dict):
            snapshot = snapshot["records"]
        signed_root = dump.get("signed_root") if isinstance(dump, dict) else None
        key = bytes.fromhex(dump["receipt_key"]) if isinstance(dump, dict) and "receipt_key" in dump else None
        verdict = verifier.audit(entries, snapshot, signed_root, (), key)
        out["audit"] = verdict.to_json()
        if not verdict.clean:
            code = verifier.AuditDivergence.exit_code
    if args.resolver:
        store = _store_from_args(args)
        routes = dict(r.split("=", 1) for r in args.route)
        clock = (lambda: args.now) if args.now is not None else (lambda: int(time.time()))
        resolver = verifier.Resolver(SocketTransport(routes=routes), args.resolver, store, clock)

        def approve(text: str) -> bool:
            print(f"served policy for {args.name}:\n{text}", file=sys.stderr)
            return input("accept this policy? [y/N] ").strip().lower() == "y"

        try:
            v = verifier.verify_service(resolver, args.name, args.proto, args.port, approve, args.fragments)
            out["service"] = v.to_json()
        except verifier.VerifierError as exc:
            out["error"] = {"code": exc.code, "message": str(exc)}
            code = code or exc.exit_code
    if args.json:
        _dump(out)
    else:
        if "service" in out:
            s = out["service"]
            print(f"OK {args.name}: {len(s['expected_keys'])} key(s), addresses {', '.join(s['addresses'])}")
        if "error" in out:
            print(f"FAIL {args.name}: {out['error']['code']}: {out['error']['message']}")
        if "audit" in out:
            a = out["audit"]
            state = "clean" if a["clean"] else "findings: " + ", ".join(f["finding"] for f in a["findings"])
            print(f"audit {state} ({len(a['registrations'])} registrations)")
    if not args.resolver and not args.audit:
        p.error("nothing to do: give --resolver and/or --audit")
    return code


# ---------------------------------------------------------------------------
# adns-scenario
# ---------------------------------------------------------------------------


def scenario_main(argv=None) -> int:
    from .harness.scenarios import SCENARIOS, run

    p = argparse.ArgumentParser(prog="adns-scenario", description="Run seeded aDNS scenarios.")
    p.add_argument("scenario", choices=[*SCENARIOS, "all"])
    p.add_argument("--seed", default="0", help="hex seed")
    p.add_argument("--real-sockets", action="store_true")
    p.add_argument("--out", default="adns-scenario-out", help="output directory")
    args = p.parse_args(argv)
    names = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    start = time.monotonic()
    try:
        world = run(names, _seed(args.seed), args.real_sockets, args.out)
    except Exception as exc:  # any failure is a nonzero exit
        print(f"scenario failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    elapsed = time.monotonic() - start
    for event in world.transcript.events:
        print(f"[{event['virtual_time']}] {event['actor']}: {event['event']}")
    digests = {z: world.ledger_digest(z) for z in sorted(world.servers)}
    print(json.dumps({"ledger_digests": digests, "elapsed_s": round(elapsed, 3), "out": args.out}, sort_keys=True))
    return 0


def _entry(fn):
    def main() -> None:
        sys.exit(fn())

    return main


adns = _entry(adns_main)
adns_verify = _entry(verify_main)
adns_scenario = _entry(scenario_main)
