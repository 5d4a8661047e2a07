from __future__ import annotations

import dataclasses
import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adns.keys import SigningKey
from adns.ledger import (
    GapInSequence,
    Ledger,
    LedgerEntry,
    OpKind,
    OutOfRange,
    ReplayDivergence,
    TimeRegression,
    check_sequence,
    compute_root,
    read_ledger_file,
    replay,
    verify_receipt,
)
from adns.zone import records_digest, replay_records

from oracles import mth

KEY = SigningKey(b"\x07" * 32)


def entry(seq: int, t: int = 100, op: OpKind = OpKind.Resign, payload: bytes = b"{}") -> LedgerEntry:
    return LedgerEntry(seq, t, op, payload)


def filled(n: int) -> Ledger:
    led = Ledger(KEY)
    for i in range(n):
        led.append(entry(i, 100 + i, payload=f'{{"i":{i}}}'.encode()))
    return led


def test_empty_root():
    assert Ledger(KEY).root() == hashlib.sha256(b"").digest()


def test_first_append_root_is_leaf_hash():
    led = Ledger(KEY)
    e = entry(0)
    seq, root = led.append(e)
    assert seq == 0
    assert root == hashlib.sha256(b"\x00" + e.to_bytes()).digest()


def test_time_regression():
    led = filled(2)
    with pytest.raises(TimeRegression):
        led.append(entry(2, 50))


def test_gap_rejected_on_append():
    with pytest.raises(GapInSequence):
        filled(1).append(entry(5, 200))


def test_order_sensitivity():
    a, b = b'{"a":1}', b'{"b":2}'
    one, two = Ledger(KEY), Ledger(KEY)
    one.append(entry(0, payload=a)); one.append(entry(1, payload=b))
    two.append(entry(0, payload=b)); two.append(entry(1, payload=a))
    assert one.root() != two.root()


def test_ledger_time_clamps():
    led = filled(3)
    assert led.ledger_time(0) == led.last_time
    assert led.record(OpKind.Resign, {}, 10).ledger_time == led.entries[-2].ledger_time


@pytest.mark.parametrize("n", range(1, 18))
def test_root_matches_oracle(n):
    led = filled(n)
    leaves = [e.to_bytes() for e in led.entries]
    assert led.root() == mth(leaves)
    assert compute_root(led.entries) == mth(leaves)
    # prefix consistency
    for k in range(n + 1):
        assert led.root(k) == mth(leaves[:k])


def test_single_entry_receipt():
    led = filled(1)
    r = led.get_receipt(0)
    assert r.audit_path == () and r.root_digest == r.leaf_digest
    assert verify_receipt(led.entries[0].to_bytes(), r, KEY.public)


def test_every_receipt_in_seven_entry_tree():
    led = filled(7)
    root = mth([e.to_bytes() for e in led.entries])
    for seq, e in enumerate(led.entries):
        r = led.get_receipt(seq)
        assert r.root_digest == root and r.tree_size == 7
        assert verify_receipt(e.to_bytes(), r, KEY.public)
        assert verify_receipt(e.to_bytes(), type(r).from_json(r.to_json()), KEY.public)


def test_receipt_tampering():
    led = filled(7)
    e = led.entries[3]
    r = led.get_receipt(3)
    sib, side = r.audit_path[0]
    flipped = dataclasses.replace(r, audit_path=((bytes([sib[0] ^ 1]) + sib[1:], side),) + r.audit_path[1:])
    assert not verify_receipt(e.to_bytes(), flipped, KEY.public)
    assert not verify_receipt(led.entries[4].to_bytes(), r, KEY.public)
    assert not verify_receipt(e.to_bytes(), r, SigningKey(b"\x08" * 32).public)
    assert not verify_receipt(e.to_bytes(), dataclasses.replace(r, tree_size=8), KEY.public)
    wrong_side = dataclasses.replace(r, audit_path=((sib, "X"),) + r.audit_path[1:])
    assert not verify_receipt(e.to_bytes(), wrong_side, KEY.public)


def test_out_of_range():
    with pytest.raises(OutOfRange):
        filled(3).get_receipt(3)
    with pytest.raises(OutOfRange):
        filled(3).get_receipt(-1)


def test_file_persistence(tmp_path):
    path = tmp_path / "ledger.bin"
    led = Ledger(KEY, path)
    for i in range(5):
        led.record(OpKind.Resign, {"i": i}, 100 + i)
    assert read_ledger_file(path) == list(led.entries)
    reopened = Ledger(KEY, path)
    assert reopened.root() == led.root()
    reopened.record(OpKind.Resign, {"i": 5}, 200)
    assert len(read_ledger_file(path)) == 6


def test_entry_json_round_trip():
    e = entry(4, 9, OpKind.AcmeOrder, b'{"action":"clear","names":[]}')
    assert LedgerEntry.from_json(e.to_json()) == e
    assert LedgerEntry.from_bytes(e.to_bytes()) == e


def test_check_sequence():
    es = list(filled(4).entries)
    assert check_sequence(es) == es
    with pytest.raises(GapInSequence):
        check_sequence(es[:1] + es[2:])
    with pytest.raises(TimeRegression):
        check_sequence([es[0], dataclasses.replace(es[1], ledger_time=0)])


def test_replay_of_live_zone(l7_world):
    for name, server in l7_world.servers.items():
        entries = server.ledger.entries
        assert replay(entries) == server.zone.served_digest(), name
        assert records_digest(replay_records(entries)) == server.zone.digest()


def test_replay_gap_and_divergence(l7_world):
    entries = list(l7_world.servers["service.conf"].ledger.entries)
    with pytest.raises(GapInSequence):
        replay(entries[:2] + entries[3:])
    reg = next(i for i, e in enumerate(entries) if e.op_kind == OpKind.RegisterService)
    # Re-attribute a registration to a time long after its report was issued:
    # the recorded freshness check no longer holds.
    late = [dataclasses.replace(e, ledger_time=e.ledger_time + 10**7) if i >= reg else e
            for i, e in enumerate(entries)]
    with pytest.raises(ReplayDivergence):
        replay(late)
    # Configure anywhere but first is a divergence too.
    with pytest.raises(ReplayDivergence):
        replay(entries + [dataclasses.replace(entries[0], seq=len(entries), ledger_time=entries[-1].ledger_time)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.binary(max_size=40), min_size=1, max_size=40), st.data())
def test_receipts_verify_for_any_tree(payloads, data):
    led = Ledger(KEY)
    for i, p in enumerate(payloads):
        led.append(LedgerEntry(i, i, OpKind.Resign, p))
    seq = data.draw(st.integers(0, len(payloads) - 1))
    r = led.get_receipt(seq)
    assert r.root_digest == mth([e.to_bytes() for e in led.entries])
    assert verify_receipt(led.entries[seq].to_bytes(), r, KEY.public)
