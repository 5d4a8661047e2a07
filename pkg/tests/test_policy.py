from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adns.policy import (
    ROLE_TABLE_POLICY,
    Accessor,
    BinOp,
    Hex,
    ListLit,
    Literal,
    MissingClaim,
    Not,
    PolicyDocument,
    PolicySyntaxError,
    TypeMismatch,
    check_inheritance,
    eval_all,
    eval_policy,
    parse_policy,
    pretty,
)

FE = "0x" + "00" * 28


def claims(measurement: int, hostdata: int, **extra) -> dict:
    return {"measurement": f"{FE}{measurement:08x}", "hostdata": f"{FE}{hostdata:08x}", **extra}


FRONT = claims(0xFEEDFACE, 0xDEADC0DE)
BACK = claims(0x8BADF00D, 0xBAADF00D)


def test_simple_policy_parses():
    ast = parse_policy('claims["measurement"] == 0xFEEDFACE && claims["hostdata"] == 0xDEADC0DE')
    assert ast == BinOp(
        "&&",
        BinOp("==", Accessor("claims", "measurement"), Literal(Hex(0xFEEDFACE))),
        BinOp("==", Accessor("claims", "hostdata"), Literal(Hex(0xDEADC0DE))),
    )
    assert parse_policy("true") == Literal(True)


@pytest.mark.parametrize("text", ['claims[', 'claims["a"] ==', '&& true', 'true true', '"unterminated',
                                  'config[1]', '[1, 2', 'foo["x"]', '(true'])
def test_syntax_errors_carry_position(text):
    with pytest.raises(PolicySyntaxError) as info:
        parse_policy(text)
    assert 0 <= info.value.position <= len(text)


def test_role_table_policy():
    assert eval_policy(ROLE_TABLE_POLICY, FRONT, {"role": "front-end"})
    assert eval_policy(ROLE_TABLE_POLICY, BACK, {"role": "back-end"})
    assert not eval_policy(ROLE_TABLE_POLICY, FRONT, {"role": "back-end"})
    assert not eval_policy(ROLE_TABLE_POLICY, BACK, {"role": "front-end"})
    assert not eval_policy(ROLE_TABLE_POLICY, FRONT, {"role": "other"})


def _table_lookup(role: str, c: dict) -> bool:
    # What a map-lookup formulation of the role table would compute.
    table = {"front-end": (0xDEADC0DE, 0xFEEDFACE), "back-end": (0xBAADF00D, 0x8BADF00D)}
    if role not in table:
        return False
    hostdata, measurement = table[role]
    return int(c["hostdata"], 16) == hostdata and int(c["measurement"], 16) == measurement


@given(st.sampled_from(["front-end", "back-end", "x"]),
       st.sampled_from([0xFEEDFACE, 0x8BADF00D, 1]), st.sampled_from([0xDEADC0DE, 0xBAADF00D, 2]))
def test_role_table_disjunction_equals_lookup(role, m, h):
    c = claims(m, h)
    assert eval_policy(ROLE_TABLE_POLICY, c, {"role": role}) == _table_lookup(role, c)


def test_missing_claim_is_error_not_false():
    with pytest.raises(MissingClaim):
        eval_policy('claims["absent"] == 1', FRONT)
    # both sides are evaluated, so short-circuiting cannot hide it
    with pytest.raises(MissingClaim):
        eval_policy('false && claims["absent"] == 1', FRONT)


@pytest.mark.parametrize("text", ['claims["measurement"] == "feedface"', 'claims["svn"] == true',
                                  '!claims["svn"]', 'claims["svn"]', 'claims["svn"] in claims["svn"]',
                                  '1 && true'])
def test_type_mismatch(text):
    with pytest.raises(TypeMismatch):
        eval_policy(text, {**FRONT, "svn": 7})


def test_membership():
    c = {"platform": "sim-snp", "origins": ["www:https:443:1"]}
    assert eval_policy('claims["platform"] in ["sim-sgx", "sim-snp"]', c)
    assert eval_policy('"www:https:443:1" in claims["origins"]', c)
    assert not eval_policy('"x" in claims["origins"]', c)


def test_hex_claim_compares_by_value():
    assert eval_policy('claims["m"] == 0xfeedface', {"m": "0x00FEEDFACE"})
    assert not eval_policy('claims["m"] == 0xfeedface', {"m": "0xfeedfacf"})


APEX = 'claims["platform"] in ["sim-sgx", "sim-snp"]'
MID = 'claims["svn"] != 0'
LEAF = 'config["role"] == "front-end"'


def test_inheritance_rules():
    parent = PolicyDocument("delegation", "conf", MID, (("", APEX),))
    good = PolicyDocument("delegation", "service.conf", LEAF, (("", APEX), ("conf", MID)))
    assert check_inheritance(good, parent)
    assert not check_inheritance(PolicyDocument("delegation", "service.conf", LEAF, (("conf", MID),)), parent)
    spaced = PolicyDocument("delegation", "service.conf", LEAF, (("", APEX), ("conf", MID.replace("!=", " != "))))
    assert not check_inheritance(spaced, parent)
    reordered = PolicyDocument("delegation", "service.conf", LEAF, (("conf", MID), ("", APEX)))
    assert not check_inheritance(reordered, parent)


def test_eval_all():
    c, cfg = {"platform": "sim-snp", "svn": 7}, {"role": "front-end"}
    doc = PolicyDocument("delegation", "service.conf", LEAF, (("", APEX), ("conf", MID)))
    assert eval_all(doc, c, cfg)
    assert not eval_all(doc, {**c, "platform": "real"}, cfg)
    island = PolicyDocument("delegation", "conf", LEAF)
    for role in ("front-end", "back-end"):
        assert eval_all(island, c, {"role": role}) == eval_policy(LEAF, c, {"role": role})


def test_document_json_round_trip():
    doc = PolicyDocument("delegation", "service.conf", LEAF, (("", APEX), ("conf", MID)))
    assert PolicyDocument.from_json(doc.to_json()) == doc
    with pytest.raises(ValueError):
        PolicyDocument("bogus", "x", "true")


# -- properties -------------------------------------------------------------

KEYS = ["a", "b", "c"]
claim_sets = st.fixed_dictionaries({k: st.integers(0, 3) for k in KEYS})
literals = st.one_of(st.booleans(), st.integers(0, 2**40), st.integers(0, 2**64).map(Hex),
                     st.text(alphabet='abc"\\ xyz-', max_size=8)).map(Literal)


def _exprs(leaf):
    return st.recursive(
        leaf,
        lambda inner: st.one_of(
            inner.map(Not),
            st.builds(BinOp, st.sampled_from(["&&", "||"]), inner, inner),
        ),
        max_leaves=6,
    )


atoms = st.one_of(
    st.builds(lambda k, v: BinOp("==", Accessor("claims", k), Literal(v)), st.sampled_from(KEYS), st.integers(0, 3)),
    st.builds(lambda k, vs: BinOp("in", Accessor("claims", k), ListLit(tuple(Literal(v) for v in vs))),
              st.sampled_from(KEYS), st.lists(st.integers(0, 3), min_size=1, max_size=3)),
    st.booleans().map(Literal),
)
bool_policies = _exprs(atoms)
any_exprs = _exprs(st.one_of(atoms, literals, st.builds(Accessor, st.sampled_from(["claims", "config"]),
                                                        st.text(max_size=5))))


@given(any_exprs)
def test_pretty_round_trip(expr):
    text = pretty(expr)
    assert parse_policy(text) == expr
    assert pretty(parse_policy(text)) == text


@given(st.lists(bool_policies.map(pretty), min_size=1, max_size=3), bool_policies.map(pretty),
       st.lists(claim_sets, min_size=20, max_size=20))
def test_inheritance_implies_subset(parent_chain, child_own, samples):
    *inherited, parent_own = parent_chain
    parent = PolicyDocument("delegation", "p", parent_own, tuple((f"z{i}", t) for i, t in enumerate(inherited)))
    child = PolicyDocument("delegation", "c.p", child_own, parent.child_inheritance())
    assert check_inheritance(child, parent)
    for c in samples:
        if eval_all(child, c):
            assert eval_all(parent, c)


@given(st.lists(bool_policies.map(pretty), min_size=1, max_size=4), claim_sets)
def test_eval_all_implies_each_member(chain, c):
    doc = PolicyDocument("delegation", "z", chain[-1], tuple((str(i), t) for i, t in enumerate(chain[:-1])))
    if eval_all(doc, c):
        assert all(eval_policy(t, c) for t in chain)
