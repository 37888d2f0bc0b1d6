import json
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agcluster.netmodel import (
    Exploit,
    FactCatalog,
    NetworkSpec,
    SpecError,
    canonical_state_key,
    facts_to_mask,
    intern_fact,
    key_of_mask,
    load_spec,
    mask_to_facts,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
)

# frozen from a run of the implemented hash; guards against accidental change
EMPTY_KEY = 0x7076A68E75884D4E40BDEFD94169E6CA
KEY_0 = 0xB5D2EB44952E55CF05A19A974EDFD211
KEY_1 = 0x812BB57E6E8F8EF851455D5B28122CD8


def test_intern_first_is_zero():
    cat = FactCatalog()
    assert intern_fact(cat, "root(web)") == 0


def test_intern_idempotent():
    cat = FactCatalog()
    a = intern_fact(cat, "root(web)")
    assert intern_fact(cat, "root(web)") == a
    assert len(cat) == 1


def test_intern_dense():
    cat = FactCatalog()
    assert [intern_fact(cat, "a"), intern_fact(cat, "b")] == [0, 1]
    assert len(cat) == 2
    assert max(cat.index.values()) == len(cat.entries) - 1


def test_intern_rejects_empty():
    with pytest.raises(ValueError):
        intern_fact(FactCatalog(), "")


def test_key_order_independent():
    assert canonical_state_key({1, 2}) == canonical_state_key({2, 1})
    assert canonical_state_key([2, 1]) == canonical_state_key((1, 2))


def test_key_constants():
    assert canonical_state_key(set()) == EMPTY_KEY
    assert canonical_state_key({0}) == KEY_0
    assert canonical_state_key({1}) == KEY_1
    assert KEY_0 != KEY_1
    assert KEY_0.bit_length() <= 128


def test_key_stable_across_processes():
    code = "from agcluster.netmodel import canonical_state_key as k; print(k({0}))"
    for seed in ("1", "2"):
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, env={"PYTHONHASHSEED": seed}, check=True
        )
        assert int(out.stdout) == KEY_0


@given(st.sets(st.integers(0, 200), max_size=40))
def test_mask_round_trip(facts):
    assert set(mask_to_facts(facts_to_mask(facts))) == facts
    assert list(mask_to_facts(facts_to_mask(facts))) == sorted(facts)
    assert key_of_mask(facts_to_mask(facts)) == canonical_state_key(facts)


@given(st.lists(st.integers(0, 50), max_size=20))
def test_key_permutation_invariant(ids):
    assert canonical_state_key(ids) == canonical_state_key(reversed(sorted(set(ids))))


def test_fig1_spec_valid(fig1):
    assert validate_spec(fig1) == []


def _spec(exploits, initial=frozenset({0}), n=3):
    cat = FactCatalog()
    for i in range(n):
        intern_fact(cat, f"f{i}")
    return NetworkSpec(catalog=cat, exploits=exploits, initial=initial)


def test_validate_empty_post():
    spec = _spec([Exploit(0, "bad", frozenset({0}), frozenset())])
    assert any("empty postconditions" in v for v in validate_spec(spec))


def test_validate_dangling_fact():
    spec = _spec([Exploit(0, "bad", frozenset({0}), frozenset({7}))])
    assert any("dangling fact" in v for v in validate_spec(spec))


def test_validate_overlap_empty_initial_duplicate_ids():
    spec = _spec(
        [Exploit(0, "a", frozenset({1}), frozenset({1, 2})), Exploit(0, "b", frozenset(), frozenset({2}))],
        initial=frozenset(),
    )
    v = validate_spec(spec)
    assert any("pre/post overlap" in x for x in v)
    assert any("empty initial" in x for x in v)
    assert any("duplicate exploit id" in x for x in v)


def test_generator_rejects_invalid_spec_with_same_list():
    from agcluster.expand import generate_sequential

    spec = _spec([Exploit(0, "bad", frozenset({0}), frozenset())])
    with pytest.raises(SpecError) as info:
        generate_sequential(spec)
    assert info.value.violations == validate_spec(spec)


def test_json_interning_order(tmp_path):
    doc = {
        "assets": [{"name": "web", "kind": "server"}],
        "facts": ["declared"],
        "initial": ["internet"],
        "exploits": [{"label": "x", "group": "g", "pre": ["internet"], "post": ["root(web)"]}],
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    spec = load_spec(path)
    assert spec.catalog.entries == ["declared", "internet", "root(web)"]
    assert spec.exploits[0].group == "g"
    assert spec.initial == {1}
    again = spec_from_dict(spec_to_dict(spec))
    assert again.catalog.entries == spec.catalog.entries
    assert again.checksum() == spec.checksum()


def test_load_spec_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope", encoding="utf-8")
    with pytest.raises(SpecError):
        load_spec(path)


def test_checksum_changes_with_exploits(fig1):
    other = spec_from_dict(spec_to_dict(fig1))
    assert other.checksum() == fig1.checksum()
    doc = spec_to_dict(fig1)
    doc["exploits"].pop()
    assert spec_from_dict(doc).checksum() != fig1.checksum()
