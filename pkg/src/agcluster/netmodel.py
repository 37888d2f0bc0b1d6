"""Network/vulnerability input model and canonical state identity.

Facts are opaque strings interned into dense integer ids. A state is a set
of fact ids; its identity everywhere downstream is a 128-bit content hash
over the sorted id sequence (see :func:`canonical_state_key`).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

StateKey = int
FactId = int


class SpecError(ValueError):
    """Raised when a network spec fails validation."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid network spec: " + "; ".join(self.violations))


@dataclass
class FactCatalog:
    entries: list[str] = field(default_factory=list)
    index: dict[str, FactId] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, s: str) -> bool:
        return s in self.index

    def intern(self, s: str) -> FactId:
        return intern_fact(self, s)

    def id_of(self, s: str) -> FactId:
        return self.index[s]

    def name(self, fid: FactId) -> str:
        return self.entries[fid]

    def checksum(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for s in self.entries:
            h.update(s.encode("utf-8"))
            h.update(b"\x00")
        return int.from_bytes(h.digest(), "little")


def intern_fact(catalog: FactCatalog, s: str) -> FactId:
    if not isinstance(s, str) or not s:
        raise ValueError("fact string must be non-empty")
    fid = catalog.index.get(s)
    if fid is None:
        fid = len(catalog.entries)
        catalog.entries.append(s)
        catalog.index[s] = fid
    return fid


@dataclass(frozen=True)
class Exploit:
    id: int
    label: str
    pre: frozenset[FactId]
    post: frozenset[FactId]
    group: Optional[str] = None


@dataclass(frozen=True)
class Asset:
    name: str
    kind: str


@dataclass
class NetworkSpec:
    catalog: FactCatalog
    exploits: list[Exploit]
    initial: frozenset[FactId]
    assets: list[Asset] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._masks: Optional[list[tuple[int, int, int]]] = None

    @property
    def masks(self) -> list[tuple[int, int, int]]:
        """(exploit id, pre bitmask, post bitmask) in expansion order."""
        if self._masks is None:
            self._masks = [(e.id, facts_to_mask(e.pre), facts_to_mask(e.post)) for e in self.exploits]
        return self._masks

    def checksum(self) -> int:
        """Checksum over the fact catalog and the exploit table.

        Two workers agree on wire messages only if both tables match, since
        edges carry bare exploit ids.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(self.catalog.checksum().to_bytes(8, "little"))
        for e in self.exploits:
            h.update(struct.pack("<III", e.id, len(e.pre), len(e.post)))
            h.update(_pack_ids(sorted(e.pre)))
            h.update(_pack_ids(sorted(e.post)))
        return int.from_bytes(h.digest(), "little")

    def root_facts(self) -> tuple[FactId, ...]:
        return tuple(sorted(self.initial))

    def decode(self, facts: Iterable[FactId]) -> list[str]:
        return [self.catalog.entries[f] for f in sorted(facts)]


def _pack_ids(ids: Sequence[int]) -> bytes:
    return struct.pack(f"<{len(ids)}I", *ids)


def key_of_packed(packed) -> StateKey:
    """Key of an already packed, sorted u32-LE fact-id buffer."""
    return int.from_bytes(hashlib.blake2b(packed, digest_size=16).digest(), "little")


def _hash_sorted(ids: Sequence[int]) -> StateKey:
    return key_of_packed(_pack_ids(ids))


def canonical_state_key(facts: Iterable[FactId]) -> StateKey:
    """128-bit key over the sorted fact-id sequence (u32 little-endian).

    BLAKE2b keeps the key identical across processes and runs, unlike the
    builtin ``hash``.
    """
    return _hash_sorted(sorted(set(facts)))


def facts_to_mask(facts: Iterable[FactId]) -> int:
    m = 0
    for f in facts:
        m |= 1 << f
    return m


def mask_to_facts(mask: int) -> tuple[FactId, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def key_of_mask(mask: int) -> StateKey:
    return _hash_sorted(mask_to_facts(mask))


def validate_spec(spec: NetworkSpec) -> list[str]:
    """Return the list of violations; an empty list means the network spec is valid."""
    violations: list[str] = []
    n = len(spec.catalog.entries)
    if len(set(spec.catalog.entries)) != n or any(not s for s in spec.catalog.entries):
        violations.append("catalog entries must be unique and non-empty")
    if not spec.initial:
        violations.append("empty initial state")
    bad = sorted(f for f in spec.initial if not 0 <= f < n)
    if bad:
        violations.append(f"dangling fact in initial state: {bad}")
    seen_ids: set[int] = set()
    for pos, e in enumerate(spec.exploits):
        tag = f"exploit {e.label!r} (id {e.id})"
        if e.id in seen_ids:
            violations.append(f"{tag}: duplicate exploit id")
        seen_ids.add(e.id)
        if e.id != pos:
            violations.append(f"{tag}: id does not match list position {pos}")
        if not e.post:
            violations.append(f"{tag}: empty postconditions")
        overlap = e.pre & e.post
        if overlap:
            violations.append(f"{tag}: pre/post overlap {sorted(overlap)}")
        dangling = sorted(f for f in e.pre | e.post if not 0 <= f < n)
        if dangling:
            violations.append(f"{tag}: dangling fact {dangling}")
    return violations


def require_valid(spec: NetworkSpec) -> NetworkSpec:
    violations = validate_spec(spec)
    if violations:
        raise SpecError(violations)
    return spec


def spec_from_dict(doc: dict) -> NetworkSpec:
    """Build a spec from the JSON document shape.

    Interning order: ``facts``, then ``initial``, then each exploit's pre
    followed by its post, in list order.
    """
    catalog = FactCatalog()
    try:
        for s in doc.get("facts", []):
            intern_fact(catalog, s)
        initial = frozenset(intern_fact(catalog, s) for s in doc.get("initial", []))
        exploits = []
        for i, item in enumerate(doc.get("exploits", [])):
            pre = frozenset(intern_fact(catalog, s) for s in item.get("pre", []))
            post = frozenset(intern_fact(catalog, s) for s in item.get("post", []))
            exploits.append(
                Exploit(id=i, label=item.get("label", f"exploit-{i}"), pre=pre, post=post, group=item.get("group"))
            )
        assets = [Asset(a["name"], a.get("kind", "host")) for a in doc.get("assets", [])]
    except (ValueError, TypeError, KeyError, AttributeError) as exc:
        raise SpecError([f"malformed spec document: {exc}"]) from exc
    return NetworkSpec(catalog=catalog, exploits=exploits, initial=initial, assets=assets)


def spec_to_dict(spec: NetworkSpec) -> dict:
    names = spec.catalog.entries
    doc: dict = {
        "assets": [{"name": a.name, "kind": a.kind} for a in spec.assets],
        "facts": list(names),
        "exploits": [],
        "initial": [names[f] for f in sorted(spec.initial)],
    }
    for e in spec.exploits:
        item = {"label": e.label, "pre": [names[f] for f in sorted(e.pre)], "post": [names[f] for f in sorted(e.post)]}
        if e.group is not None:
            item["group"] = e.group
        doc["exploits"].append(item)
    return doc


def load_spec(path: Union[str, Path]) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError([f"not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise SpecError(["top-level JSON value must be an object"])
    return spec_from_dict(doc)
