"""State-expansion kernel and the single-threaded reference generator."""

from __future__ import annotations

from collections import deque
from typing import Iterable, Optional

from .graph import AttackGraph
from .netmodel import (
    Exploit,
    FactId,
    NetworkSpec,
    canonical_state_key,
    facts_to_mask,
    key_of_mask,
    mask_to_facts,
    require_valid,
)


class CapacityError(MemoryError):
    def __init__(self, states_so_far: int, limit: int):
        self.states_so_far = states_so_far
        super().__init__(f"state limit {limit} exceeded after {states_so_far} states")


class NotApplicableError(ValueError):
    pass


def applicable_exploits(facts: Iterable[FactId], spec: NetworkSpec) -> list[int]:
    """Exploit ids, in spec order, whose pre holds and whose post adds a fact."""
    mask = facts_to_mask(facts)
    return [eid for eid, pre, post in spec.masks if pre & mask == pre and post & ~mask]


def apply_exploit(facts: Iterable[FactId], e: Exploit) -> frozenset[FactId]:
    current = frozenset(facts)
    if not e.pre <= current or e.post <= current:
        raise NotApplicableError(f"exploit {e.label!r} is not applicable to {sorted(current)}")
    return current | e.post


def successors(mask: int, spec_masks) -> list[tuple[int, int]]:
    """(exploit id, successor mask) pairs for one state; the hot loop."""
    return [(eid, mask | post) for eid, pre, post in spec_masks if pre & mask == pre and post & ~mask]


def generate_sequential(spec: NetworkSpec, max_states: Optional[int] = None) -> AttackGraph:
    """Exhaustive breadth-first generation from the network's initial state.

    FIFO frontier, exploits tried in spec order, local ids in discovery
    order; the output is fully deterministic.
    """
    require_valid(spec)
    masks = spec.masks
    root_facts = spec.root_facts()
    root = canonical_state_key(root_facts)
    g = AttackGraph(root, spec.checksum(), spec)
    g.add_state(root, root_facts)
    seen = {facts_to_mask(root_facts): root}
    frontier = deque([(root, facts_to_mask(root_facts))])
    edges = g.edges
    while frontier:
        key, mask = frontier.popleft()
        for eid, pre, post in masks:
            if pre & mask != pre or not post & ~mask:
                continue
            nmask = mask | post
            nkey = seen.get(nmask)
            if nkey is None:
                nkey = key_of_mask(nmask)
                seen[nmask] = nkey
                g.add_state(nkey, mask_to_facts(nmask))
                if max_states is not None and len(seen) > max_states:
                    raise CapacityError(len(seen), max_states)
                frontier.append((nkey, nmask))
            edges.add((key, nkey, eid))
    return g
