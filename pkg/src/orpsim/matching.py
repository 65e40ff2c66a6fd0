"""Maximum bipartite matching between services and VM instances."""

from __future__ import annotations

from typing import Dict, Hashable, Mapping, Sequence


def max_matching(adjacency: Sequence[Sequence[Hashable]]) -> Dict[int, Hashable]:
    """Maximum matching by augmenting paths.

    ``adjacency[k]`` lists the right-hand vertices (instance ids) that left
    vertex ``k`` (a service index) may be paired with. Returns a mapping from
    matched left indices to right vertices. Left sides are tiny here (a
    request has a handful of services), so the O(V*E) augmenting-path method
    is plenty.
    """
    owner: Dict[Hashable, int] = {}

    def augment(k: int, seen: set) -> bool:
        for v in adjacency[k]:
            if v in seen:
                continue
            seen.add(v)
            if v not in owner or augment(owner[v], seen):
                owner[v] = k
                return True
        return False

    for k in range(len(adjacency)):
        augment(k, set())
    return {k: v for v, k in owner.items()}


def has_complete_matching(adjacency: Sequence[Sequence[Hashable]]) -> bool:
    return len(max_matching(adjacency)) == len(adjacency)
