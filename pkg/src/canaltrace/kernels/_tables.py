"""Neighbourhood index tables shared by both kernel backends.

A 3x3x3 neighbourhood is flattened with ``i = (dx+1) + 3*(dy+1) + 9*(dz+1)``;
the centre is index 13.
"""
import math

CENTER = 13

OFFSETS = [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
N26 = [i for i in range(27) if i != CENTER]
N18 = [i for i, d in enumerate(OFFSETS) if 0 < sum(map(abs, d)) <= 2]
N6 = [i for i, d in enumerate(OFFSETS) if sum(map(abs, d)) == 1]

# Moves in a fixed order; both Dijkstra backends relax neighbours in this order.
MOVES = [d for d in OFFSETS if d != (0, 0, 0)]
MOVE_COST = [math.sqrt(sum(c * c for c in d)) for d in MOVES]


def _adjacent(i, j, kind):
    a, b = OFFSETS[i], OFFSETS[j]
    diff = [abs(p - q) for p, q in zip(a, b)]
    if kind == 26:
        return max(diff) == 1
    return sum(diff) == 1


ADJ26 = {i: [j for j in N26 if j != i and _adjacent(i, j, 26)] for i in N26}
ADJ6_IN_N18 = {i: [j for j in N18 if j != i and _adjacent(i, j, 6)] for i in N18}


def padded_adjacency(adj, width):
    """Dense ``27 x width`` table padded with -1, for the compiled backend."""
    table = [[-1] * width for _ in range(27)]
    for i, nbrs in adj.items():
        for k, j in enumerate(nbrs):
            table[i][k] = j
    return table


assert len(N18) == 18 and len(N6) == 6 and len(N26) == 26
assert max(len(v) for v in ADJ26.values()) <= 17
assert max(len(v) for v in ADJ6_IN_N18.values()) <= 4
