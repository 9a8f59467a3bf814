"""Directed communication graphs and agent index bookkeeping.

An edge (i, j) lets agent i use agent j's state block in its own update
law.  Admissibility of a vector field reduces to a zero test on the graph
Laplacian, so the adjacency, degree, and Laplacian matrices are kept in
exact integer arithmetic throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError


@dataclass(frozen=True)
class CommGraph:
    """Directed graph on nodes 1..n with no self-loops."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if not isinstance(self.edges, frozenset):
            object.__setattr__(self, "edges", frozenset(self.edges))
        for (a, b) in self.edges:
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise ValueError(f"edge ({a},{b}) outside 1..{self.n}")
            if a == b:
                raise ValueError(f"self-loop on node {a}")

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(b for (a, b) in self.edges if a == i))

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=np.int64)
        for (a, b) in self.edges:
            A[a - 1, b - 1] = 1
        return A

    def out_degree(self) -> np.ndarray:
        return np.diag(self.adjacency().sum(axis=1))


def laplacian(g: CommGraph) -> np.ndarray:
    """Integer Laplacian L = D - A with D the out-degree matrix.

    Rows sum to zero; the off-diagonal entry l_ij is nonzero exactly when
    the edge (i, j) exists, which is the fact the admissibility predicate
    keys on.
    """
    return g.out_degree() - g.adjacency()


def is_strongly_connected(g: CommGraph) -> bool:
    if g.n == 1:
        return True
    fwd: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    bwd: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for (a, b) in g.edges:
        fwd[a].append(b)
        bwd[b].append(a)

    def sweep(adj):
        seen = {1}
        stack = [1]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == g.n

    return sweep(fwd) and sweep(bwd)


def simple_paths(g: CommGraph, frm: int, to: int,
                 max_len: int | None = None) -> list[tuple[int, ...]]:
    """All directed simple paths frm -> to with at most max_len nodes.

    Exhaustive; sorted by (length, node sequence) so downstream path
    selection is deterministic.  frm == to yields the single-node path.
    """
    if not (1 <= frm <= g.n and 1 <= to <= g.n):
        raise ValueError(f"nodes must lie in 1..{g.n}")
    limit = g.n if max_len is None else max_len
    if limit < 1:
        return []
    if frm == to:
        return [(frm,)]

    adj: dict[int, tuple[int, ...]] = {i: g.out_neighbors(i)
                                       for i in range(1, g.n + 1)}
    out: list[tuple[int, ...]] = []
    path = [frm]
    on_path = {frm}

    def dfs(node: int):
        if len(path) >= limit:
            return
        for nb in adj[node]:
            if nb in on_path:
                continue
            if nb == to:
                out.append(tuple(path) + (nb,))
                continue
            path.append(nb)
            on_path.add(nb)
            dfs(nb)
            path.pop()
            on_path.remove(nb)

    dfs(frm)
    out.sort(key=lambda p: (len(p), p))
    return out


# ---------------------------------------------------------------------------
# agent index map


@dataclass(frozen=True)
class AgentIndexMap:
    """Assigns every component of the complete state to an owning agent.

    Agent i owns: its primal component i, a block of equality-multiplier
    components, a block of inequality-multiplier components, and optionally
    a block of extra components (state estimates appended by the estimator
    construction).  Blocks partition {1, ..., total_dim}.
    """

    eq_counts: tuple[int, ...]
    ineq_counts: tuple[int, ...]
    extra_counts: tuple[int, ...] = field(default=())

    def __post_init__(self):
        n = len(self.eq_counts)
        if n < 1:
            raise ValueError("need at least one agent")
        if len(self.ineq_counts) != n:
            raise ValueError("count vectors must have equal length")
        extras = self.extra_counts if self.extra_counts else (0,) * n
        if len(extras) != n:
            raise ValueError("count vectors must have equal length")
        object.__setattr__(self, "extra_counts", tuple(extras))
        for c in (*self.eq_counts, *self.ineq_counts, *self.extra_counts):
            if c < 0:
                raise ValueError("counts must be nonnegative")

    @classmethod
    def identity(cls, n: int) -> "AgentIndexMap":
        """Each agent owns exactly its own scalar component."""
        return cls((0,) * n, (0,) * n)

    @classmethod
    def from_counts(cls, eq: Sequence[int], ineq: Sequence[int]
                    ) -> "AgentIndexMap":
        return cls(tuple(eq), tuple(ineq))

    @property
    def n_agents(self) -> int:
        return len(self.eq_counts)

    @property
    def total_dim(self) -> int:
        return (self.n_agents + sum(self.eq_counts)
                + sum(self.ineq_counts) + sum(self.extra_counts))

    def eq_block(self, i: int) -> tuple[int, ...]:
        base = self.n_agents + sum(self.eq_counts[:i - 1])
        return tuple(range(base + 1, base + 1 + self.eq_counts[i - 1]))

    def ineq_block(self, i: int) -> tuple[int, ...]:
        base = (self.n_agents + sum(self.eq_counts)
                + sum(self.ineq_counts[:i - 1]))
        return tuple(range(base + 1, base + 1 + self.ineq_counts[i - 1]))

    def extra_block(self, i: int) -> tuple[int, ...]:
        base = (self.n_agents + sum(self.eq_counts) + sum(self.ineq_counts)
                + sum(self.extra_counts[:i - 1]))
        return tuple(range(base + 1, base + 1 + self.extra_counts[i - 1]))

    def block(self, i: int) -> tuple[int, ...]:
        """All components owned by agent i."""
        if not (1 <= i <= self.n_agents):
            raise ValueError(f"agent {i} outside 1..{self.n_agents}")
        return ((i,) + self.eq_block(i) + self.ineq_block(i)
                + self.extra_block(i))

    def agent_of(self, j: int) -> int:
        """Owning agent of component j."""
        n = self.n_agents
        if not (1 <= j <= self.total_dim):
            raise ValueError(f"component {j} outside 1..{self.total_dim}")
        if j <= n:
            return j
        r = j - n
        for counts in (self.eq_counts, self.ineq_counts, self.extra_counts):
            total = sum(counts)
            if r <= total:
                acc = 0
                for i, c in enumerate(counts, start=1):
                    acc += c
                    if r <= acc:
                        return i
            r -= total
        raise AssertionError("unreachable")

    def block_of_component(self, j: int) -> tuple[int, ...]:
        """The full block sharing an owner with component j."""
        return self.block(self.agent_of(j))

    def with_extras(self, extra: Sequence[int]) -> "AgentIndexMap":
        """New map with extra per-agent components appended after all
        multiplier blocks.  Existing component indices keep their meaning."""
        if len(extra) != self.n_agents:
            raise ValueError("need one extra count per agent")
        merged = tuple(a + b for a, b in zip(self.extra_counts, extra))
        return AgentIndexMap(self.eq_counts, self.ineq_counts, merged)


def is_admissible(g: CommGraph, m: AgentIndexMap, i: int, j: int) -> bool:
    """Can a field writing component j from component i's block run on g?

    The field e_j f(z_{I(j)}, z_{I(i)}) is implementable by the agent
    owning j iff the Laplacian entry indexed (owner of j, owner of i) is
    nonzero.  The diagonal carries the out-degree, so the same-agent case
    is admissible exactly when that agent has at least one out-edge.
    """
    k = m.agent_of(j)
    ell = m.agent_of(i)
    return bool(laplacian(g)[k - 1, ell - 1] != 0)


# ---------------------------------------------------------------------------
# file format


def parse_graph(text: str) -> CommGraph:
    """Edge-list format: first non-comment line `n=<int>`, then `i j`
    lines.  Blank lines and `#` comments are skipped."""
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ParseError("empty graph file")
    head = lines[0].replace(" ", "")
    if not head.startswith("n="):
        raise ParseError(f"expected `n=<int>` header, got {lines[0]!r}")
    try:
        n = int(head[2:])
    except ValueError:
        raise ParseError(f"bad node count {head[2:]!r}") from None
    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected `i j` edge line, got {line!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer edge endpoints in {line!r}"
                             ) from None
        edges.append((a, b))
    try:
        return CommGraph(n, frozenset(edges))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def format_graph(g: CommGraph) -> str:
    lines = [f"n={g.n}"]
    for (a, b) in sorted(g.edges):
        lines.append(f"{a} {b}")
    return "\n".join(lines) + "\n"


def read_graph_file(path) -> CommGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def example_fan_graph() -> CommGraph:
    """The 5-node fan used throughout the tests: edges directed away from
    node 1, so node 1 reads 2 and 4, node 2 reads 3, node 4 reads 5."""
    return CommGraph(5, frozenset({(1, 2), (2, 3), (1, 4), (4, 5)}))
