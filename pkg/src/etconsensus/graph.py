"""Weighted digraphs, in-degree Laplacians and their SCC condensation.

Convention: ``weights[j, i] = a_ji > 0`` iff agent ``i`` sends to agent ``j``.
Row ``i`` of the Laplacian therefore lists what agent ``i`` receives.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphStructureError, InvalidGraphError, NumericError

__all__ = [
    "WeightedDigraph",
    "Laplacian",
    "Connectivity",
    "Block",
    "SccDecomposition",
    "SpectralRatio",
    "build_laplacian",
    "strongly_connected_components",
    "classify_connectivity",
    "condense",
    "left_null_vector",
    "spectral_ratio",
    "from_edges",
    "from_laplacian",
    "load_graph",
    "parse_graph_text",
]

ROW_SUM_TOL = 1e-9
NULL_RESIDUAL_TOL = 1e-10
ZERO_EIG_REL = 1e-9
CERTIFICATE_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidGraphError(f"adjacency must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidGraphError("adjacency contains non-finite weights")
        if np.any(w < 0):
            i, j = np.argwhere(w < 0)[0]
            raise InvalidGraphError(f"negative weight a_{i + 1}{j + 1} = {w[i, j]}")
        if np.any(np.diag(w) != 0):
            i = int(np.flatnonzero(np.diag(w))[0])
            raise InvalidGraphError(f"self-loop weight a_{i + 1}{i + 1} = {w[i, i]}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def in_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weights[i])

    def out_neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weights[:, i])

    def edges(self) -> list[tuple[int, int, float]]:
        """``(sender, receiver, weight)`` triples, 0-based, sorted."""
        recv, send = np.nonzero(self.weights)
        out = [(int(s), int(r), float(self.weights[r, s])) for r, s in zip(recv, send)]
        return sorted(out)

    def __eq__(self, other):
        return isinstance(other, WeightedDigraph) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())


@dataclass(frozen=True, eq=False)
class Laplacian:
    entries: np.ndarray
    indegrees: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        a = -self.entries.copy()
        np.fill_diagonal(a, 0.0)
        return a

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


class Connectivity(enum.Enum):
    STRONGLY_CONNECTED = "strongly_connected"
    SPANNING_TREE = "spanning_tree"
    NEITHER = "neither"


def build_laplacian(g: WeightedDigraph) -> Laplacian:
    """``L = Deg_in - A`` with ``deg_in_i = sum_j a_ij``."""
    a = g.weights
    deg = a.sum(axis=1)
    lap = -a.copy()
    lap[np.diag_indices_from(lap)] = deg
    return Laplacian(_frozen(lap), _frozen(deg))


def strongly_connected_components(g: WeightedDigraph) -> list[list[int]]:
    """Tarjan's algorithm, iterative; each component sorted ascending."""
    n = g.n
    succ = [list(g.out_neighbors(v)) for v in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(succ[v]):
                work[-1] = (v, pos + 1)
                w = succ[v][pos]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


def _closed_components(g: WeightedDigraph, comps) -> list[int]:
    label = np.empty(g.n, dtype=int)
    for k, c in enumerate(comps):
        label[c] = k
    closed = []
    for k, c in enumerate(comps):
        senders = np.flatnonzero(g.weights[c].sum(axis=0))
        if np.all(label[senders] == k):
            closed.append(k)
    return closed


def classify_connectivity(g: WeightedDigraph) -> Connectivity:
    comps = strongly_connected_components(g)
    if len(comps) == 1:
        return Connectivity.STRONGLY_CONNECTED
    if len(_closed_components(g, comps)) == 1:
        return Connectivity.SPANNING_TREE
    return Connectivity.NEITHER


def _is_irreducible(block: np.ndarray) -> bool:
    m = block.shape[0]
    if m == 1:
        return True
    adj = (block != 0) & ~np.eye(m, dtype=bool)
    return len(strongly_connected_components(WeightedDigraph(adj.T.astype(float)))) == 1


def left_null_vector(block) -> np.ndarray:
    """Positive ``xi`` with ``xi^T block = 0`` and ``sum(xi) = 1``.

    ``block`` must be irreducible with zero row sums.  One equation of
    ``block^T xi = 0`` is replaced by the normalisation, which leaves a
    nonsingular square system because the only column dependency of an
    irreducible Laplacian has all coefficients nonzero.
    """
    b = np.asarray(block, dtype=float)
    m = b.shape[0]
    if b.shape != (m, m):
        raise ValueError(f"block must be square, got {b.shape}")
    if m == 1:
        return np.ones(1)
    if not _is_irreducible(b):
        raise GraphStructureError("left null vector requested for a reducible block")
    scale = float(np.max(np.abs(b)))
    if np.max(np.abs(b.sum(axis=1))) > ROW_SUM_TOL * scale:
        raise InvalidGraphError("block rows do not sum to zero")
    sys = b.T / scale
    sys[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    xi = np.linalg.solve(sys, rhs)
    # one refinement pass against the original equations
    r = np.concatenate([(xi @ b)[:-1] / scale, [xi.sum() - 1.0]])
    xi -= np.linalg.solve(sys, r)
    xi /= xi.sum()
    residual = float(np.max(np.abs(xi @ b)))
    if residual > NULL_RESIDUAL_TOL * scale:
        raise NumericError(f"left null vector residual {residual:.3e}", residual=residual)
    if np.any(xi <= 0):
        raise NumericError("left null vector is not strictly positive", residual=residual)
    return xi


@dataclass(frozen=True, eq=False)
class Block:
    """One strongly connected component in condensation order."""

    agents: tuple
    start: int
    stop: int
    xi: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    aux: np.ndarray

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def Xi(self) -> np.ndarray:
        return np.diag(self.xi)


@dataclass(frozen=True, eq=False)
class SccDecomposition:
    """Perron-Frobenius form of a spanning-tree Laplacian.

    ``permutation[k]`` is the original agent placed at position ``k``;
    ``L_perm = L[permutation][:, permutation]`` is block upper triangular and
    the closed component is the last block.
    """

    laplacian: Laplacian
    permutation: np.ndarray
    blocks: tuple
    L_perm: np.ndarray
    U_last: np.ndarray
    rho2_Q_last: float
    rho_U_last: float

    @property
    def M(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.laplacian.n

    @property
    def closed(self) -> Block:
        return self.blocks[-1]

    def block_matrix(self, m: int, q: int) -> np.ndarray:
        bm, bq = self.blocks[m], self.blocks[q]
        return self.L_perm[bm.start:bm.stop, bq.start:bq.stop]

    def permute(self, x) -> np.ndarray:
        """Reorder the leading (agent) axis of ``x`` into block order."""
        return np.asarray(x)[self.permutation]

    def xi_full(self) -> np.ndarray:
        """Closed-component ``xi`` embedded in original agent order (zeros elsewhere)."""
        out = np.zeros(self.n)
        out[list(self.closed.agents)] = self.closed.xi
        return out


def _block_order(g: WeightedDigraph, comps) -> list[list[int]]:
    """Receivers before senders; ties by smallest agent index."""
    k = len(comps)
    label = np.empty(g.n, dtype=int)
    for c_idx, c in enumerate(comps):
        label[c] = c_idx
    receives_from = [set() for _ in range(k)]
    for r, s in zip(*np.nonzero(g.weights)):
        if label[r] != label[s]:
            receives_from[label[r]].add(int(label[s]))
    dependents = [0] * k
    for c_idx in range(k):
        for q in receives_from[c_idx]:
            dependents[q] += 1
    ready = [(comps[c][0], c) for c in range(k) if dependents[c] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, c = heapq.heappop(ready)
        order.append(comps[c])
        for q in receives_from[c]:
            dependents[q] -= 1
            if dependents[q] == 0:
                heapq.heappush(ready, (comps[q][0], q))
    return order


def condense(g: WeightedDigraph) -> SccDecomposition:
    comps = strongly_connected_components(g)
    closed = _closed_components(g, comps)
    if len(closed) != 1:
        offending = [[a + 1 for a in comps[k]] for k in closed]
        raise GraphStructureError(
            f"graph has no directed spanning tree: closed components {offending}",
            components=offending,
        )
    order = _block_order(g, comps)
    lap = build_laplacian(g)
    perm = np.array([a for c in order for a in c], dtype=int)
    L_perm = lap.entries[np.ix_(perm, perm)].copy()

    blocks = []
    start = 0
    for c in order:
        stop = start + len(c)
        Lmm = L_perm[start:stop, start:stop]
        aux = Lmm.copy()
        np.fill_diagonal(aux, 0.0)
        aux[np.diag_indices_from(aux)] = -aux.sum(axis=1)
        D = np.diag(Lmm - aux).copy()
        xi = left_null_vector(aux)
        XL = xi[:, None] * Lmm
        Q = 0.5 * (XL + XL.T)
        blocks.append(
            Block(tuple(int(a) for a in c), start, stop, _frozen(xi), _frozen(D), _frozen(Q), _frozen(aux))
        )
        start = stop

    last = blocks[-1]
    U = np.diag(last.xi) - np.outer(last.xi, last.xi)
    q_eigs = np.linalg.eigvalsh(last.Q)
    u_eigs = np.linalg.eigvalsh(U)
    rho_q = float(np.max(np.abs(q_eigs)))
    positive = q_eigs[q_eigs > ZERO_EIG_REL * rho_q] if rho_q > 0 else q_eigs[:0]
    rho2 = float(positive.min()) if positive.size else 0.0
    rho_u = float(np.max(np.abs(u_eigs)))
    L_perm.flags.writeable = False
    return SccDecomposition(lap, _frozen(perm).astype(int), tuple(blocks), L_perm, _frozen(U), rho2, rho_u)


@dataclass(frozen=True)
class SpectralRatio:
    """``rho_2(Q^M) / rho(U^M)`` with its semidefiniteness certificate.

    ``unbounded`` is set when the closed component is a single agent, so
    ``U^M = 0`` and the ratio is reported as ``inf``.
    """

    ratio: float
    certificate: float
    unbounded: bool

    def __float__(self):
        return self.ratio

    @property
    def holds(self) -> bool:
        return self.certificate >= -CERTIFICATE_TOL


def spectral_ratio(dec: SccDecomposition) -> SpectralRatio:
    if dec.rho_U_last <= ZERO_EIG_REL:
        return SpectralRatio(float("inf"), 0.0, True)
    ratio = dec.rho2_Q_last / dec.rho_U_last
    gap = dec.closed.Q - ratio * dec.U_last
    cert = float(np.linalg.eigvalsh(0.5 * (gap + gap.T)).min())
    return SpectralRatio(ratio, cert, False)


def from_edges(n: int, edges) -> WeightedDigraph:
    """Build from 1-based ``(sender, receiver, weight)`` triples, ``a_{receiver,sender} = weight``."""
    n = int(n)
    if n < 1:
        raise InvalidGraphError("agent count must be positive")
    a = np.zeros((n, n))
    for k, e in enumerate(edges):
        try:
            s, r, w = e
            s, r, w = int(s), int(r), float(w)
        except (TypeError, ValueError) as exc:
            raise InvalidGraphError(f"edge {k + 1}: expected (from, to, weight), got {e!r}") from exc
        if not (1 <= s <= n and 1 <= r <= n):
            raise InvalidGraphError(f"edge {k + 1}: agent index out of range 1..{n}")
        if s == r:
            raise InvalidGraphError(f"edge {k + 1}: self-loop on agent {s}")
        a[r - 1, s - 1] += w
    return WeightedDigraph(a)


def from_laplacian(lap) -> WeightedDigraph:
    """Recover ``A`` by negating off-diagonals; rows must sum to zero."""
    L = np.asarray(lap, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InvalidGraphError(f"Laplacian must be square, got shape {L.shape}")
    scale = max(1.0, float(np.max(np.abs(L))))
    sums = np.abs(L.sum(axis=1))
    if np.any(sums > ROW_SUM_TOL * scale):
        i = int(np.argmax(sums))
        raise InvalidGraphError(f"Laplacian row {i + 1} sums to {L[i].sum():.3e}, not 0")
    a = -L.copy()
    np.fill_diagonal(a, 0.0)
    a[a == 0] = 0.0  # drop negative zeros
    return WeightedDigraph(a)


def parse_graph_text(text: str) -> WeightedDigraph:
    """Parse the plain edge-list format.

    First non-comment line: agent count ``n``.  Each following line:
    ``from to weight`` with 1-based agent indices.  ``#`` starts a comment.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body))
    if not lines:
        raise InvalidGraphError("empty graph file")
    lineno, head = lines[0]
    try:
        n = int(head)
    except ValueError:
        raise InvalidGraphError(f"line {lineno}: expected agent count, got {head!r}") from None
    edges = []
    for lineno, body in lines[1:]:
        parts = body.replace(",", " ").split()
        if len(parts) != 3:
            raise InvalidGraphError(f"line {lineno}: expected 'from to weight', got {body!r}")
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise InvalidGraphError(f"line {lineno}: cannot parse {body!r}") from None
    return from_edges(n, edges)


def load_graph(path) -> WeightedDigraph:
    return parse_graph_text(Path(path).read_text())
