"""Duplication-divergence random-graph model with a spectral distance.

Growth: starting from a seed network, repeatedly pick a node uniformly at
random and duplicate it; each edge of the original is retained by the
copy with probability ``p`` and the copy links back to the original with
probability ``r``, until the graph has ``d`` nodes.

Latent split: the seed's edge indicators form the moved block (updated by
an add/delete Metropolis kernel); every growth decision is read
positionally from a replay stream of unit-interval draws sized for the
worst case, in the documented order: node choice, then neighbour
retention in ascending neighbour index, then the parent link.  Replays
after a seed flip reuse the stream positionally.

Distance: the graph edit distance is approximated by the sum of squared
differences of the sorted adjacency eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import BoxPrior, ContractError, SimulatorModel

__all__ = [
    "Graph",
    "GraphModelConfig",
    "GraphModel",
    "seed_graph_sample",
    "dd_grow",
    "spectral_distance",
    "seed_edge_flip_move",
    "replay_bank_size",
    "graph_to_text",
    "graph_from_text",
]


class Graph:
    """An undirected simple graph: node count plus a sorted edge tuple."""

    __slots__ = ("n", "edges", "_eigs")

    def __init__(self, n, edges):
        if n < 1:
            raise ContractError("graphs need at least one node")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ContractError("self-loops are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise ContractError("edge endpoint out of range")
            canon.add((min(i, j), max(i, j)))
        self.n = int(n)
        self.edges = tuple(sorted(canon))
        self._eigs = None

    @classmethod
    def from_adjacency(cls, adj):
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ContractError("adjacency must be square")
        if np.any(adj != adj.T) or np.any(np.diagonal(adj)):
            raise ContractError("adjacency must be symmetric with a zero diagonal")
        ii, jj = np.nonzero(np.triu(adj, k=1))
        return cls(adj.shape[0], list(zip(ii.tolist(), jj.tolist())))

    def adjacency(self):
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def eigenvalues(self):
        """Sorted (ascending) adjacency spectrum, cached."""
        if self._eigs is None:
            self._eigs = _spectrum(self.adjacency())
        return self._eigs

    def __eq__(self, other):
        return isinstance(other, Graph) and self.n == other.n and self.edges == other.edges

    def __hash__(self):
        return hash((self.n, self.edges))

    def __repr__(self):
        return f"Graph(n={self.n}, edges={len(self.edges)})"


def _spectrum(adj):
    try:
        return np.linalg.eigvalsh(adj)
    except np.linalg.LinAlgError as err:
        raise RuntimeError(
            "eigensolver failed to converge: "
            f"{err} (n={adj.shape[0]}, frobenius={np.linalg.norm(adj):.3g})"
        ) from err


def spectral_distance(g1, g2):
    """Sum of squared differences of the sorted adjacency eigenvalues.

    Symmetric, zero for identical (and any cospectral, in particular
    isomorphic) graphs.  Requires equal node counts.
    """
    if g1.n != g2.n:
        raise ContractError("spectral distance requires equal node counts")
    diff = g1.eigenvalues() - g2.eigenvalues()
    return float(np.sum(diff * diff))


def replay_bank_size(d, d_seed):
    """Worst-case number of unit draws a growth from ``d_seed`` to ``d`` reads.

    Each growth step reads one node choice, at most ``current - 1``
    retention draws, and one parent-link draw.
    """
    ks = np.arange(d_seed, d)
    return int(np.sum(ks + 1))


def seed_graph_sample(d_seed, edge_prob, rng):
    """Independent-edge random seed graph; returns its edge-indicator bits.

    Bit ``k`` corresponds to the ``k``-th pair in lexicographic order over
    ``i < j``; :func:`seed_bits_to_graph` gives the graph view.
    """
    if d_seed < 2:
        raise ContractError("seed graphs need at least two nodes")
    if not 0.0 <= edge_prob <= 1.0:
        raise ContractError("edge probability must lie in [0, 1]")
    m = d_seed * (d_seed - 1) // 2
    return (rng.random(m) < edge_prob).astype(float)


def seed_bits_to_graph(bits, d_seed):
    pairs = _pair_index(d_seed)
    return Graph(d_seed, [pairs[k] for k in np.flatnonzero(bits)])


def graph_to_seed_bits(g):
    lookup = set(g.edges)
    return np.array([1.0 if pair in lookup else 0.0 for pair in _pair_index(g.n)])


def _pair_index(d_seed):
    return [(i, j) for i in range(d_seed) for j in range(i + 1, d_seed)]


def _bits_to_neighbor_lists(bits, d_seed, pairs):
    # Lexicographic pair order keeps every neighbour list ascending.
    nbrs = [[] for _ in range(d_seed)]
    for k, (i, j) in enumerate(pairs):
        if bits[k]:
            nbrs[i].append(j)
            nbrs[j].append(i)
    return nbrs


def _grow_neighbor_lists(seed_nbrs, p, r, stream_values, d):
    """Core growth loop on ascending neighbour lists.

    Draw order per step: node choice, retention per neighbour in ascending
    index order, parent link.  ``stream_values`` must be a plain sequence of
    floats; positions are consumed strictly left to right.
    """
    from bisect import insort

    nbrs = [list(x) for x in seed_nbrs]
    pos = 0
    n = len(nbrs)
    size = len(stream_values)
    while n < d:
        if pos >= size:
            raise ContractError("replay stream exhausted during growth")
        parent = int(stream_values[pos] * n)
        if parent >= n:
            parent = n - 1
        pos += 1
        parent_nbrs = nbrs[parent]
        k = len(parent_nbrs)
        if pos + k + 1 > size:
            raise ContractError("replay stream exhausted during growth")
        draws = stream_values[pos:pos + k]
        pos += k
        new_list = [node for node, dr in zip(parent_nbrs, draws) if dr < p]
        for node in new_list:
            nbrs[node].append(n)
        if stream_values[pos] < r:
            nbrs[parent].append(n)
            insort(new_list, parent)
        pos += 1
        nbrs.append(new_list)
        n += 1
    return nbrs


def _lists_to_matrix(nbrs, d):
    a = np.zeros((d, d))
    for i, lst in enumerate(nbrs):
        if lst:
            a[i, lst] = 1.0
    return a




def dd_grow(seed, p, r, d, stream_values=None, rng=None):
    """Grow a seed graph to ``d`` nodes by duplication-divergence.

    Growth decisions come from ``stream_values`` (positional replay); when
    none is given a worst-case bank is drawn from ``rng`` first, so the
    same call is reproducible from the returned graph's provenance.
    Raises when a hand-built stream is too short for the realized degrees.
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ContractError("retention and link probabilities must lie in [0, 1]")
    if seed.n > d:
        raise ContractError("seed larger than the target size")
    if stream_values is None:
        if rng is None:
            raise ContractError("need a replay stream or a generator")
        stream_values = rng.random(replay_bank_size(d, seed.n))
    seed_nbrs = [[] for _ in range(seed.n)]
    for i, j in seed.edges:
        seed_nbrs[i].append(j)
        seed_nbrs[j].append(i)
    for lst in seed_nbrs:
        lst.sort()
    sv = np.asarray(stream_values, dtype=float).tolist()
    return Graph.from_adjacency(
        _lists_to_matrix(_grow_neighbor_lists(seed_nbrs, p, r, sv, d), d)
    )


def seed_edge_flip_move(bits, stream_values, theta, y, epsilon, model, rng,
                        current_distance=None):
    """One add/delete Metropolis step on the seed's edge indicators.

    Add and delete are proposed with equal probability; the proposed seed
    is regrown with the same replay stream and rejected outright when the
    regrown graph falls outside the tolerance.  Prior and proposal-count
    ratios make the move exact for the independent-edge seed law.  An
    impossible proposal (add on a complete seed, delete on an empty one)
    is a null self-transition.  Returns ``(bits, distance, accepted)``;
    the distance is ``nan`` at infinite tolerance, where no regrowth is
    needed.
    """
    a = model.config.seed_edge_prob
    if not 0.0 < a < 1.0:
        raise ContractError("edge flips need a seed edge probability in (0, 1)")
    m = bits.size
    n_edges = int(np.count_nonzero(bits))
    add = rng.random() < 0.5
    if add:
        if n_edges == m:
            return bits, current_distance, False
        free = np.flatnonzero(bits == 0.0)
        k = free[rng.integers(free.size)]
        log_prior = np.log(a) - np.log1p(-a)
        log_prop = np.log(m - n_edges) - np.log(n_edges + 1)
    else:
        if n_edges == 0:
            return bits, current_distance, False
        occupied = np.flatnonzero(bits != 0.0)
        k = occupied[rng.integers(occupied.size)]
        log_prior = np.log1p(-a) - np.log(a)
        log_prop = np.log(n_edges) - np.log(m - n_edges + 1)
    proposal = bits.copy()
    proposal[k] = 0.0 if bits[k] else 1.0
    if np.isfinite(epsilon):
        dist = model.regrown_distance(proposal, stream_values, theta, y)
        if dist > epsilon:
            return bits, current_distance, False
    else:
        dist = float("nan")
    log_a = log_prior + log_prop
    if log_a < 0 and not np.log(rng.random()) < log_a:
        return bits, current_distance, False
    return proposal, dist, True


@dataclass(frozen=True)
class GraphModelConfig:
    """Growth target, seed ensemble, priors, and synthesis settings."""

    d: int = 100
    d_seed: int = 20
    seed_edge_prob: float = 0.3
    prior_low: float = 0.0
    prior_high: float = 1.0
    true_p: float = 0.5
    true_r: float = 0.2
    synth_inter_prob: float = 0.3  # clique-to-clique edge probability of the data seed

    def __post_init__(self):
        if not 2 <= self.d_seed <= self.d:
            raise ContractError("need 2 <= seed nodes <= target nodes")
        if not 0.0 <= self.seed_edge_prob <= 1.0:
            raise ContractError("seed edge probability must lie in [0, 1]")


class GraphModel(SimulatorModel):
    """Duplication-divergence simulator with edge-flip moves on the seed."""

    mover = "edge-flip"
    supports_batch_moves = False

    def __init__(self, config):
        self.config = config
        self.prior = BoxPrior(
            [config.prior_low] * 2, [config.prior_high] * 2
        )
        self.param_names = ("p", "r")
        self.moved_size = config.d_seed * (config.d_seed - 1) // 2
        self.stream_size = replay_bank_size(config.d, config.d_seed)
        self._pairs = _pair_index(config.d_seed)
        self.sim_count = 0

    def _y_eigs(self, y):
        return y.eigenvalues()

    def sample_u_batch(self, theta, n, rng):
        bits = (rng.random((n, self.moved_size)) < self.config.seed_edge_prob
                ).astype(float)
        streams = rng.random((n, self.stream_size))
        self.sim_count += n
        return bits, streams

    def log_density_moved(self, u, theta):
        a = self.config.seed_edge_prob
        bits = np.asarray(u.moved if hasattr(u, "moved") else u)
        k = float(np.count_nonzero(bits))
        m = bits.size
        if a == 0.0:
            return 0.0 if k == 0 else -np.inf
        if a == 1.0:
            return 0.0 if k == m else -np.inf
        return k * np.log(a) + (m - k) * np.log1p(-a)

    def _grown_matrix(self, bits, stream_values, theta):
        seed_nbrs = _bits_to_neighbor_lists(bits, self.config.d_seed, self._pairs)
        sv = (stream_values.tolist()
              if isinstance(stream_values, np.ndarray) else stream_values)
        lists = _grow_neighbor_lists(seed_nbrs, theta[0], theta[1], sv,
                                     self.config.d)
        return _lists_to_matrix(lists, self.config.d)

    def regrown_distance(self, bits, stream_values, theta, y):
        """Distance of the graph regrown from a (possibly flipped) seed."""
        mat = self._grown_matrix(bits, stream_values, theta)
        diff = self._y_eigs(y) - _spectrum(mat)
        return float(np.sum(diff * diff))

    def transform(self, u, theta):
        return Graph.from_adjacency(
            self._grown_matrix(np.asarray(u.moved), np.asarray(u.stream), theta)
        )

    def distance(self, y, x):
        return spectral_distance(y, x)

    def distances_batch(self, moved, streams, theta, y):
        y_eigs = self._y_eigs(y)
        n = moved.shape[0]
        out = np.empty(n)
        for i in range(n):
            mat = self._grown_matrix(moved[i], streams[i], theta)
            diff = y_eigs - _spectrum(mat)
            out[i] = float(np.sum(diff * diff))
        self.sim_count += n
        return out

    def move_population(self, moved, streams, dists, theta, y, eps, cfg, rng):
        """Edge-flip sweeps row by row; every proposal regrows and re-scores."""
        if not np.isfinite(eps):
            raise ContractError("population moves require a finite tolerance")
        out_bits = moved.copy()
        out_d = dists.copy()
        accepted = 0
        for i in range(moved.shape[0]):
            bits, dist = out_bits[i], out_d[i]
            for _ in range(cfg.sweeps):
                bits, dist, ok = seed_edge_flip_move(
                    bits, streams[i], theta, y, eps, self, rng,
                    current_distance=dist,
                )
                accepted += ok
            out_bits[i] = bits
            out_d[i] = dist
        self.sim_count += moved.shape[0] * cfg.sweeps
        return out_bits, streams, out_d, accepted / max(moved.shape[0] * cfg.sweeps, 1)

    def synthesize(self, rng):
        """Two-clique seed with random inter-clique edges, grown at the true
        parameters; the observed-data generator."""
        ds = self.config.d_seed
        size_a = (ds + 1) // 2
        edges = [(i, j) for i in range(size_a) for j in range(i + 1, size_a)]
        edges += [(i, j) for i in range(size_a, ds) for j in range(i + 1, ds)]
        for i in range(size_a):
            for j in range(size_a, ds):
                if rng.random() < self.config.synth_inter_prob:
                    edges.append((i, j))
        seed = Graph(ds, edges)
        return dd_grow(seed, self.config.true_p, self.config.true_r,
                       self.config.d, rng=rng)


def graph_to_text(g):
    """Edge-list text: a ``nodes N`` header then one ``i j`` pair per line."""
    lines = [f"nodes {g.n}"]
    lines += [f"{i} {j}" for i, j in g.edges]
    return "\n".join(lines) + "\n"


def graph_from_text(text):
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("nodes "):
        raise ContractError("graph text must start with a 'nodes N' header")
    n = int(lines[0].split()[1])
    edges = []
    for ln in lines[1:]:
        i, j = ln.split()
        edges.append((int(i), int(j)))
    return Graph(n, edges)
