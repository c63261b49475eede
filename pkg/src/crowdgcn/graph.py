"""Spatio-temporal graph construction with distance-based attention edges.

Each observation timestep becomes an undirected graph over the pedestrians
present: node features are per-step displacements, edge weights come from a
softmax over inter-pedestrian distances, and the adjacency is degree-
normalized with self-loops before entering the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

SIGN_MODES = ("negated", "verbatim")

# Softmax over row distances is not symmetric for N >= 3 (row denominators
# differ), but the graph is undirected and the degree normalization assumes
# a symmetric adjacency, so attention is symmetrized before normalization.
_SYMMETRY_TOL = 1e-9


@dataclass
class GraphSequence:
    """Per-timestep node features and normalized adjacency for one window.

    node_feats: T_obs x N x 2 displacements.
    adj_norm:   T_obs x N x N degree-normalized attention adjacency.
    positions:  T_obs x N x 2 absolute positions the distances came from.
    """

    node_feats: np.ndarray
    adj_norm: np.ndarray
    positions: np.ndarray

    @property
    def n_steps(self):
        return self.node_feats.shape[0]

    @property
    def n_peds(self):
        return self.node_feats.shape[1]


def pairwise_distances(positions):
    """N x N Euclidean distance matrix for N positions in the plane."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ShapeError(f"positions must be Nx2, got {pos.shape}")
    if not np.isfinite(pos).all():
        raise DataError("pairwise_distances: non-finite coordinate")
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def npa_attention(dist, sign_mode="negated"):
    """Attention weights from pairwise distances, softmax per row over neighbors.

    In the default "negated" mode closer neighbours receive higher weight
    (softmax of -distance); "verbatim" mode applies the softmax to +distance
    instead, which favours farther neighbours.  The diagonal is zero; a lone
    pedestrian yields [[0]].
    """
    if sign_mode not in SIGN_MODES:
        raise ValueError(f"sign_mode must be one of {SIGN_MODES}, got {sign_mode!r}")
    d = np.asarray(dist, dtype=np.float64)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ShapeError(f"distance matrix must be square, got {d.shape}")
    if n == 1:
        return np.zeros((1, 1))
    sign = -1.0 if sign_mode == "negated" else 1.0
    scores = sign * d
    np.fill_diagonal(scores, -np.inf)  # excludes self from each row's softmax
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=1, keepdims=True)
    np.fill_diagonal(attn, 0.0)
    return attn


def normalize_adjacency(attn):
    """Degree-normalize a symmetric attention matrix with self-loops added.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the diagonal degree matrix
    of A + I.  Asymmetric input (beyond 1e-9) is rejected.
    """
    a = np.asarray(attn, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"attention matrix must be square, got {a.shape}")
    if not np.isfinite(a).all() or (a < 0).any():
        raise DataError("normalize_adjacency: attention must be finite and non-negative")
    if np.abs(a - a.T).max() > _SYMMETRY_TOL:
        raise DataError("normalize_adjacency: attention matrix is not symmetric")
    with_loops = a + np.eye(n)
    inv_sqrt_deg = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def symmetrize(attn):
    """Average a directed attention matrix with its transpose."""
    a = np.asarray(attn, dtype=np.float64)
    return 0.5 * (a + a.T)


def aggregated_feature_separation(graph):
    """Smallest pairwise distinctness of adjacency-aggregated node features.

    The encoder sees Adj @ V, not V: pedestrians whose aggregated features
    coincide (isolated pairs, whose attention rows mirror each other) are
    indistinguishable downstream no matter the weights.  Returns the minimum
    over pedestrian pairs of the largest aggregated-feature difference
    across the window; inf for a single pedestrian.
    """
    agg = np.einsum("tij,tjc->tic", graph.adj_norm, graph.node_feats)
    n = graph.n_peds
    if n < 2:
        return float("inf")
    best = float("inf")
    for i in range(n):
        for j in range(i + 1, n):
            best = min(best, float(np.abs(agg[:, i] - agg[:, j]).max()))
    return best


def build_graph_sequence(sample, sign_mode="negated"):
    """Assemble the full observation-window graph for one sequence sample."""
    t_obs = sample.abs_obs.shape[1]
    n = sample.abs_obs.shape[0]
    node_feats = np.transpose(sample.rel_obs, (1, 0, 2)).copy()
    positions = np.transpose(sample.abs_obs, (1, 0, 2)).copy()
    adj_norm = np.empty((t_obs, n, n))
    for t in range(t_obs):
        attn = npa_attention(pairwise_distances(positions[t]), sign_mode)
        adj_norm[t] = normalize_adjacency(symmetrize(attn))
    return GraphSequence(node_feats=node_feats, adj_norm=adj_norm, positions=positions)
