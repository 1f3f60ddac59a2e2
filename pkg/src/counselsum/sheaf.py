"""Structural side of the planner: dialogue graphs and sheaf convolution.

A dialogue graph chains utterances in order (optional same-speaker skip
edges). Each node/edge incidence carries a learned restriction map; the
resulting sheaf Laplacian is degree-normalized so its spectrum lies in
[0, 2] and (I - Delta) is non-expansive. With one-dimensional stalks and
unit maps the construction collapses to the normalized graph Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dialogue, Vocabulary
from .knowledge import ContextEncoder, embed_contextual
from .numerics.layers import Dense, uniform_param
from .numerics.rng import Rng
from .numerics.tensor import (Tensor, concat, eye, kron_eye, pinv_rsqrt,
                              psd_pinv_sqrt, scatter_matrix, stack_rows,
                              take_rows, tanh)


@dataclass
class DialogueGraph:
    n: int
    directed_edges: list[tuple[int, int]]   # oriented toward dialogue progression
    edges: list[tuple[int, int]]            # undirected (u < v), Laplacian support
    features: Tensor                        # n x f contextual rows
    adjacency: np.ndarray                   # symmetrized 0/1


def build_graph(dialogue: Dialogue, encoder: ContextEncoder, vocab: Vocabulary,
                same_speaker_edges: bool = False,
                feature_cache: list[Tensor] | None = None) -> DialogueGraph:
    n = len(dialogue.utterances)
    directed = [(i, i + 1) for i in range(n - 1)]
    if same_speaker_edges:
        last_seen: dict[object, int] = {}
        for i, utt in enumerate(dialogue.utterances):
            if utt.speaker in last_seen:
                directed.append((last_seen[utt.speaker], i))
            last_seen[utt.speaker] = i
    undirected = sorted({(min(a, b), max(a, b)) for a, b in directed if a != b})
    adjacency = np.zeros((n, n))
    for u, v in undirected:
        adjacency[u, v] = adjacency[v, u] = 1.0
    rows = (feature_cache if feature_cache is not None
            else [embed_contextual(dialogue, i, encoder, vocab) for i in range(n)])
    return DialogueGraph(n=n, directed_edges=sorted(set(directed)), edges=undirected,
                         features=stack_rows(rows), adjacency=adjacency)


class RestrictionMapLearner:
    """Maps concatenated endpoint features to one restriction map per incidence."""

    def __init__(self, rng: Rng, d_in: int, d_s: int, diagonal: bool = True):
        self.d_s = d_s
        self.diagonal = diagonal
        d_out = d_s if diagonal else d_s * d_s
        self.m = uniform_param(rng, (d_in, d_out), d_in)
        self.b = uniform_param(rng, (d_out,), d_in)

    def map_for(self, own: Tensor, other: Tensor) -> Tensor:
        raw = tanh(concat([own, other], axis=0) @ self.m + self.b)
        return raw if self.diagonal else raw.reshape(self.d_s, self.d_s)

    def named_params(self, prefix: str):
        return [(f"{prefix}.m", self.m), (f"{prefix}.b", self.b)]


@dataclass
class SheafStructure:
    d_s: int
    diagonal: bool
    edges: list[tuple[int, int]]
    # keyed by (node, edge index); diagonal maps stored as (d_s,) vectors
    maps: dict[tuple[int, int], Tensor]


def learn_restriction_maps(graph: DialogueGraph,
                           learner: RestrictionMapLearner) -> SheafStructure:
    feats = [graph.features[i] for i in range(graph.n)]
    maps: dict[tuple[int, int], Tensor] = {}
    for e_idx, (u, v) in enumerate(graph.edges):
        maps[(u, e_idx)] = learner.map_for(feats[u], feats[v])
        maps[(v, e_idx)] = learner.map_for(feats[v], feats[u])
    return SheafStructure(d_s=learner.d_s, diagonal=learner.diagonal,
                          edges=list(graph.edges), maps=maps)


@dataclass
class SheafLaplacian:
    delta: Tensor  # degree-normalized, (n*d_s) square
    n: int
    d_s: int

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.delta.data)


def identity_sheaf(graph: DialogueGraph) -> SheafStructure:
    """Unit scalar maps on every incidence; reduces Delta to the graph Laplacian."""
    maps = {}
    for e_idx, (u, v) in enumerate(graph.edges):
        maps[(u, e_idx)] = Tensor(np.ones(1))
        maps[(v, e_idx)] = Tensor(np.ones(1))
    return SheafStructure(d_s=1, diagonal=True, edges=list(graph.edges), maps=maps)


def assemble_laplacian(graph: DialogueGraph, sheaf: SheafStructure) -> SheafLaplacian:
    """Block-assemble the sheaf Laplacian, then D^(-1/2) L D^(-1/2) normalize.

    Zero-degree blocks take the pseudo-inverse convention (scaled to zero), so
    isolated nodes and all-zero maps are handled without special cases.
    """
    ds, n = sheaf.d_s, graph.n
    nd = n * ds
    if not sheaf.edges:
        return SheafLaplacian(delta=Tensor(np.zeros((nd, nd))), n=n, d_s=ds)
    if sheaf.diagonal:
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        pieces: list[Tensor] = []
        diag_rows: list[np.ndarray] = []
        diag_pieces: list[Tensor] = []
        lanes = np.arange(ds)

        def put(r0: int, c0: int, vals: Tensor) -> None:
            rows.append(r0 * ds + lanes)
            cols.append(c0 * ds + lanes)
            pieces.append(vals)

        for e_idx, (u, v) in enumerate(sheaf.edges):
            fu = sheaf.maps[(u, e_idx)]
            fv = sheaf.maps[(v, e_idx)]
            uu, vv = fu * fu, fv * fv
            put(u, u, uu)
            put(v, v, vv)
            put(u, v, -(fu * fv))
            put(v, u, -(fv * fu))
            diag_rows += [u * ds + lanes, v * ds + lanes]
            diag_pieces += [uu, vv]
        lap = scatter_matrix(np.concatenate(rows), np.concatenate(cols),
                             concat(pieces, axis=0), (nd, nd))
        flat_diag = np.concatenate(diag_rows)
        degree = scatter_matrix(flat_diag, np.zeros(flat_diag.size, dtype=np.int64),
                                concat(diag_pieces, axis=0), (nd, 1))
        dinv = pinv_rsqrt(degree)
        delta = lap * dinv * dinv.reshape(1, nd)
    else:
        rows, cols, pieces = [], [], []
        grid_r, grid_c = np.divmod(np.arange(ds * ds), ds)

        def put_block(r0: int, c0: int, block: Tensor) -> None:
            rows.append(r0 * ds + grid_r)
            cols.append(c0 * ds + grid_c)
            pieces.append(block.reshape(ds * ds))

        for e_idx, (u, v) in enumerate(sheaf.edges):
            fu = sheaf.maps[(u, e_idx)]
            fv = sheaf.maps[(v, e_idx)]
            put_block(u, u, fu.T @ fu)
            put_block(v, v, fv.T @ fv)
            put_block(u, v, -(fu.T @ fv))
            put_block(v, u, -(fv.T @ fu))
        lap = scatter_matrix(np.concatenate(rows), np.concatenate(cols),
                             concat(pieces, axis=0), (nd, nd))
        inv_blocks = [psd_pinv_sqrt(lap[i * ds:(i + 1) * ds, i * ds:(i + 1) * ds])
                      for i in range(n)]
        norm = scatter_matrix(
            np.concatenate([i * ds + grid_r for i in range(n)]),
            np.concatenate([i * ds + grid_c for i in range(n)]),
            concat([blk.reshape(ds * ds) for blk in inv_blocks], axis=0),
            (nd, nd))
        delta = norm @ lap @ norm
    return SheafLaplacian(delta=delta, n=n, d_s=ds)


def sheaf_convolve(graph: DialogueGraph, sheaf: SheafStructure,
                   w1: Tensor, w2: Tensor) -> Tensor:
    """relu((I - Delta) (I kron W1) lifted-features W2), reshaped per node.

    Node features are lifted to stalk space by replicating each row across
    its d_s stalk coordinates; the result is n x (d_s * d_out).
    """
    ds, n = sheaf.d_s, graph.n
    if w1.shape != (ds, ds):
        raise ValueError(f"w1 must be {ds}x{ds}, got {w1.shape}")
    lap = assemble_laplacian(graph, sheaf)
    lifted = take_rows(graph.features, np.repeat(np.arange(n), ds))
    mixed = kron_eye(w1, n) @ lifted
    projected = mixed @ w2
    diffused = (eye(n * ds) - lap.delta) @ projected
    return diffused.relu().reshape(n, ds * w2.shape[1])


@dataclass
class StructRepresentation:
    matrix: Tensor  # one row per utterance, aligned with the scaffold rows


def project_structural(r_scn: Tensor, proj: Dense) -> StructRepresentation:
    return StructRepresentation(matrix=proj(r_scn).relu())


class StructEncoder:
    """Restriction-map learner, convolution weights and output projection."""

    def __init__(self, rng: Rng, d_feature: int, d_s: int, d_hidden: int,
                 diagonal: bool = True):
        self.d_s = d_s
        self.map_learner = RestrictionMapLearner(rng.child("maps"), 2 * d_feature,
                                                 d_s, diagonal)
        self.w1 = uniform_param(rng.child("w1"), (d_s, d_s), d_s)
        self.w2 = uniform_param(rng.child("w2"), (d_feature, d_hidden), d_feature)
        self.proj = Dense(rng.child("proj"), d_s * d_hidden, 2 * d_hidden)
        self.width = 2 * d_hidden

    def encode(self, graph: DialogueGraph) -> StructRepresentation:
        sheaf = learn_restriction_maps(graph, self.map_learner)
        convolved = sheaf_convolve(graph, sheaf, self.w1, self.w2)
        return project_structural(convolved, self.proj)

    def named_params(self, prefix: str):
        return (self.map_learner.named_params(f"{prefix}.maps")
                + [(f"{prefix}.w1", self.w1), (f"{prefix}.w2", self.w2)]
                + self.proj.named_params(f"{prefix}.proj"))
