"""Face clustering by constrained graph construction and maximal cliques.

Faces detected across one identity's photos become graph nodes; edges join
similar faces subject to two constraints: no edge within one photo, and for
any photo pair the cross edges form a partial matching (each face pairs with
at most one face of the other photo).  Maximal cliques, selected greedily by
size, become clusters; clusters are purified by a single MAD outlier pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .perception import EmbeddingVector

DEFAULT_EPSILON = 1.0
DEFAULT_ALPHA = 3.0
NODE_CAP = 300


@dataclass(frozen=True)
class FaceNode:
    face_id: str
    image_id: str
    embedding: EmbeddingVector


@dataclass
class FaceGraph:
    nodes: list[FaceNode]
    edges: set[tuple[str, str]]                    # unordered pairs, stored sorted
    distances: dict[tuple[str, str], float] = field(default_factory=dict)
    rejected: list[dict] = field(default_factory=list)

    def node(self, face_id: str) -> FaceNode:
        for n in self.nodes:
            if n.face_id == face_id:
                return n
        raise KeyError(face_id)

    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {n.face_id: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj


def embedding_distance(a: FaceNode, b: FaceNode) -> float:
    return float(np.linalg.norm(a.embedding.values.astype(np.float64)
                                - b.embedding.values.astype(np.float64)))


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def build_face_graph(faces: list[FaceNode], epsilon: float = DEFAULT_EPSILON
                     ) -> FaceGraph:
    """Greedy constrained construction.

    Image pairs are processed in lexicographic order; within a pair,
    candidate edges are sorted ascending by embedding distance and added when
    the distance is within epsilon and neither endpoint is already matched
    within that pair.  No edge ever joins two faces of the same image.
    """
    ids = [f.face_id for f in faces]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate face ids")
    by_image: dict[str, list[FaceNode]] = {}
    for f in faces:
        by_image.setdefault(f.image_id, []).append(f)

    graph = FaceGraph(nodes=list(faces), edges=set())
    for img_a, img_b in itertools.combinations(sorted(by_image), 2):
        candidates = []
        for p in by_image[img_a]:
            for q in by_image[img_b]:
                candidates.append((embedding_distance(p, q), p.face_id, q.face_id))
        candidates.sort()
        matched_a: set[str] = set()
        matched_b: set[str] = set()
        for d, pid, qid in candidates:
            if d > epsilon:
                graph.rejected.append({"pair": (pid, qid), "distance": d,
                                       "reason": "above epsilon"})
                continue
            if pid in matched_a or qid in matched_b:
                graph.rejected.append({"pair": (pid, qid), "distance": d,
                                       "reason": "endpoint already matched"})
                continue
            key = _edge_key(pid, qid)
            graph.edges.add(key)
            graph.distances[key] = d
            matched_a.add(pid)
            matched_b.add(qid)
    return graph


def enumerate_maximal_cliques(graph: FaceGraph, node_cap: int = NODE_CAP
                              ) -> list[frozenset[str]]:
    """All maximal cliques via Bron-Kerbosch with pivoting.

    Worst case is exponential; graphs above ``node_cap`` nodes are pre-split
    into connected components (cliques never span components), and a single
    oversized component is an explicit error.
    """
    adj = graph.adjacency()
    if len(adj) > node_cap:
        components = _connected_components(adj)
        oversized = [c for c in components if len(c) > node_cap]
        if oversized:
            raise ValueError(
                f"connected component of {len(oversized[0])} nodes exceeds the "
                f"clique-enumeration cap of {node_cap}")
        out: list[frozenset[str]] = []
        for comp in components:
            sub = {n: adj[n] & comp for n in comp}
            out.extend(_bron_kerbosch(sub))
        return out
    return _bron_kerbosch(adj)


def _connected_components(adj: dict[str, set[str]]) -> list[set[str]]:
    seen: set[str] = set()
    comps = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        comps.append(comp)
    return comps


def _bron_kerbosch(adj: dict[str, set[str]]) -> list[frozenset[str]]:
    cliques: list[frozenset[str]] = []

    def expand(r: set[str], p: set[str], x: set[str]) -> None:
        if not p and not x:
            cliques.append(frozenset(r))
            return
        pivot = max(p | x, key=lambda u: len(adj[u] & p))
        for v in list(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p.remove(v)
            x.add(v)

    expand(set(), set(adj), set())
    return cliques


def brute_force_maximal_cliques(graph: FaceGraph) -> list[frozenset[str]]:
    """Exhaustive oracle over all subsets; only viable for tiny graphs."""
    adj = graph.adjacency()
    nodes = sorted(adj)
    if len(nodes) > 16:
        raise ValueError("brute force oracle limited to 16 nodes")
    cliques = []
    for r in range(1, len(nodes) + 1):
        for subset in itertools.combinations(nodes, r):
            s = set(subset)
            if all(b in adj[a] for a, b in itertools.combinations(s, 2)):
                if not any(adj[u] >= s for u in set(nodes) - s):
                    cliques.append(frozenset(s))
    return cliques


@dataclass
class ClusterResult:
    clusters: list[frozenset[str]]
    assigned: frozenset[str] | None = None
    removed_outliers: list[str] = field(default_factory=list)


def _mean_pairwise_distance(cluster: frozenset[str], nodes: dict[str, FaceNode]
                            ) -> float:
    members = sorted(cluster)
    if len(members) < 2:
        return 0.0
    dists = [embedding_distance(nodes[a], nodes[b])
             for a, b in itertools.combinations(members, 2)]
    return float(np.mean(dists))


def _selection_key(cluster: frozenset[str], nodes: dict[str, FaceNode]):
    # size descending, then tightest (smallest mean pairwise distance),
    # then lexicographic node ids: fully deterministic
    return (-len(cluster), _mean_pairwise_distance(cluster, nodes), sorted(cluster))


def select_disjoint_clusters(cliques: list[frozenset[str]],
                             graph: FaceGraph) -> list[frozenset[str]]:
    """Greedy selection in decreasing size order, skipping any clique sharing
    a node with an already-selected one."""
    nodes = {n.face_id: n for n in graph.nodes}
    taken: set[str] = set()
    selected = []
    for clique in sorted(cliques, key=lambda c: _selection_key(c, nodes)):
        if clique & taken:
            continue
        selected.append(clique)
        taken |= clique
    return selected


def per_face_mean_distances(cluster: frozenset[str], nodes: dict[str, FaceNode]
                            ) -> dict[str, float]:
    members = sorted(cluster)
    out = {m: 0.0 for m in members}
    if len(members) < 2:
        return out
    for m in members:
        others = [embedding_distance(nodes[m], nodes[o]) for o in members if o != m]
        out[m] = float(np.mean(others))
    return out


def purify_cluster(cluster: frozenset[str], graph: FaceGraph,
                   alpha: float = DEFAULT_ALPHA) -> frozenset[str]:
    """Single-pass MAD outlier removal.

    v_i is face i's mean distance to the rest of the cluster; faces with
    |v_i - median(v)| / MAD(v) > alpha are dropped.  MAD of zero (perfectly
    tight cluster) removes nothing.
    """
    nodes = {n.face_id: n for n in graph.nodes}
    v = per_face_mean_distances(cluster, nodes)
    if len(v) <= 1:
        return cluster
    vals = np.array([v[m] for m in sorted(v)])
    med = float(np.median(vals))
    mad = float(np.median(np.abs(vals - med)))
    if mad == 0.0:
        return cluster
    keep = {m for m in cluster if abs(v[m] - med) / mad <= alpha}
    return frozenset(keep)


def cluster_faces(faces: list[FaceNode], epsilon: float = DEFAULT_EPSILON,
                  alpha: float = DEFAULT_ALPHA,
                  references: list[FaceNode] | None = None,
                  node_cap: int = NODE_CAP) -> tuple[ClusterResult, FaceGraph]:
    """Full pipeline: graph, cliques, greedy selection, purification,
    identity assignment."""
    graph = build_face_graph(faces, epsilon=epsilon)
    cliques = enumerate_maximal_cliques(graph, node_cap=node_cap)
    selected = select_disjoint_clusters(cliques, graph)
    removed: list[str] = []
    purified = []
    for c in selected:
        kept = purify_cluster(c, graph, alpha=alpha)
        removed.extend(sorted(c - kept))
        if kept:
            purified.append(kept)
    result = ClusterResult(clusters=purified, removed_outliers=removed)
    result.assigned = assign_identity(result, references or [], graph)
    return result, graph


def assign_identity(result: ClusterResult, references: list[FaceNode],
                    graph: FaceGraph) -> frozenset[str] | None:
    """Pick the cluster holding the most reference faces; with no references,
    the largest cluster.  Ties resolve by the greedy selection tie rule."""
    if not result.clusters:
        return None
    nodes = {n.face_id: n for n in graph.nodes}
    ref_ids = {r.face_id for r in references}
    counts = {c: len(c & ref_ids) for c in result.clusters}
    if ref_ids and max(counts.values()) > 0:
        best = max(counts.values())
        tied = [c for c in result.clusters if counts[c] == best]
    else:
        tied = list(result.clusters)
    return sorted(tied, key=lambda c: _selection_key(c, nodes))[0]
