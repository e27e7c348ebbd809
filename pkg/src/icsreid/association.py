"""Cross-camera identity association over centroid geometry.

Identities become vertices; an edge joins two identities of different
cameras when their centroid distance beats a rank-based threshold and each
is the other's nearest neighbour within the opposite camera.  Connected
components of that graph share one pseudo label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetLayout
from .memory import MemoryBank

log = logging.getLogger(__name__)


@dataclass
class AssociationGraph:
    """Undirected mutual-1-NN graph over accumulated identities (1-based)."""

    num_vertices: int
    cameras: np.ndarray          # cam(i) for vertex i at index i-1
    edges: set[tuple[int, int]]  # unordered pairs stored as (min, max)
    distances: np.ndarray        # centroid distance matrix, (N, N)

    def neighbors(self, vertex: int) -> list[int]:
        out = []
        for i, j in self.edges:
            if i == vertex:
                out.append(j)
            elif j == vertex:
                out.append(i)
        return sorted(out)


@dataclass
class PseudoLabeling:
    """Global id -> pseudo label map produced by component finding."""

    labels: np.ndarray  # (N,), labels[j-1] is the 1-based pseudo label of id j
    num_classes: int
    same_camera_conflicts: int  # same-camera id pairs merged via transitivity


@dataclass
class AssociationQuality:
    precision: float
    recall: float
    associated_pairs: int
    correct_pairs: int
    true_pairs: int
    no_pairs_flag: bool  # precision undefined: nothing was associated


def centroid_distances(vectors: np.ndarray) -> np.ndarray:
    sq = np.sum(vectors**2, axis=1)
    d2 = sq[:, None] - 2.0 * vectors @ vectors.T + sq[None, :]
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def vertex_cameras(layout: DatasetLayout) -> np.ndarray:
    cams = np.empty(layout.total_ids, dtype=np.int64)
    for cam in range(1, layout.num_cameras + 1):
        cams[layout.camera_block(cam)] = cam
    return cams


def cross_camera_pair_distances(distances: np.ndarray, cameras: np.ndarray) -> np.ndarray:
    """Distances of all unordered identity pairs from different cameras."""
    n = distances.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = cameras[iu] != cameras[ju]
    return distances[iu[keep], ju[keep]]


def select_threshold(pair_distances: np.ndarray, pair_budget: int) -> float:
    """S-th smallest cross-camera pair distance.

    The edge rule tests strictly below this value, so exactly the pairs
    ranked 1..S-1 can pass on distance (modulo ties at the threshold).
    """
    if pair_budget < 1:
        raise ValueError(f"pair budget must be >= 1, got {pair_budget}")
    if pair_distances.size == 0:
        raise ValueError("no cross-camera pairs to rank")
    if pair_budget > pair_distances.size:
        log.warning(
            "pair budget %d exceeds the %d available cross-camera pairs; clamping",
            pair_budget, pair_distances.size,
        )
        pair_budget = pair_distances.size
    return float(np.sort(pair_distances, kind="stable")[pair_budget - 1])


def build_graph(bank: MemoryBank, threshold: float) -> AssociationGraph:
    """Evaluate the four-way edge rule for every cross-camera identity pair.

    e(i,j) = 1 iff dist(i,j) < T, cam(i) != cam(j), i is j's nearest
    neighbour within cam(i), and j is i's nearest neighbour within cam(j).
    Nearest-neighbour ties break toward the lowest index.
    """
    layout = bank.layout
    n = layout.total_ids
    cams = vertex_cameras(layout)
    dist = centroid_distances(bank.vectors)

    # nn[i, c-1]: 0-based index of the centroid nearest to i among camera c's
    nn = np.empty((n, layout.num_cameras), dtype=np.int64)
    for cam in range(1, layout.num_cameras + 1):
        block = layout.camera_block(cam)
        sub = dist[:, block]
        nn[:, cam - 1] = block.start + np.argmin(sub, axis=1)

    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if cams[i] == cams[j]:
                continue
            if not dist[i, j] < threshold:
                continue
            if nn[j, cams[i] - 1] != i:
                continue
            if nn[i, cams[j] - 1] != j:
                continue
            edges.add((i + 1, j + 1))
    return AssociationGraph(num_vertices=n, cameras=cams, edges=edges, distances=dist)


def connected_components(graph: AssociationGraph) -> PseudoLabeling:
    """Union-find over the edge set; components numbered by lowest member."""
    parent = list(range(graph.num_vertices + 1))

    def find(v: int) -> int:
        root = v
        while parent[root] != root:
            root = parent[root]
        while parent[v] != root:  # path compression
            parent[v], v = root, parent[v]
        return root

    for i, j in sorted(graph.edges):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    roots = [find(v) for v in range(1, graph.num_vertices + 1)]
    label_of_root: dict[int, int] = {}
    labels = np.empty(graph.num_vertices, dtype=np.int64)
    for v, root in enumerate(roots, start=1):
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root) + 1
        labels[v - 1] = label_of_root[root]

    conflicts = 0
    members: dict[int, list[int]] = {}
    for v, lab in enumerate(labels, start=1):
        members.setdefault(int(lab), []).append(v)
    for group in members.values():
        cams = [int(graph.cameras[v - 1]) for v in group]
        for a in range(len(group)):
            for b in range(a + 1, len(group)):
                if cams[a] == cams[b]:
                    conflicts += 1
    return PseudoLabeling(labels=labels, num_classes=len(label_of_root),
                          same_camera_conflicts=conflicts)


def associate(bank: MemoryBank, pair_budget: int | None = None
              ) -> tuple[PseudoLabeling, AssociationGraph, float]:
    """Full association pass: threshold, graph, components.

    ``pair_budget`` defaults to the accumulated identity count.  A bank
    with a single camera yields no cross-camera pairs and therefore the
    identity partition (all singleton pseudo classes).
    """
    layout = bank.layout
    if pair_budget is None:
        pair_budget = layout.total_ids
    cams = vertex_cameras(layout)
    dist = centroid_distances(bank.vectors)
    pair_dists = cross_camera_pair_distances(dist, cams)
    if pair_dists.size == 0:
        graph = AssociationGraph(num_vertices=layout.total_ids, cameras=cams,
                                 edges=set(), distances=dist)
        return connected_components(graph), graph, float("inf")
    threshold = select_threshold(pair_dists, pair_budget)
    graph = build_graph(bank, threshold)
    return connected_components(graph), graph, threshold


def labeling_from_truth(truth_by_gid: np.ndarray, layout: DatasetLayout) -> PseudoLabeling:
    """Ground-truth pseudo labeling: one class per person.

    Used by the fully supervised upper-bound variant; it flows through the
    same re-training path as graph-derived labelings.
    """
    truth_by_gid = np.asarray(truth_by_gid)
    if truth_by_gid.shape[0] != layout.total_ids:
        raise ValueError("truth must cover every accumulated identity")
    unique = np.unique(truth_by_gid)
    labels = np.searchsorted(unique, truth_by_gid) + 1
    cams = vertex_cameras(layout)
    conflicts = 0
    for lab in np.unique(labels):
        group_cams = cams[labels == lab]
        for a in range(group_cams.size):
            conflicts += int(np.sum(group_cams[a + 1:] == group_cams[a]))
    return PseudoLabeling(labels=labels, num_classes=int(unique.size),
                          same_camera_conflicts=conflicts)


def association_quality(labeling: PseudoLabeling, truth_pids: np.ndarray,
                        cameras: np.ndarray) -> AssociationQuality:
    """Pair precision and recall of a pseudo labeling against ground truth.

    Counts unordered cross-camera identity pairs.  A pair is associated
    when both ids share a pseudo label and correct when they also share a
    ground-truth person.
    """
    truth_pids = np.asarray(truth_pids)
    cameras = np.asarray(cameras)
    n = labeling.labels.shape[0]
    if truth_pids.shape[0] != n or cameras.shape[0] != n:
        raise ValueError("truth_pids and cameras must cover every accumulated identity")
    if np.any(truth_pids < 0):
        raise ValueError("missing ground-truth pids; association quality needs full truth")

    associated = correct = true_pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            if cameras[i] == cameras[j]:
                continue
            is_true = truth_pids[i] == truth_pids[j]
            if is_true:
                true_pairs += 1
            if labeling.labels[i] == labeling.labels[j]:
                associated += 1
                if is_true:
                    correct += 1

    no_pairs = associated == 0
    precision = 1.0 if no_pairs else correct / associated
    recall = 0.0 if true_pairs == 0 else correct / true_pairs
    return AssociationQuality(
        precision=float(precision),
        recall=float(recall),
        associated_pairs=associated,
        correct_pairs=correct,
        true_pairs=true_pairs,
        no_pairs_flag=no_pairs,
    )


def save_pseudo_labels(labeling: PseudoLabeling, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("global_id\tpseudo_label\n")
        for gid, label in enumerate(labeling.labels, start=1):
            fh.write(f"{gid}\t{int(label)}\n")


def load_pseudo_labels(path) -> PseudoLabeling:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "global_id\tpseudo_label":
        raise ValueError(f"{path}: not a pseudo-label file")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno}: expected two fields")
        pairs.append((int(parts[0]), int(parts[1])))
    pairs.sort()
    gids = [g for g, _ in pairs]
    if gids != list(range(1, len(pairs) + 1)):
        raise ValueError(f"{path}: global ids must cover 1..N exactly once")
    labels = np.asarray([lab for _, lab in pairs], dtype=np.int64)
    # conflicts are a property of the graph; unknown when reloaded from disk
    return PseudoLabeling(labels=labels, num_classes=int(len(np.unique(labels))),
                          same_camera_conflicts=-1)
