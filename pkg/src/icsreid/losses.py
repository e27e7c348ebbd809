"""Metric and classification losses with hand-derived gradients.

The quintuplet loss combines two hinge terms per anchor: a batch-local
term on hidden features (hardest positive instance vs hardest same-camera
negative instance) and a global term on embeddings (own centroid vs the
nearest other centroid of the anchor's camera).  Centroids are constants;
gradients flow to the features only.  All mining ties break toward the
lowest index so repeated runs stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .memory import MemoryBank, intra_id_loss


@dataclass(frozen=True)
class QuintupletConfig:
    """Margins for the instance-level and centroid-level hinge terms."""

    instance_margin: float = 0.3
    centroid_margin: float = 0.3

    def __post_init__(self):
        if self.instance_margin < 0 or self.centroid_margin < 0:
            raise ValueError("margins must be non-negative")


@dataclass(frozen=True)
class AnchorMining:
    """Mining outcome for one anchor.  None marks a skipped term."""

    anchor: int
    positive: int | None
    negative: int | None
    positive_centroid: int | None       # global id of the anchor's own centroid
    negative_centroid: int | None       # global id of the nearest other centroid
    instance_term: float | None         # hinge activation of the batch-local term
    centroid_term: float | None         # hinge activation of the memory term


@dataclass
class MiningReport:
    anchors: list[AnchorMining] = field(default_factory=list)

    @property
    def skipped_instance_terms(self) -> int:
        return sum(1 for a in self.anchors if a.instance_term is None)

    @property
    def skipped_centroid_terms(self) -> int:
        return sum(1 for a in self.anchors if a.centroid_term is None)


@dataclass
class LossTrace:
    """Per-step loss components, appendable to a tab-separated run log."""

    columns: list[str]
    steps: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    values: list[list[float]] = field(default_factory=list)

    def append(self, step: int, epoch: int, row: dict[str, float]) -> None:
        self.steps.append(step)
        self.epochs.append(epoch)
        self.values.append([float(row[c]) for c in self.columns])

    def epoch_means(self) -> dict[str, list[float]]:
        """Mean of each component per epoch, epochs in ascending order."""
        if not self.steps:
            return {c: [] for c in self.columns}
        out: dict[str, list[float]] = {c: [] for c in self.columns}
        arr = np.asarray(self.values)
        epochs = np.asarray(self.epochs)
        for epoch in range(int(epochs.max()) + 1):
            mask = epochs == epoch
            for k, col in enumerate(self.columns):
                out[col].append(float(arr[mask, k].mean()) if mask.any() else float("nan"))
        return out

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step\tepoch\t" + "\t".join(self.columns) + "\n")
            for step, epoch, row in zip(self.steps, self.epochs, self.values):
                fh.write(f"{step}\t{epoch}\t" + "\t".join("%.9g" % v for v in row) + "\n")


def pairwise_distances(features: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix with an exactly zero diagonal."""
    sq = np.sum(features**2, axis=1)
    d2 = sq[:, None] - 2.0 * features @ features.T + sq[None, :]
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def quintuplet_loss(G: np.ndarray, F: np.ndarray, cameras: np.ndarray,
                    intra_labels: np.ndarray, bank: MemoryBank,
                    cfg: QuintupletConfig) -> tuple[float, np.ndarray, np.ndarray, MiningReport]:
    """Sum over anchors of the two hinge terms of the hybrid-mining loss.

    Instance term (hidden features G): hardest in-batch positive of the
    anchor's own class against the hardest in-batch negative drawn from the
    anchor's camera.  Centroid term (embeddings F): distance to the
    anchor's own centroid against the nearest other centroid of the same
    camera.  Anchors without a same-camera in-batch negative skip the
    instance term; anchors whose camera holds a single identity skip the
    centroid term.  Both skips are recorded in the mining report.
    """
    G = np.asarray(G, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    cameras = np.asarray(cameras)
    intra_labels = np.asarray(intra_labels)
    n = G.shape[0]
    if not (F.shape[0] == cameras.shape[0] == intra_labels.shape[0] == n):
        raise ValueError("G, F, cameras and intra_labels must agree on batch size")

    dist_g = pairwise_distances(G)
    same_class = (cameras[:, None] == cameras[None, :]) & \
                 (intra_labels[:, None] == intra_labels[None, :])
    same_camera = cameras[:, None] == cameras[None, :]

    loss = 0.0
    dG = np.zeros_like(G)
    dF = np.zeros_like(F)
    report = MiningReport()
    layout = bank.layout

    for a in range(n):
        pos_mask = same_class[a].copy()
        pos_mask[a] = False
        neg_mask = same_camera[a] & ~same_class[a]

        positive = negative = None
        instance_term = None
        if pos_mask.any() and neg_mask.any():
            pos_idx = np.flatnonzero(pos_mask)
            positive = int(pos_idx[np.argmax(dist_g[a, pos_idx])])
            neg_idx = np.flatnonzero(neg_mask)
            negative = int(neg_idx[np.argmin(dist_g[a, neg_idx])])
            raw = cfg.instance_margin + dist_g[a, positive] - dist_g[a, negative]
            instance_term = max(0.0, raw)
            loss += instance_term
            if raw > 0.0:
                if dist_g[a, positive] > 0.0:
                    direction = (G[a] - G[positive]) / dist_g[a, positive]
                    dG[a] += direction
                    dG[positive] -= direction
                if dist_g[a, negative] > 0.0:
                    direction = (G[a] - G[negative]) / dist_g[a, negative]
                    dG[a] -= direction
                    dG[negative] += direction

        cam = int(cameras[a])
        own_gid = layout.global_index(cam, int(intra_labels[a]))
        centroid_term = None
        neg_centroid_gid = None
        if layout.id_counts[cam - 1] >= 2:
            block = bank.camera_centroids(cam)
            diffs = F[a][None, :] - block
            dists = np.linalg.norm(diffs, axis=1)
            own_local = int(intra_labels[a]) - 1
            masked = dists.copy()
            masked[own_local] = np.inf
            neg_local = int(np.argmin(masked))
            neg_centroid_gid = layout.offsets[cam - 1] + neg_local + 1
            raw = cfg.centroid_margin + dists[own_local] - dists[neg_local]
            centroid_term = max(0.0, raw)
            loss += centroid_term
            if raw > 0.0:
                if dists[own_local] > 0.0:
                    dF[a] += diffs[own_local] / dists[own_local]
                if dists[neg_local] > 0.0:
                    dF[a] -= diffs[neg_local] / dists[neg_local]

        report.anchors.append(AnchorMining(
            anchor=a,
            positive=positive,
            negative=negative,
            positive_centroid=own_gid,
            negative_centroid=neg_centroid_gid,
            instance_term=instance_term,
            centroid_term=centroid_term,
        ))

    return float(loss), dG, dF, report


def batch_hard_triplet(features: np.ndarray, labels: np.ndarray,
                       margin: float) -> tuple[float, np.ndarray]:
    """Hardest-positive / hardest-negative hinge, summed over anchors.

    Every label must appear at least twice and at least two labels must be
    present; PK sampling guarantees both.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise ValueError("features and labels must agree on batch size")
    same = labels[:, None] == labels[None, :]
    if np.all(same):
        raise ValueError("degenerate batch: a triplet batch needs at least two labels")
    if np.any(same.sum(axis=1) < 2):
        raise ValueError("degenerate batch: every label needs at least two instances")

    dist = pairwise_distances(features)
    loss = 0.0
    grad = np.zeros_like(features)
    for a in range(n):
        pos_mask = same[a].copy()
        pos_mask[a] = False
        pos_idx = np.flatnonzero(pos_mask)
        positive = int(pos_idx[np.argmax(dist[a, pos_idx])])
        neg_idx = np.flatnonzero(~same[a])
        negative = int(neg_idx[np.argmin(dist[a, neg_idx])])
        raw = margin + dist[a, positive] - dist[a, negative]
        if raw > 0.0:
            loss += raw
            if dist[a, positive] > 0.0:
                direction = (features[a] - features[positive]) / dist[a, positive]
                grad[a] += direction
                grad[positive] -= direction
            if dist[a, negative] > 0.0:
                direction = (features[a] - features[negative]) / dist[a, negative]
                grad[a] -= direction
                grad[negative] += direction
    return float(loss), grad


def label_smoothed_ce(logits: np.ndarray, label: int,
                      epsilon: float) -> tuple[float, np.ndarray]:
    """Cross entropy against a smoothed target: 1-eps on the true class,
    eps / (Q-1) spread over the others."""
    logits = np.asarray(logits, dtype=np.float64)
    q = logits.shape[0]
    if q < 2:
        raise ValueError("label smoothing needs at least two classes")
    if not 0 <= label < q:
        raise ValueError(f"label {label} out of range 0..{q - 1}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    target = np.full(q, epsilon / (q - 1))
    target[label] = 1.0 - epsilon
    shifted = logits - logits.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    loss = float(-(target * log_probs).sum())
    grad = np.exp(log_probs) - target
    return loss, grad


def intra_total(G: np.ndarray, F: np.ndarray, cameras: np.ndarray,
                intra_labels: np.ndarray, bank: MemoryBank,
                cfg: QuintupletConfig) -> tuple[float, np.ndarray, np.ndarray, dict]:
    """Stage-1 objective: identity loss plus quintuplet loss, unweighted."""
    id_loss, dF_id = intra_id_loss(bank, F, cameras, intra_labels)
    quint_loss, dG, dF_quint, report = quintuplet_loss(G, F, cameras, intra_labels, bank, cfg)
    parts = {"id": id_loss, "quintuplet": quint_loss, "mining": report}
    return id_loss + quint_loss, dG, dF_id + dF_quint, parts


def inter_total(G: np.ndarray, F: np.ndarray, head_weights: np.ndarray,
                class_labels: np.ndarray, epsilon: float,
                margin: float) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, dict]:
    """Stage-2 objective: smoothed classification (mean over the batch) on
    embedding logits plus batch-hard triplet (summed) on hidden features."""
    F = np.asarray(F, dtype=np.float64)
    class_labels = np.asarray(class_labels)
    n = F.shape[0]
    ce_loss = 0.0
    dF = np.zeros_like(F)
    dW = np.zeros_like(head_weights)
    for i in range(n):
        logits = F[i] @ head_weights
        sample_loss, dlogits = label_smoothed_ce(logits, int(class_labels[i]), epsilon)
        ce_loss += sample_loss / n
        dF[i] += head_weights @ dlogits / n
        dW += np.outer(F[i], dlogits) / n
    triplet_loss, dG = batch_hard_triplet(G, class_labels, margin)
    parts = {"id": ce_loss, "triplet": triplet_loss}
    return ce_loss + triplet_loss, dG, dF, dW, parts
