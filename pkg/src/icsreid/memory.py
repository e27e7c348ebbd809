"""Centroid memory bank and the camera-specific non-parametric classifier.

One column per accumulated identity.  Columns live on the unit sphere: the
update rule blends the stored centroid with a fresh embedding and rescales
to unit norm.  Classification is a temperature softmax over dot products,
restricted to the columns of the query's own camera.
"""

from __future__ import annotations

import numpy as np

from .dataset import DatasetLayout, TrainView

UNIT_NORM_TOL = 1e-6


class MemoryBank:
    """d x N matrix of unit-norm identity centroids, stored row-per-identity."""

    def __init__(self, vectors: np.ndarray, layout: DatasetLayout,
                 mu: float = 0.5, tau: float = 0.067):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != layout.total_ids:
            raise ValueError(
                f"expected {layout.total_ids} centroids, got array of shape {vectors.shape}"
            )
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"update rate mu must be in [0, 1], got {mu}")
        if tau <= 0.0:
            raise ValueError(f"temperature tau must be positive, got {tau}")
        self.vectors = vectors
        self.layout = layout
        self.mu = mu
        self.tau = tau

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_ids(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_view(cls, view: TrainView, model, mu: float = 0.5,
                  tau: float = 0.067) -> "MemoryBank":
        """Initialize each centroid as the unit-normalized mean embedding
        of its identity's samples under the given model."""
        _, F, _ = model.forward(view.X)
        gids = view.global_ids()
        n = view.layout.total_ids
        sums = np.zeros((n, F.shape[1]))
        counts = np.zeros(n)
        np.add.at(sums, gids - 1, F)
        np.add.at(counts, gids - 1, 1.0)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0) + 1
            raise ValueError(f"identities without samples: {missing.tolist()}")
        means = sums / counts[:, None]
        norms = np.linalg.norm(means, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("identity mean embedding is zero; cannot normalize")
        return cls(means / norms, view.layout, mu=mu, tau=tau)

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.vectors.copy(), self.layout, mu=self.mu, tau=self.tau)

    def centroid(self, global_id: int) -> np.ndarray:
        if not 1 <= global_id <= self.num_ids:
            raise ValueError(f"global id {global_id} out of range 1..{self.num_ids}")
        return self.vectors[global_id - 1]

    def camera_centroids(self, camera: int) -> np.ndarray:
        return self.vectors[self.layout.camera_block(camera)]

    def update(self, global_id: int, f_x: np.ndarray) -> None:
        """Blend centroid j with a unit embedding and rescale to unit norm."""
        f_x = np.asarray(f_x, dtype=np.float64)
        norm = np.linalg.norm(f_x)
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"update requires a unit-norm embedding, got norm {norm!r}")
        if not 1 <= global_id <= self.num_ids:
            raise ValueError(f"global id {global_id} out of range 1..{self.num_ids}")
        blended = self.mu * self.vectors[global_id - 1] + (1.0 - self.mu) * f_x
        blended_norm = np.linalg.norm(blended)
        if blended_norm == 0.0:
            raise ValueError("memory update produced a zero vector; cannot normalize")
        self.vectors[global_id - 1] = blended / blended_norm

    def classify(self, f_x: np.ndarray, camera: int) -> np.ndarray:
        """Camera-specific softmax p(j | x) over the camera's own identities.

        The denominator sums over this camera's columns only, so columns of
        every other camera are irrelevant to the result.
        """
        block = self.camera_centroids(camera)
        logits = block @ np.asarray(f_x, dtype=np.float64) / self.tau
        logits -= logits.max()  # overflow guard
        expl = np.exp(logits)
        return expl / expl.sum()

    def save(self, path) -> None:
        """Snapshot: dimensions and layout header, then one centroid per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"d\t{self.dim}\n")
            fh.write(f"N\t{self.num_ids}\n")
            fh.write(f"C\t{self.layout.num_cameras}\n")
            fh.write("N_c\t" + "\t".join(map(str, self.layout.id_counts)) + "\n")
            fh.write("M_c\t" + "\t".join(map(str, self.layout.image_counts)) + "\n")
            fh.write("mu\t%.17g\n" % self.mu)
            fh.write("tau\t%.17g\n" % self.tau)
            for row in self.vectors:
                fh.write("\t".join("%.17g" % v for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "MemoryBank":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        try:
            fields = dict(line.split("\t", 1) for line in lines[:7])
            dim = int(fields["d"])
            num_ids = int(fields["N"])
            num_cams = int(fields["C"])
            id_counts = tuple(int(v) for v in fields["N_c"].split("\t"))
            image_counts = tuple(int(v) for v in fields["M_c"].split("\t"))
            mu = float(fields["mu"])
            tau = float(fields["tau"])
        except (KeyError, ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed bank snapshot header: {exc}") from exc
        if len(id_counts) != num_cams or sum(id_counts) != num_ids:
            raise ValueError(f"{path}: layout header inconsistent with N and C")
        rows = [line.split("\t") for line in lines[7:7 + num_ids]]
        if len(rows) != num_ids or any(len(r) != dim for r in rows):
            raise ValueError(f"{path}: expected {num_ids} centroid lines of {dim} values")
        vectors = np.asarray(rows, dtype=np.float64)
        layout = DatasetLayout(id_counts, image_counts)
        return cls(vectors, layout, mu=mu, tau=tau)


def intra_id_loss(bank: MemoryBank, F: np.ndarray, cameras: np.ndarray,
                  intra_labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the camera-specific classifier.

    Per-camera terms are averaged over that camera's batch members, then
    summed over cameras, balancing unequal camera populations within the
    batch.  Centroids are treated as constants: the gradient flows to the
    embeddings F only.
    """
    return _memory_id_loss(bank, F, cameras, intra_labels, camera_specific=True)


def camera_agnostic_id_loss(bank: MemoryBank, F: np.ndarray, cameras: np.ndarray,
                            intra_labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Ablation variant: softmax over ALL accumulated identities at once."""
    return _memory_id_loss(bank, F, cameras, intra_labels, camera_specific=False)


def _memory_id_loss(bank: MemoryBank, F: np.ndarray, cameras: np.ndarray,
                    intra_labels: np.ndarray, camera_specific: bool) -> tuple[float, np.ndarray]:
    F = np.asarray(F, dtype=np.float64)
    cameras = np.asarray(cameras)
    intra_labels = np.asarray(intra_labels)
    if F.ndim != 2 or F.shape[0] != cameras.shape[0] or F.shape[0] != intra_labels.shape[0]:
        raise ValueError("F, cameras and intra_labels must agree on batch size")
    layout = bank.layout
    counts = np.zeros(layout.num_cameras)
    for cam in cameras:
        if not 1 <= cam <= layout.num_cameras:
            raise ValueError(f"camera {cam} out of range 1..{layout.num_cameras}")
        counts[cam - 1] += 1

    loss = 0.0
    dF = np.zeros_like(F)
    for i in range(F.shape[0]):
        cam = int(cameras[i])
        label = int(intra_labels[i])
        if not 1 <= label <= layout.id_counts[cam - 1]:
            raise ValueError(f"intra label {label} invalid for camera {cam}")
        if camera_specific:
            block = bank.camera_centroids(cam)
            target = label - 1
        else:
            block = bank.vectors
            target = layout.global_index(cam, label) - 1
        logits = block @ F[i] / bank.tau
        logits -= logits.max()
        expl = np.exp(logits)
        probs = expl / expl.sum()
        weight = 1.0 / counts[cam - 1]
        loss += -weight * (np.log(expl[target]) - np.log(expl.sum()))
        dF[i] = weight * (probs @ block - block[target]) / bank.tau
    return float(loss), dF
