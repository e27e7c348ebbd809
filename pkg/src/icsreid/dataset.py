"""Synthetic multi-camera identity data: generation, label layout, TSV IO.

Conventions used throughout the package:
  * cameras are numbered 1..C,
  * per-camera identity labels are numbered 1..N_c within each camera,
  * the accumulated ("global") identity index is j = A_c + y, where A_c is
    the exclusive prefix sum of per-camera identity counts, so j runs 1..N.

Ground-truth person ids are carried for evaluation only.  Training code
receives a :class:`TrainView` which does not expose them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

FLOAT_FORMAT = "%.9g"  # dataset files store features at 9 significant digits

_PRESENCE_ATTEMPTS = 10_000


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent label layout."""


@dataclass(frozen=True)
class Sample:
    """One observation: raw feature, camera, per-camera label, hidden pid."""

    sample_id: int
    x: np.ndarray
    camera: int
    intra_label: int
    truth_pid: int


@dataclass(frozen=True)
class DatasetLayout:
    """Per-camera identity counts and the accumulated global index map."""

    id_counts: tuple[int, ...]     # N_c: identities annotated in camera c
    image_counts: tuple[int, ...]  # M_c: images recorded in camera c

    def __post_init__(self):
        if len(self.id_counts) != len(self.image_counts):
            raise DatasetError("id_counts and image_counts length mismatch")
        if any(n <= 0 for n in self.id_counts):
            raise DatasetError(f"every camera needs at least one identity, got {self.id_counts}")

    @property
    def num_cameras(self) -> int:
        return len(self.id_counts)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Exclusive prefix sums A_c of the per-camera identity counts."""
        return tuple(itertools.accumulate((0,) + self.id_counts[:-1]))

    @property
    def total_ids(self) -> int:
        """Total identity count accumulated over all cameras."""
        return sum(self.id_counts)

    def global_index(self, camera: int, intra_label: int) -> int:
        """Map a (camera, intra_label) pair onto the accumulated index 1..N."""
        if not 1 <= camera <= self.num_cameras:
            raise DatasetError(f"camera {camera} out of range 1..{self.num_cameras}")
        if not 1 <= intra_label <= self.id_counts[camera - 1]:
            raise DatasetError(
                f"intra_label {intra_label} out of range 1..{self.id_counts[camera - 1]} "
                f"for camera {camera}"
            )
        return self.offsets[camera - 1] + intra_label

    def camera_of(self, global_id: int) -> tuple[int, int]:
        """Inverse of :meth:`global_index`: recover (camera, intra_label)."""
        if not 1 <= global_id <= self.total_ids:
            raise DatasetError(f"global id {global_id} out of range 1..{self.total_ids}")
        for camera, offset in enumerate(self.offsets, start=1):
            if global_id <= offset + self.id_counts[camera - 1]:
                return camera, global_id - offset
        raise AssertionError("unreachable: offsets cover 1..N")

    def camera_block(self, camera: int) -> slice:
        """0-based slice of global indices belonging to one camera."""
        if not 1 <= camera <= self.num_cameras:
            raise DatasetError(f"camera {camera} out of range 1..{self.num_cameras}")
        start = self.offsets[camera - 1]
        return slice(start, start + self.id_counts[camera - 1])


@dataclass(frozen=True)
class TrainView:
    """Training-facing slice of a dataset.  Carries no ground-truth pids."""

    X: np.ndarray             # (n, D_in) raw features
    cameras: np.ndarray       # (n,) camera ids, 1-based
    intra_labels: np.ndarray  # (n,) per-camera labels, 1-based
    layout: DatasetLayout

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    def global_ids(self) -> np.ndarray:
        """Accumulated identity index (1-based) of every sample."""
        offsets = np.asarray(self.layout.offsets)
        return offsets[self.cameras - 1] + self.intra_labels


@dataclass
class Dataset:
    """Full dataset including hidden ground-truth pids (evaluation only)."""

    X: np.ndarray
    cameras: np.ndarray
    intra_labels: np.ndarray
    truth_pids: np.ndarray
    sample_ids: np.ndarray
    layout: DatasetLayout

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def training_view(self) -> TrainView:
        """View with ground truth structurally stripped."""
        return TrainView(self.X, self.cameras, self.intra_labels, self.layout)

    def samples(self):
        for i in range(self.num_samples):
            yield Sample(
                sample_id=int(self.sample_ids[i]),
                x=self.X[i],
                camera=int(self.cameras[i]),
                intra_label=int(self.intra_labels[i]),
                truth_pid=int(self.truth_pids[i]),
            )

    def global_ids(self) -> np.ndarray:
        offsets = np.asarray(self.layout.offsets)
        return offsets[self.cameras - 1] + self.intra_labels

    def truth_by_global_id(self) -> np.ndarray:
        """Ground-truth pid of each accumulated identity (index j-1 -> pid).

        Raises :class:`DatasetError` if one per-camera identity covers two
        different persons, which per-camera annotation rules out.
        """
        truth = np.full(self.layout.total_ids, -1, dtype=np.int64)
        for gid, pid in zip(self.global_ids(), self.truth_pids):
            if truth[gid - 1] == -1:
                truth[gid - 1] = pid
            elif truth[gid - 1] != pid:
                raise DatasetError(f"global id {gid} maps to two persons: {truth[gid - 1]} and {pid}")
        if np.any(truth == -1):
            raise DatasetError("some accumulated identity has no samples")
        return truth

    def images_per_camera_person(self) -> float:
        """Averaged image-per-camera-per-person statistic of the dataset."""
        pairs = {(int(p), int(c)) for p, c in zip(self.truth_pids, self.cameras)}
        return self.num_samples / len(pairs)


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic multi-camera generator."""

    num_persons: int = 60
    num_cameras: int = 4
    feature_dim: int = 32
    latent_dim: int = 8
    camera_transform_scale: float = 0.3
    noise_sigma: float = 0.25
    presence_prob: float = 0.8
    images_min: int = 3
    images_max: int = 7
    seed: int = 5

    def validate(self) -> None:
        problems = []
        if self.num_persons <= 0:
            problems.append(f"num_persons must be positive, got {self.num_persons}")
        if self.num_cameras <= 0:
            problems.append(f"num_cameras must be positive, got {self.num_cameras}")
        if self.feature_dim <= 0:
            problems.append(f"feature_dim must be positive, got {self.feature_dim}")
        if self.latent_dim <= 0:
            problems.append(f"latent_dim must be positive, got {self.latent_dim}")
        if self.noise_sigma < 0:
            problems.append(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 < self.presence_prob <= 1:
            problems.append(f"presence_prob must be in (0, 1], got {self.presence_prob}")
        if self.images_min <= 0:
            problems.append(f"images_min must be positive, got {self.images_min}")
        if self.images_min > self.images_max:
            problems.append(
                f"images_min {self.images_min} exceeds images_max {self.images_max}"
            )
        if problems:
            raise ValueError("invalid generator config: " + "; ".join(problems))


def _sample_presence(rng: np.random.Generator, num_persons: int, num_cameras: int,
                     prob: float) -> np.ndarray:
    """Person-by-camera presence matrix.

    Every person appears in at least one camera and every camera holds at
    least one person; offending rows/columns are redrawn.
    """
    presence = rng.random((num_persons, num_cameras)) < prob
    for _ in range(_PRESENCE_ATTEMPTS):
        empty_persons = ~presence.any(axis=1)
        if empty_persons.any():
            presence[empty_persons] = rng.random((empty_persons.sum(), num_cameras)) < prob
            continue
        empty_cameras = ~presence.any(axis=0)
        if empty_cameras.any():
            presence[:, empty_cameras] = rng.random((num_persons, empty_cameras.sum())) < prob
            continue
        return presence
    raise ValueError(
        "could not sample a presence matrix with every person and camera non-empty; "
        "raise presence_prob"
    )


def generate(cfg: GeneratorConfig) -> Dataset:
    """Draw a synthetic dataset with per-camera independent identity labels.

    Each person owns a unit-norm latent vector; each camera applies a fixed
    random affine map (deviating from a shared base projection by
    ``camera_transform_scale``) plus i.i.d. Gaussian pixel noise.  Per-camera
    labels follow a camera-local random order of first appearance, so the
    same person receives unrelated labels under different cameras.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    latents = rng.standard_normal((cfg.num_persons, cfg.latent_dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)

    base = rng.standard_normal((cfg.feature_dim, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    cam_mats = base + cfg.camera_transform_scale * rng.standard_normal(
        (cfg.num_cameras, cfg.feature_dim, cfg.latent_dim)
    ) / np.sqrt(cfg.latent_dim)
    cam_shifts = cfg.camera_transform_scale * rng.standard_normal(
        (cfg.num_cameras, cfg.feature_dim)
    ) / np.sqrt(cfg.feature_dim)

    presence = _sample_presence(rng, cfg.num_persons, cfg.num_cameras, cfg.presence_prob)

    rows_x, rows_cam, rows_label, rows_pid = [], [], [], []
    id_counts, image_counts = [], []
    for cam in range(1, cfg.num_cameras + 1):
        present = np.flatnonzero(presence[:, cam - 1])
        order = rng.permutation(present)  # camera-local labelling order
        images_in_cam = 0
        for label, person in enumerate(order, start=1):
            count = int(rng.integers(cfg.images_min, cfg.images_max + 1))
            clean = cam_mats[cam - 1] @ latents[person] + cam_shifts[cam - 1]
            noise = cfg.noise_sigma * rng.standard_normal((count, cfg.feature_dim))
            rows_x.append(clean + noise)
            rows_cam.extend([cam] * count)
            rows_label.extend([label] * count)
            rows_pid.extend([int(person) + 1] * count)
            images_in_cam += count
        id_counts.append(len(order))
        image_counts.append(images_in_cam)

    X = np.concatenate(rows_x, axis=0)
    n = X.shape[0]
    return Dataset(
        X=X,
        cameras=np.asarray(rows_cam, dtype=np.int64),
        intra_labels=np.asarray(rows_label, dtype=np.int64),
        truth_pids=np.asarray(rows_pid, dtype=np.int64),
        sample_ids=np.arange(n, dtype=np.int64),
        layout=DatasetLayout(tuple(id_counts), tuple(image_counts)),
    )


def save(dataset: Dataset, path) -> None:
    """Write a dataset as a tab-separated UTF-8 file with a header line."""
    dim = dataset.feature_dim
    header = ["sample_id", "camera", "intra_label", "truth_pid"]
    header += [f"x{k}" for k in range(dim)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for i in range(dataset.num_samples):
            fields = [
                str(int(dataset.sample_ids[i])),
                str(int(dataset.cameras[i])),
                str(int(dataset.intra_labels[i])),
                str(int(dataset.truth_pids[i])),
            ]
            fields += [FLOAT_FORMAT % v for v in dataset.X[i]]
            fh.write("\t".join(fields) + "\n")


def _validate_records(cameras: np.ndarray, labels: np.ndarray) -> DatasetLayout:
    num_cameras = int(cameras.max())
    seen_cameras = set(int(c) for c in np.unique(cameras))
    missing = [c for c in range(1, num_cameras + 1) if c not in seen_cameras]
    if missing:
        raise DatasetError(f"cameras {missing} have no samples (cameras must be contiguous 1..C)")
    id_counts, image_counts = [], []
    for cam in range(1, num_cameras + 1):
        cam_labels = labels[cameras == cam]
        present = set(int(v) for v in np.unique(cam_labels))
        top = max(present)
        gaps = [y for y in range(1, top + 1) if y not in present]
        if min(present) < 1 or gaps:
            raise DatasetError(
                f"camera {cam}: intra labels must form a contiguous range 1..N_c, "
                f"got labels {sorted(present)}"
            )
        id_counts.append(top)
        image_counts.append(int(cam_labels.size))
    return DatasetLayout(tuple(id_counts), tuple(image_counts))


def load(path) -> Dataset:
    """Read a dataset written by :func:`save`, validating the label layout."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    header = lines[0].split("\t")
    if header[:4] != ["sample_id", "camera", "intra_label", "truth_pid"]:
        raise DatasetError(f"{path}: line 1: unrecognized header {header[:4]}")
    dim = len(header) - 4
    if dim <= 0 or header[4:] != [f"x{k}" for k in range(dim)]:
        raise DatasetError(f"{path}: line 1: malformed feature columns")
    if len(lines) == 1:
        raise DatasetError(f"{path}: no records after header")

    ids, cams, labels, pids, feats = [], [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 4 + dim:
            raise DatasetError(
                f"{path}: line {lineno}: expected {4 + dim} fields, got {len(parts)}"
            )
        try:
            ids.append(int(parts[0]))
            cams.append(int(parts[1]))
            labels.append(int(parts[2]))
            pids.append(int(parts[3]))
            feats.append([float(v) for v in parts[4:]])
        except ValueError as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
        if cams[-1] < 1 or labels[-1] < 1:
            raise DatasetError(
                f"{path}: line {lineno}: camera and intra_label must be >= 1"
            )

    cameras = np.asarray(cams, dtype=np.int64)
    intra_labels = np.asarray(labels, dtype=np.int64)
    layout = _validate_records(cameras, intra_labels)
    return Dataset(
        X=np.asarray(feats, dtype=np.float64),
        cameras=cameras,
        intra_labels=intra_labels,
        truth_pids=np.asarray(pids, dtype=np.int64),
        sample_ids=np.asarray(ids, dtype=np.int64),
        layout=layout,
    )
