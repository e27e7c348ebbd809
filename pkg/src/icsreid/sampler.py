"""Identity-balanced PK mini-batch construction.

Each batch holds P distinct classes with K instances each.  Classes sweep
without replacement across an epoch; small classes are oversampled with
replacement so that every class stays trainable.  For stage 1 a class is a
(camera, intra_label) pair, for stage 2 a pseudo-label class.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np


class SamplerConfigError(ValueError):
    """Batch shape impossible for the given label space."""


@dataclass(frozen=True)
class PKConfig:
    ids_per_batch: int = 16
    instances_per_id: int = 4
    single_camera_batches: bool = False  # stage-1 ablation switch

    def __post_init__(self):
        if self.ids_per_batch < 2:
            raise SamplerConfigError("ids_per_batch must be >= 2 (hard mining needs negatives)")
        if self.instances_per_id < 2:
            raise SamplerConfigError("instances_per_id must be >= 2 (hard mining needs positives)")

    @property
    def batch_size(self) -> int:
        return self.ids_per_batch * self.instances_per_id


class PKSampler:
    """Yields index batches; deterministic under a fixed seed and consuming
    a single rng stream so epochs get distinct permutations."""

    def __init__(self, class_keys: list, class_to_indices: dict, cfg: PKConfig, seed: int):
        self.class_keys = list(class_keys)
        self.class_to_indices = {k: np.asarray(v) for k, v in class_to_indices.items()}
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        if len(self.class_keys) < cfg.ids_per_batch:
            raise SamplerConfigError(
                f"only {len(self.class_keys)} classes available but ids_per_batch="
                f"{cfg.ids_per_batch}; use ids_per_batch <= {len(self.class_keys)}"
            )
        if cfg.single_camera_batches:
            per_camera = defaultdict(list)
            for key in self.class_keys:
                per_camera[key[0]].append(key)
            for cam, keys in per_camera.items():
                if len(keys) < cfg.ids_per_batch:
                    raise SamplerConfigError(
                        f"camera {cam} has only {len(keys)} classes but single-camera "
                        f"batches need ids_per_batch={cfg.ids_per_batch}; "
                        f"use ids_per_batch <= {len(keys)}"
                    )
            self._per_camera = dict(per_camera)

    @classmethod
    def from_labels(cls, labels, cfg: PKConfig, seed: int) -> "PKSampler":
        """Build from one hashable class key per sample."""
        class_to_indices = defaultdict(list)
        for idx, key in enumerate(labels):
            class_to_indices[key].append(idx)
        keys = sorted(class_to_indices)
        return cls(keys, dict(class_to_indices), cfg, seed)

    def _draw_instances(self, key) -> np.ndarray:
        members = self.class_to_indices[key]
        k = self.cfg.instances_per_id
        if len(members) >= k:
            return self.rng.permutation(members)[:k]
        return self.rng.choice(members, size=k, replace=True)

    def _chunks(self, keys: list) -> list[list]:
        """Split a permuted key list into groups of exactly P distinct classes.

        A short trailing group is topped up with classes already seen this
        epoch, keeping the per-epoch coverage guarantee intact.
        """
        p = self.cfg.ids_per_batch
        order = [keys[i] for i in self.rng.permutation(len(keys))]
        groups = [order[i:i + p] for i in range(0, len(order), p)]
        tail = groups[-1]
        if len(tail) < p:
            pool = [k for k in order if k not in tail]
            extra = self.rng.permutation(len(pool))[:p - len(tail)]
            tail.extend(pool[i] for i in extra)
        return groups

    def epoch_batches(self):
        """Yield one epoch of batches as arrays of sample indices."""
        if self.cfg.single_camera_batches:
            groups = []
            for cam in sorted(self._per_camera):
                groups.extend(self._chunks(self._per_camera[cam]))
        else:
            groups = self._chunks(self.class_keys)
        for group in groups:
            batch = np.concatenate([self._draw_instances(key) for key in group])
            yield batch
