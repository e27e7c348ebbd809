"""Stage-1 training: per-camera supervised embedding learning.

The default configuration pairs the camera-specific non-parametric
classifier with the quintuplet loss.  The classifier and metric-loss
switches cover the ablation variants: a parametric per-camera classifier
bank, a camera-agnostic softmax over all accumulated identities, a plain
batch-hard triplet, or no metric loss at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import TrainView
from .losses import (LossTrace, QuintupletConfig, batch_hard_triplet,
                     label_smoothed_ce, quintuplet_loss)
from .memory import MemoryBank, camera_agnostic_id_loss, intra_id_loss
from .model import AdamOptimizer, EmbeddingModel, OptimizerConfig, learning_rate_at, lr_drop_epochs
from .sampler import PKConfig, PKSampler

log = logging.getLogger(__name__)

CLASSIFIERS = ("camera_specific", "camera_agnostic", "parametric")
METRIC_LOSSES = ("none", "triplet", "quintuplet")


@dataclass(frozen=True)
class IntraTrainConfig:
    epochs: int = 30
    reference_epochs: int = 50  # budget at which the lr drops sit at their defaults
    classifier: str = "camera_specific"
    metric_loss: str = "quintuplet"
    quintuplet: QuintupletConfig = field(default_factory=QuintupletConfig)
    triplet_margin: float = 0.3
    memory_rate: float = 0.5
    temperature: float = 0.067
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pk: PKConfig = field(default_factory=PKConfig)
    seed: int = 0

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.metric_loss not in METRIC_LOSSES:
            raise ValueError(f"metric_loss must be one of {METRIC_LOSSES}, got {self.metric_loss!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class IntraTrainResult:
    model: EmbeddingModel
    bank: MemoryBank | None  # None when the variant never touches the memory
    trace: LossTrace


class ParametricBranches:
    """Per-camera linear classifier heads, the parametric baseline."""

    def __init__(self, embed_dim: int, id_counts: tuple[int, ...], rng: np.random.Generator,
                 init_scale: float = 0.01):
        self.weights = {
            f"branch{cam}_W": init_scale * rng.standard_normal((embed_dim, count))
            for cam, count in enumerate(id_counts, start=1)
        }

    def loss(self, F: np.ndarray, cameras: np.ndarray, intra_labels: np.ndarray
             ) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
        """Camera-balanced cross entropy on each camera's own branch."""
        counts: dict[int, int] = {}
        for cam in cameras:
            counts[int(cam)] = counts.get(int(cam), 0) + 1
        loss = 0.0
        dF = np.zeros_like(F)
        dW = {name: np.zeros_like(w) for name, w in self.weights.items()}
        for i in range(F.shape[0]):
            cam = int(cameras[i])
            w = self.weights[f"branch{cam}_W"]
            logits = F[i] @ w
            sample_loss, dlogits = label_smoothed_ce(logits, int(intra_labels[i]) - 1, 0.0)
            scale = 1.0 / counts[cam]
            loss += scale * sample_loss
            dF[i] += scale * (w @ dlogits)
            dW[f"branch{cam}_W"] += scale * np.outer(F[i], dlogits)
        return float(loss), dF, dW


def train_intra(view: TrainView, init_model: EmbeddingModel,
                cfg: IntraTrainConfig) -> IntraTrainResult:
    """Run the per-camera stage on a training view; returns a trained copy.

    The memory bank is initialized from per-identity mean embeddings and
    refreshed once per processed sample, in batch order, using features
    recomputed after the optimizer step.
    """
    model = init_model.copy()
    needs_bank = cfg.classifier in ("camera_specific", "camera_agnostic") \
        or cfg.metric_loss == "quintuplet"
    bank = MemoryBank.from_view(view, model, mu=cfg.memory_rate,
                                tau=cfg.temperature) if needs_bank else None

    class_keys = list(zip(view.cameras.tolist(), view.intra_labels.tolist()))
    sampler = PKSampler.from_labels(class_keys, cfg.pk, cfg.seed)

    branches = None
    extra_params: dict[str, np.ndarray] = {}
    if cfg.classifier == "parametric":
        rng = np.random.default_rng(cfg.seed + 1)
        branches = ParametricBranches(model.embed_dim, view.layout.id_counts, rng)
        extra_params = branches.weights

    all_params = {**model.params, **extra_params}
    opt = AdamOptimizer(all_params, cfg.optimizer)
    drops = lr_drop_epochs(cfg.epochs, cfg.reference_epochs)
    metric_name = cfg.metric_loss if cfg.metric_loss != "none" else "metric"
    trace = LossTrace(columns=["id", metric_name, "total"])

    offsets = np.asarray(view.layout.offsets)
    step = 0
    for epoch in range(cfg.epochs):
        lr = learning_rate_at(epoch, cfg.optimizer.learning_rate, drops)
        for batch in sampler.epoch_batches():
            Xb = view.X[batch]
            cams = view.cameras[batch]
            labels = view.intra_labels[batch]
            G, F, tape = model.forward(Xb)

            head_grads: dict[str, np.ndarray] = {}
            if cfg.classifier == "camera_specific":
                id_loss, dF = intra_id_loss(bank, F, cams, labels)
            elif cfg.classifier == "camera_agnostic":
                id_loss, dF = camera_agnostic_id_loss(bank, F, cams, labels)
            else:
                id_loss, dF, head_grads = branches.loss(F, cams, labels)

            dG = np.zeros_like(G)
            metric_value = 0.0
            if cfg.metric_loss == "quintuplet":
                metric_value, dG_q, dF_q, _ = quintuplet_loss(
                    G, F, cams, labels, bank, cfg.quintuplet)
                dG += dG_q
                dF += dF_q
            elif cfg.metric_loss == "triplet":
                gids = offsets[cams - 1] + labels
                metric_value, dG_t = batch_hard_triplet(G, gids, cfg.triplet_margin)
                dG += dG_t

            grads = model.backward(tape, dG, dF)
            grads.update(head_grads)
            opt.step(all_params, grads, lr)
            model.bump_version()

            if bank is not None:
                _, F_new, _ = model.forward(Xb)
                gids = offsets[cams - 1] + labels
                for pos in range(len(batch)):
                    bank.update(int(gids[pos]), F_new[pos])

            trace.append(step, epoch, {
                "id": id_loss, metric_name: metric_value,
                "total": id_loss + metric_value,
            })
            step += 1
        log.debug("intra epoch %d done, lr %.2e", epoch, lr)
    return IntraTrainResult(model=model, bank=bank, trace=trace)
