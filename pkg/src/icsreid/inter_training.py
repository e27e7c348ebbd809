"""Stage-2 training: supervised re-training on pseudo labels.

The backbone starts from the stage-1 weights; a fresh linear head maps
embeddings to pseudo-class logits.  The head exists only during training:
retrieval always runs on the embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import PseudoLabeling
from .dataset import TrainView
from .losses import LossTrace, inter_total
from .model import AdamOptimizer, EmbeddingModel, OptimizerConfig, learning_rate_at, lr_drop_epochs
from .sampler import PKConfig, PKSampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InterTrainConfig:
    epochs: int = 40
    reference_epochs: int = 120  # budget at which the lr drops sit at their defaults
    smoothing_epsilon: float = 0.1
    triplet_margin: float = 0.3
    head_init_scale: float = 0.01
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pk: PKConfig = field(default_factory=PKConfig)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.smoothing_epsilon < 1.0:
            raise ValueError("smoothing_epsilon must be in [0, 1)")


@dataclass
class InterTrainResult:
    model: EmbeddingModel
    head_weights: np.ndarray  # kept for inspection; never used at retrieval
    trace: LossTrace


def train_inter(view: TrainView, labeling: PseudoLabeling,
                init_model: EmbeddingModel, cfg: InterTrainConfig) -> InterTrainResult:
    """Re-train on pseudo classes; returns a trained copy of the model.

    The labeling must cover every accumulated identity.  With zero epochs
    the initial model comes back unchanged.
    """
    if labeling.labels.shape[0] != view.layout.total_ids:
        raise ValueError(
            f"labeling covers {labeling.labels.shape[0]} ids, dataset has "
            f"{view.layout.total_ids}"
        )
    model = init_model.copy()
    unique = np.unique(labeling.labels)
    num_classes = int(unique.size)
    rng = np.random.default_rng(cfg.seed + 1)
    head = cfg.head_init_scale * rng.standard_normal((model.embed_dim, num_classes))
    if cfg.epochs == 0:
        return InterTrainResult(model=model, head_weights=head,
                                trace=LossTrace(columns=["id", "triplet", "total"]))

    dense = np.searchsorted(unique, labeling.labels)  # 0-based class per identity
    sample_classes = dense[view.global_ids() - 1]
    sampler = PKSampler.from_labels(sample_classes.tolist(), cfg.pk, cfg.seed)

    all_params = {**model.params, "head_W": head}
    opt = AdamOptimizer(all_params, cfg.optimizer)
    drops = lr_drop_epochs(cfg.epochs, cfg.reference_epochs)
    trace = LossTrace(columns=["id", "triplet", "total"])

    step = 0
    for epoch in range(cfg.epochs):
        lr = learning_rate_at(epoch, cfg.optimizer.learning_rate, drops)
        for batch in sampler.epoch_batches():
            Xb = view.X[batch]
            classes = sample_classes[batch]
            G, F, tape = model.forward(Xb)
            total, dG, dF, dW, parts = inter_total(
                G, F, head, classes, cfg.smoothing_epsilon, cfg.triplet_margin)
            grads = model.backward(tape, dG, dF)
            grads["head_W"] = dW
            opt.step(all_params, grads, lr)
            model.bump_version()
            trace.append(step, epoch, {
                "id": parts["id"], "triplet": parts["triplet"], "total": total,
            })
            step += 1
        log.debug("inter epoch %d done, lr %.2e", epoch, lr)
    return InterTrainResult(model=model, head_weights=head, trace=trace)
