"""Retrieval evaluation under the cross-camera protocol.

One sample per (person, camera) appearance is held out as a query; the
rest form the gallery.  Gallery entries sharing both person and camera
with a query are excluded from that query's ranking, so every reported
match is a cross-camera match.  AP sums run in ascending rank order so the
values are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset

DEFAULT_CMC_RANKS = (1, 5, 10)

# Ablation variants, weakest intra baseline first:
#   parametric                  per-camera FC classifier branches
#   camera_agnostic             non-parametric softmax over all identities
#   camera_specific             non-parametric softmax per camera (id loss only)
#   camera_specific_triplet     + batch-hard triplet
#   camera_specific_quintuplet  + quintuplet (the stage-1 default)
#   full_two_stage              quintuplet stage + association + re-training
#   supervised_upper_bound      re-training on ground-truth labels instead
ABLATION_VARIANTS = (
    "parametric",
    "camera_agnostic",
    "camera_specific",
    "camera_specific_triplet",
    "camera_specific_quintuplet",
    "full_two_stage",
    "supervised_upper_bound",
)


@dataclass
class RetrievalProtocol:
    """Disjoint query/gallery index sets over one dataset."""

    query_indices: np.ndarray
    gallery_indices: np.ndarray
    query_pids: np.ndarray
    query_cams: np.ndarray
    gallery_pids: np.ndarray
    gallery_cams: np.ndarray


@dataclass
class MetricsReport:
    """Everything a run reports: retrieval metrics plus run provenance."""

    mean_ap: float
    cmc: dict[int, float]
    num_queries: int
    dropped_queries: int
    association_precision: float | None = None
    association_recall: float | None = None
    loss_traces: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    seed: int | None = None

    def as_dict(self) -> dict:
        out = {
            "mAP": self.mean_ap,
            "cmc": {f"rank{r}": v for r, v in sorted(self.cmc.items())},
            "num_queries": self.num_queries,
            "dropped_queries": self.dropped_queries,
        }
        if self.association_precision is not None:
            out["association"] = {
                "precision": self.association_precision,
                "recall": self.association_recall,
            }
        if self.loss_traces:
            out["loss_traces"] = self.loss_traces
        if self.config_echo:
            out["config"] = self.config_echo
        if self.seed is not None:
            out["seed"] = self.seed
        return out


def split_protocol(dataset: Dataset, seed: int) -> RetrievalProtocol:
    """Hold out one seeded sample per (person, camera) appearance as query."""
    groups: dict[tuple[int, int], list[int]] = {}
    for i in range(dataset.num_samples):
        key = (int(dataset.truth_pids[i]), int(dataset.cameras[i]))
        groups.setdefault(key, []).append(i)
    rng = np.random.default_rng(seed)
    query, gallery = [], []
    for key in sorted(groups):
        members = groups[key]
        pick = int(rng.integers(0, len(members)))
        for pos, idx in enumerate(members):
            (query if pos == pick else gallery).append(idx)
    q = np.asarray(query, dtype=np.int64)
    g = np.asarray(gallery, dtype=np.int64)
    return RetrievalProtocol(
        query_indices=q,
        gallery_indices=g,
        query_pids=dataset.truth_pids[q],
        query_cams=dataset.cameras[q],
        gallery_pids=dataset.truth_pids[g],
        gallery_cams=dataset.cameras[g],
    )


def rank_queries(query_emb: np.ndarray, gallery_emb: np.ndarray,
                 protocol: RetrievalProtocol) -> tuple[list[np.ndarray], list[np.ndarray], int]:
    """Sorted gallery per query plus relevance flags.

    Gallery entries with the query's own (person, camera) pair are removed
    before ranking.  Queries left without any relevant entry are dropped
    and counted.  Ties in distance order by gallery index.
    """
    rankings, relevances = [], []
    dropped = 0
    for qi in range(query_emb.shape[0]):
        keep = ~((protocol.gallery_pids == protocol.query_pids[qi]) &
                 (protocol.gallery_cams == protocol.query_cams[qi]))
        candidates = np.flatnonzero(keep)
        if candidates.size == 0:
            dropped += 1
            continue
        diffs = gallery_emb[candidates] - query_emb[qi]
        dists = np.linalg.norm(diffs, axis=1)
        order = np.argsort(dists, kind="stable")  # stable: ties fall to lower index
        ranked = candidates[order]
        relevant = protocol.gallery_pids[ranked] == protocol.query_pids[qi]
        if not relevant.any():
            dropped += 1
            continue
        rankings.append(ranked)
        relevances.append(relevant)
    return rankings, relevances, dropped


def cmc_map(relevances: list[np.ndarray],
            ranks: tuple[int, ...] = DEFAULT_CMC_RANKS) -> tuple[dict[int, float], float]:
    """Cumulative matching characteristic and mean average precision.

    AP per query is the mean, over relevant positions k (1-based), of the
    precision within the top k.  Sums accumulate in ascending k so the
    result is identical to a plain sequential evaluation.
    """
    if not relevances:
        raise ValueError("no valid queries to evaluate")
    ap_values = []
    hits_at = {r: 0 for r in ranks}
    for relevant in relevances:
        relevant = np.asarray(relevant, dtype=bool)
        if not relevant.any():
            raise ValueError("every ranking must contain a relevant entry")
        cum_hits = np.cumsum(relevant)
        precisions = cum_hits / np.arange(1, relevant.size + 1)
        acc = 0.0
        for p in precisions[relevant]:
            acc += float(p)
        ap_values.append(acc / int(cum_hits[-1]))
        first_hit = int(np.flatnonzero(relevant)[0]) + 1
        for r in ranks:
            if first_hit <= r:
                hits_at[r] += 1
    total = 0.0
    for ap in ap_values:
        total += ap
    mean_ap = total / len(ap_values)
    cmc = {r: hits_at[r] / len(relevances) for r in ranks}
    return cmc, float(mean_ap)


def evaluate_model(model, dataset: Dataset, seed: int,
                   ranks: tuple[int, ...] = DEFAULT_CMC_RANKS) -> MetricsReport:
    """Cross-camera retrieval metrics of a frozen model on one dataset."""
    protocol = split_protocol(dataset, seed)
    _, qF, _ = model.forward(dataset.X[protocol.query_indices])
    _, gF, _ = model.forward(dataset.X[protocol.gallery_indices])
    _, relevances, dropped = rank_queries(qF, gF, protocol)
    cmc, mean_ap = cmc_map(relevances, ranks)
    return MetricsReport(
        mean_ap=mean_ap,
        cmc=cmc,
        num_queries=len(relevances),
        dropped_queries=dropped,
        seed=seed,
    )


_INTRA_VARIANT_KNOBS = {
    "parametric": ("parametric", "none"),
    "camera_agnostic": ("camera_agnostic", "none"),
    "camera_specific": ("camera_specific", "none"),
    "camera_specific_triplet": ("camera_specific", "triplet"),
    "camera_specific_quintuplet": ("camera_specific", "quintuplet"),
}

SEED_MODEL_INIT = 404
SEED_INTRA = 101
SEED_INTER = 202
SEED_EVAL_SPLIT = 303


def run_ablation(dataset: Dataset, run_cfg,
                 variants: tuple[str, ...] = ABLATION_VARIANTS) -> dict[str, MetricsReport]:
    """Train and evaluate the model variants on one shared benchmark.

    All variants share the dataset, the initial model and the batch
    schedule, so metric differences isolate the learning recipe.  The
    two-stage variants branch off the trained quintuplet model: one
    re-trains on graph-derived pseudo labels, the other on ground truth.
    """
    from .association import associate, association_quality, labeling_from_truth
    from .inter_training import InterTrainConfig, train_inter
    from .intra_training import IntraTrainConfig, train_intra
    from .model import EmbeddingModel

    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}")

    view = dataset.training_view()
    seed = run_cfg.seed
    init_model = EmbeddingModel(
        dataset.feature_dim, run_cfg.model.hidden_dim, run_cfg.model.embed_dim,
        rng=np.random.default_rng(seed + SEED_MODEL_INIT))

    needs_quintuplet = {"camera_specific_quintuplet", "full_two_stage",
                        "supervised_upper_bound"}
    intra_needed = {v for v in variants if v in _INTRA_VARIANT_KNOBS}
    if needs_quintuplet & set(variants):
        intra_needed.add("camera_specific_quintuplet")

    intra_results = {}
    for name in sorted(intra_needed):
        classifier, metric = _INTRA_VARIANT_KNOBS[name]
        cfg = IntraTrainConfig(
            epochs=run_cfg.stages.intra_epochs,
            reference_epochs=run_cfg.stages.intra_reference_epochs,
            classifier=classifier,
            metric_loss=metric,
            quintuplet=run_cfg.quintuplet(),
            triplet_margin=run_cfg.losses.triplet_margin,
            memory_rate=run_cfg.memory.update_rate,
            temperature=run_cfg.memory.temperature,
            optimizer=run_cfg.optimizer,
            pk=run_cfg.sampler,
            seed=seed + SEED_INTRA,
        )
        intra_results[name] = train_intra(view, init_model, cfg)

    inter_cfg = InterTrainConfig(
        epochs=run_cfg.stages.inter_epochs,
        reference_epochs=run_cfg.stages.inter_reference_epochs,
        smoothing_epsilon=run_cfg.losses.smoothing_epsilon,
        triplet_margin=run_cfg.losses.triplet_margin,
        optimizer=run_cfg.optimizer,
        pk=run_cfg.sampler,
        seed=seed + SEED_INTER,
    )

    table: dict[str, MetricsReport] = {}
    for name in variants:
        if name in _INTRA_VARIANT_KNOBS:
            report = evaluate_model(intra_results[name].model, dataset, seed + SEED_EVAL_SPLIT)
        elif name == "full_two_stage":
            stage1 = intra_results["camera_specific_quintuplet"]
            budget = run_cfg.association.pair_budget
            labeling, _, _ = associate(
                stage1.bank, None if budget == "auto" else budget)
            quality = association_quality(
                labeling, dataset.truth_by_global_id(),
                _bank_cameras(stage1.bank))
            result = train_inter(view, labeling, stage1.model, inter_cfg)
            report = evaluate_model(result.model, dataset, seed + SEED_EVAL_SPLIT)
            report.association_precision = quality.precision
            report.association_recall = quality.recall
        else:  # supervised_upper_bound
            stage1 = intra_results["camera_specific_quintuplet"]
            labeling = labeling_from_truth(dataset.truth_by_global_id(), dataset.layout)
            result = train_inter(view, labeling, stage1.model, inter_cfg)
            report = evaluate_model(result.model, dataset, seed + SEED_EVAL_SPLIT)
        report.seed = seed
        table[name] = report
    return table


def _bank_cameras(bank) -> np.ndarray:
    from .association import vertex_cameras

    return vertex_cameras(bank.layout)


def intra_camera_rank1(model, dataset: Dataset, seed: int) -> float:
    """Rank-1 of same-camera retrieval; calibration check for the benchmark.

    Queries follow the usual split but are ranked against their own
    camera's gallery with self-matches implicitly absent (the query is
    held out of the gallery).
    """
    protocol = split_protocol(dataset, seed)
    _, qF, _ = model.forward(dataset.X[protocol.query_indices])
    _, gF, _ = model.forward(dataset.X[protocol.gallery_indices])
    hits = 0
    valid = 0
    for qi in range(qF.shape[0]):
        same_cam = np.flatnonzero(protocol.gallery_cams == protocol.query_cams[qi])
        if same_cam.size == 0:
            continue
        relevant_exists = np.any(
            protocol.gallery_pids[same_cam] == protocol.query_pids[qi])
        if not relevant_exists:
            continue
        dists = np.linalg.norm(gF[same_cam] - qF[qi], axis=1)
        best = same_cam[np.argsort(dists, kind="stable")[0]]
        valid += 1
        if protocol.gallery_pids[best] == protocol.query_pids[qi]:
            hits += 1
    if valid == 0:
        raise ValueError("no query has a same-camera positive; cannot calibrate")
    return hits / valid
