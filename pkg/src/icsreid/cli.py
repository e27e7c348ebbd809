"""Command-line pipeline: generate, train both stages, associate, evaluate.

Every subcommand reads and writes files under a single output directory,
so downstream steps find their inputs where upstream steps left them.
``run-all`` chains the whole pipeline and writes the final report with
figures.  Exit codes: 0 on success, 2 for config problems, 3 for missing
upstream artifacts, 1 for anything else.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .association import (associate, association_quality, load_pseudo_labels,
                          save_pseudo_labels, vertex_cameras)
from .config import ConfigError, RunConfig, config_echo, default_config, load_config, with_seed
from .dataset import DatasetError, generate
from .dataset import load as load_dataset
from .dataset import save as save_dataset
from .evaluation import (SEED_EVAL_SPLIT, SEED_INTER, SEED_INTRA,
                         SEED_MODEL_INIT, evaluate_model, run_ablation)
from .inter_training import InterTrainConfig, train_inter
from .intra_training import IntraTrainConfig, train_intra
from .model import EmbeddingModel
from .memory import MemoryBank
from .report import (format_text_table, render_ablation_figure, render_cmc_figure,
                     render_loss_figure, write_json, write_metrics_table)

log = logging.getLogger("icsreid")

DATASET_FILE = "dataset.tsv"
INTRA_MODEL_FILE = "model_intra.ckpt"
INTER_MODEL_FILE = "model_inter.ckpt"
BANK_FILE = "bank.tsv"
PSEUDO_FILE = "pseudo_labels.tsv"
INTRA_TRACE_FILE = "loss_intra.tsv"
INTER_TRACE_FILE = "loss_inter.tsv"


class MissingArtifactError(FileNotFoundError):
    pass


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run `icsreid {producer}` first")
    return path


def _intra_cfg(cfg: RunConfig) -> IntraTrainConfig:
    return IntraTrainConfig(
        epochs=cfg.stages.intra_epochs,
        reference_epochs=cfg.stages.intra_reference_epochs,
        quintuplet=cfg.quintuplet(),
        triplet_margin=cfg.losses.triplet_margin,
        memory_rate=cfg.memory.update_rate,
        temperature=cfg.memory.temperature,
        optimizer=cfg.optimizer,
        pk=cfg.sampler,
        seed=cfg.seed + SEED_INTRA,
    )


def _inter_cfg(cfg: RunConfig) -> InterTrainConfig:
    return InterTrainConfig(
        epochs=cfg.stages.inter_epochs,
        reference_epochs=cfg.stages.inter_reference_epochs,
        smoothing_epsilon=cfg.losses.smoothing_epsilon,
        triplet_margin=cfg.losses.triplet_margin,
        optimizer=cfg.optimizer,
        pk=cfg.sampler,
        seed=cfg.seed + SEED_INTER,
    )


def _init_model(cfg: RunConfig, feature_dim: int) -> EmbeddingModel:
    return EmbeddingModel(feature_dim, cfg.model.hidden_dim, cfg.model.embed_dim,
                          rng=np.random.default_rng(cfg.seed + SEED_MODEL_INIT))


def _dataset_stats(data) -> dict:
    return {
        "num_samples": int(data.num_samples),
        "num_cameras": int(data.layout.num_cameras),
        "accumulated_ids": int(data.layout.total_ids),
        "ids_per_camera": list(data.layout.id_counts),
        "images_per_camera_person": data.images_per_camera_person(),
    }


def cmd_generate(cfg: RunConfig, out: Path) -> None:
    data = generate(cfg.generator)
    save_dataset(data, out / DATASET_FILE)
    log.info("wrote %s: %d samples, %d accumulated ids",
             out / DATASET_FILE, data.num_samples, data.layout.total_ids)


def cmd_train_intra(cfg: RunConfig, out: Path) -> None:
    data = load_dataset(_require(out / DATASET_FILE, "generate"))
    result = train_intra(data.training_view(), _init_model(cfg, data.feature_dim),
                         _intra_cfg(cfg))
    result.model.save(out / INTRA_MODEL_FILE)
    result.bank.save(out / BANK_FILE)
    result.trace.save_tsv(out / INTRA_TRACE_FILE)
    log.info("stage 1 done: %s, %s, %s", INTRA_MODEL_FILE, BANK_FILE, INTRA_TRACE_FILE)


def cmd_associate(cfg: RunConfig, out: Path) -> None:
    bank = MemoryBank.load(_require(out / BANK_FILE, "train-intra"))
    budget = cfg.association.pair_budget
    labeling, graph, threshold = associate(bank, None if budget == "auto" else budget)
    save_pseudo_labels(labeling, out / PSEUDO_FILE)
    payload = {
        "threshold": None if np.isinf(threshold) else threshold,
        "num_edges": len(graph.edges),
        "num_pseudo_classes": labeling.num_classes,
        "same_camera_conflicts": labeling.same_camera_conflicts,
    }
    dataset_path = out / DATASET_FILE
    if dataset_path.exists():
        data = load_dataset(dataset_path)
        quality = association_quality(labeling, data.truth_by_global_id(),
                                      vertex_cameras(data.layout))
        payload["quality"] = {
            "precision": quality.precision,
            "recall": quality.recall,
            "associated_pairs": quality.associated_pairs,
            "correct_pairs": quality.correct_pairs,
            "true_pairs": quality.true_pairs,
            "no_pairs_flag": quality.no_pairs_flag,
        }
    write_json(payload, out / "association.json")
    log.info("association: %d edges, %d pseudo classes", len(graph.edges),
             labeling.num_classes)


def cmd_train_inter(cfg: RunConfig, out: Path) -> None:
    data = load_dataset(_require(out / DATASET_FILE, "generate"))
    labeling = load_pseudo_labels(_require(out / PSEUDO_FILE, "associate"))
    init = EmbeddingModel.load(_require(out / INTRA_MODEL_FILE, "train-intra"))
    result = train_inter(data.training_view(), labeling, init, _inter_cfg(cfg))
    result.model.save(out / INTER_MODEL_FILE)
    result.trace.save_tsv(out / INTER_TRACE_FILE)
    log.info("stage 2 done: %s, %s", INTER_MODEL_FILE, INTER_TRACE_FILE)


def cmd_evaluate(cfg: RunConfig, out: Path, model_path: str | None = None) -> None:
    data = load_dataset(_require(out / DATASET_FILE, "generate"))
    if model_path:
        path = Path(model_path)
        if not path.exists():
            raise MissingArtifactError(f"{path} not found")
    elif (out / INTER_MODEL_FILE).exists():
        path = out / INTER_MODEL_FILE
    else:
        path = _require(out / INTRA_MODEL_FILE, "train-intra or train-inter")
    model = EmbeddingModel.load(path)
    report = evaluate_model(model, data, cfg.seed + SEED_EVAL_SPLIT)
    report.config_echo = config_echo(cfg)
    report.seed = cfg.seed
    payload = report.as_dict()
    payload["model_file"] = path.name
    payload["dataset"] = _dataset_stats(data)
    write_json(payload, out / "report.json")
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    render_cmc_figure({path.name: report.cmc}, figures / "cmc.png")
    rows = {path.name: report}
    write_metrics_table(rows, out / "report.tsv")
    (out / "report.txt").write_text(format_text_table(rows), encoding="utf-8")
    log.info("evaluated %s: mAP %.4f rank-1 %.4f", path.name, report.mean_ap,
             report.cmc.get(1, float("nan")))


def cmd_ablate(cfg: RunConfig, out: Path) -> None:
    data = load_dataset(_require(out / DATASET_FILE, "generate"))
    table = run_ablation(data, cfg)
    payload = {
        "config": config_echo(cfg),
        "seed": cfg.seed,
        "dataset": _dataset_stats(data),
        "variants": {name: report.as_dict() for name, report in table.items()},
    }
    write_json(payload, out / "ablation.json")
    write_metrics_table(table, out / "ablation.tsv")
    (out / "ablation.txt").write_text(format_text_table(table), encoding="utf-8")
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    render_ablation_figure(table, figures / "ablation.png")
    log.info("ablation table:\n%s", format_text_table(table))


def cmd_run_all(cfg: RunConfig, out: Path) -> None:
    data = generate(cfg.generator)
    save_dataset(data, out / DATASET_FILE)
    view = data.training_view()

    stage1 = train_intra(view, _init_model(cfg, data.feature_dim), _intra_cfg(cfg))
    stage1.model.save(out / INTRA_MODEL_FILE)
    stage1.bank.save(out / BANK_FILE)
    stage1.trace.save_tsv(out / INTRA_TRACE_FILE)

    budget = cfg.association.pair_budget
    labeling, graph, threshold = associate(stage1.bank,
                                           None if budget == "auto" else budget)
    save_pseudo_labels(labeling, out / PSEUDO_FILE)
    quality = association_quality(labeling, data.truth_by_global_id(),
                                  vertex_cameras(data.layout))

    stage2 = train_inter(view, labeling, stage1.model, _inter_cfg(cfg))
    stage2.model.save(out / INTER_MODEL_FILE)
    stage2.trace.save_tsv(out / INTER_TRACE_FILE)

    eval_seed = cfg.seed + SEED_EVAL_SPLIT
    intra_report = evaluate_model(stage1.model, data, eval_seed)
    full_report = evaluate_model(stage2.model, data, eval_seed)

    payload = {
        "config": config_echo(cfg),
        "seed": cfg.seed,
        "dataset": _dataset_stats(data),
        "association": {
            "threshold": None if np.isinf(threshold) else threshold,
            "num_edges": len(graph.edges),
            "num_pseudo_classes": labeling.num_classes,
            "same_camera_conflicts": labeling.same_camera_conflicts,
            "precision": quality.precision,
            "recall": quality.recall,
            "associated_pairs": quality.associated_pairs,
            "correct_pairs": quality.correct_pairs,
            "true_pairs": quality.true_pairs,
        },
        "intra_stage": {**intra_report.as_dict(),
                        "loss_epoch_means": stage1.trace.epoch_means()},
        "full": {**full_report.as_dict(),
                 "loss_epoch_means": stage2.trace.epoch_means()},
        "mAP_intra_only": intra_report.mean_ap,
        "mAP_full": full_report.mean_ap,
    }
    write_json(payload, out / "report.json")

    rows = {"intra_only": intra_report, "full_two_stage": full_report}
    write_metrics_table(rows, out / "report.tsv")
    (out / "report.txt").write_text(format_text_table(rows), encoding="utf-8")
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    render_loss_figure(stage1.trace.epoch_means(), "stage 1 training loss",
                       figures / "loss_intra.png")
    render_loss_figure(stage2.trace.epoch_means(), "stage 2 training loss",
                       figures / "loss_inter.png")
    render_cmc_figure({"intra_only": intra_report.cmc, "full": full_report.cmc},
                      figures / "cmc.png")
    log.info("run-all: association P=%.3f R=%.3f, mAP intra %.4f -> full %.4f",
             quality.precision, quality.recall, intra_report.mean_ap,
             full_report.mean_ap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icsreid",
        description="Two-stage re-identification learner for per-camera-labelled data",
    )
    parser.add_argument("--version", action="version", version=f"icsreid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None,
                        help="JSON run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the master and generator seeds")
    common.add_argument("--out", type=str, default="out",
                        help="artifact directory (default: ./out)")
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train-intra", parents=[common], help="stage 1: per-camera training")
    sub.add_parser("associate", parents=[common],
                   help="link identities across cameras from the bank snapshot")
    sub.add_parser("train-inter", parents=[common], help="stage 2: pseudo-label training")
    evaluate = sub.add_parser("evaluate", parents=[common], help="retrieval metrics")
    evaluate.add_argument("--model", type=str, default=None,
                          help="checkpoint to evaluate (default: latest stage)")
    sub.add_parser("ablate", parents=[common], help="train and compare all variants")
    sub.add_parser("run-all", parents=[common], help="full pipeline plus report")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("ICSREID_LOG_LEVEL", "INFO").upper(),
                      logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handlers = {
        "generate": cmd_generate,
        "train-intra": cmd_train_intra,
        "associate": cmd_associate,
        "train-inter": cmd_train_inter,
        "ablate": cmd_ablate,
        "run-all": cmd_run_all,
    }
    try:
        if args.command == "evaluate":
            cmd_evaluate(cfg, out, args.model)
        else:
            handlers[args.command](cfg, out)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
