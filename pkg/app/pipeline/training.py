"""
Training loop

Two phases share one optimizer: pretraining (BCE on the foreground, Dice on
the candidates) followed by the main objective (L1 on the distance map,
Lovász hinge on the candidates). Seeds are sampled from the detached
predicted seed map exactly as at inference; each seed trains against the
ground-truth instance under it and background seeds are dropped. The
checkpoint with the best validation F1^mu is kept.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import ndimage
from tqdm import tqdm

from app.config import PipelineConfig, TrainConfig
from app.labelmap.ops import LabelMap, binary_mask
from app.losses import LossValue, cap_candidates, joint_loss
from app.metrics import evaluate_dataset
from app.model.network import bundle_at, forward_batch
from app.model.params import ModelParams
from app.pipeline.candidates import candidate_logits
from app.pipeline.inference import NetworkPredictor, infer
from app.pipeline.seeds import sample_seeds
from app.synthdata.augment import augment_sample
from app.tensor import Adam, ops
from app.tensor.tensor import Tensor
from app.utils.stop_watch import Stopwatch

Pair = Tuple[np.ndarray, LabelMap]


@dataclass
class TrainResult:
    params: ModelParams
    best_f1_mu: float = -1.0
    best_epoch: int = -1
    history: List[Dict] = field(default_factory=list)


def max_object_diameter(dataset: Sequence[Pair]) -> float:
    """Largest bounding-box diagonal over all instances"""
    largest = 0.0
    for _, labels in dataset:
        for window in ndimage.find_objects(np.asarray(labels)):
            if window is not None:
                h = window[0].stop - window[0].start
                w = window[1].stop - window[1].start
                largest = max(largest, float(np.hypot(h, w)))
    return largest


def training_candidates(
    bundle,
    labels: LabelMap,
    phi,
    pipeline: PipelineConfig,
    cap: int,
    rng: np.random.Generator,
) -> List[Tuple[Tensor, np.ndarray]]:
    """(logits, ground-truth mask) per seed that lands on an instance, capped per image"""
    seeds = sample_seeds(bundle.S.data, pipeline.seed_threshold, pipeline.window_radius)
    seeds = [s for s in seeds if labels[s.row, s.col] > 0]
    keep = cap_candidates(len(seeds), cap, rng)
    pairs = []
    for i in keep:
        seed = seeds[i]
        logits, window = candidate_logits(bundle, seed, phi, pipeline.crop_size)
        mask = binary_mask(labels, int(labels[seed.row, seed.col]))[window.slices]
        pairs.append((logits, mask))
    return pairs


def train_step(
    params: ModelParams,
    optimizer: Adam,
    batch: Sequence[Pair],
    phase: str,
    pipeline: PipelineConfig,
    cap: int,
    rng: np.random.Generator,
) -> LossValue:
    X = np.stack([image for image, _ in batch])
    S, P, E = forward_batch(X, params, training=True)
    per_image = []
    for item, (_, labels) in enumerate(batch):
        bundle = bundle_at(S, P, E, item, params.config.positional_dim)
        candidates = training_candidates(bundle, labels, params.phi, pipeline, cap, rng)
        per_image.append(joint_loss(bundle, labels, candidates, phase=phase))
    total = per_image[0].total
    for value in per_image[1:]:
        total = ops.add(total, value.total)
    total = ops.scale(total, 1.0 / len(per_image))
    empty = sum(v.empty for v in per_image)
    if empty:
        logger.warning(f"{empty} of {len(per_image)} images produced no instance candidates")

    params.zero_grad()
    total.backward()
    optimizer.step()
    return LossValue(
        total,
        seed=float(np.mean([v.seed for v in per_image])),
        instance=float(np.mean([v.instance for v in per_image])),
        empty=empty == len(per_image),
    )


def validate(params: ModelParams, dataset: Sequence[Pair], pipeline: PipelineConfig) -> Dict:
    predictor = NetworkPredictor(params, pipeline.precision)
    pairs = [(infer(image, predictor, pipeline), labels) for image, labels in dataset]
    return evaluate_dataset(pairs)["pooled"]


def train(
    train_set: Sequence[Pair],
    val_set: Sequence[Pair],
    params: ModelParams,
    cfg: TrainConfig,
    pipeline: Optional[PipelineConfig] = None,
    metrics_path=None,
    start_epoch: int = 0,
    progress: bool = True,
    best_f1_mu: float = -1.0,
    best_epoch: int = -1,
) -> TrainResult:
    """Optimise params in place; returns the best checkpoint (a copy) and the epoch history

    A resumed run passes the best score and epoch it was saved with, so a later
    epoch only replaces the checkpoint when it validates strictly better.
    """
    if not train_set:
        raise ValueError("training set is empty")
    pipeline = pipeline or PipelineConfig()
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(params.parameters(), lr=cfg.lr)
    crop = min([cfg.crop] + [min(labels.shape) for _, labels in train_set])

    diameter = max_object_diameter(train_set)
    if pipeline.crop_size < 2 * diameter:
        logger.warning(
            f"crop_size {pipeline.crop_size} is below twice the largest object diameter ({diameter:.1f}px)"
        )

    log_file = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(metrics_path, "a", encoding="utf-8")

    result = TrainResult(params=params.copy(), best_f1_mu=best_f1_mu, best_epoch=best_epoch)
    total_epochs = cfg.pretrain_epochs + cfg.epochs
    step = start_epoch * cfg.batches_per_epoch
    stopwatch = Stopwatch()
    try:
        for epoch in range(start_epoch, total_epochs):
            phase = "pretrain" if epoch < cfg.pretrain_epochs else "main"
            stopwatch.start()
            seed_losses, instance_losses = [], []
            bar = tqdm(range(cfg.batches_per_epoch), desc=f"epoch {epoch + 1}/{total_epochs} {phase}", disable=not progress, leave=False)
            for _ in bar:
                batch = [
                    augment_sample(*train_set[int(rng.integers(len(train_set)))], rng, crop=crop)
                    for _ in range(cfg.batch_size)
                ]
                value = train_step(params, optimizer, batch, phase, pipeline, cfg.instance_cap, rng)
                step += 1
                seed_losses.append(value.seed)
                instance_losses.append(value.instance)
                bar.set_postfix(loss=f"{value.item():.4f}")
                if log_file is not None:
                    log_file.write(json.dumps({"step": step, "epoch": epoch, "phase": phase, **value.breakdown()}) + "\n")

            record = {
                "epoch": epoch,
                "phase": phase,
                "step": step,
                "seed": float(np.mean(seed_losses)),
                "instance": float(np.mean(instance_losses)),
            }
            # 仅在验证 F1^μ 严格提升时更新检查点
            if val_set:
                record["val_f1_mu"] = validate(params, val_set, pipeline)["f1_mu"]
                if record["val_f1_mu"] > result.best_f1_mu:
                    result.params = params.copy()
                    result.best_f1_mu = record["val_f1_mu"]
                    result.best_epoch = epoch
            else:
                result.params = params.copy()
                result.best_epoch = epoch
            record["elapsed_ms"] = round(stopwatch.stop(), 1)
            result.history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            logger.info(
                f"epoch {epoch + 1}/{total_epochs} [{phase}] seed={record['seed']:.4f} "
                f"instance={record['instance']:.4f} val_f1_mu={record.get('val_f1_mu', float('nan')):.4f} "
                f"({record['elapsed_ms']:.0f} ms)"
            )
    finally:
        if log_file is not None:
            log_file.close()
    return result
