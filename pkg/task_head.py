"""
Frozen mini point classifier and the training loops around it.

The head is a shared per-point MLP (3 -> 32 -> 64 -> 128, relu), a column-wise
max pool and a linear classifier. It is pre-trained on full-resolution clouds
with cross-entropy, then held fixed while the sampler learns to feed it.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

import lightn_model
import tensor_core as tc
from datasets import PointDataset
from errors import ConfigError, ContractError, DomainError, TrainingError
from losses import sampling_loss_terms, total_loss
from projection import TEMPERATURE_FLOOR, soft_project, soft_project_points
from samplers_classic import apply_sampler, as_cloud, dedup_and_complete, nn_match
from schemas import (AttentionConfig, EvalMode, FFNConfig, LossConfig, ProjectionConfig,
                     SamplerName, TrainConfig)
from tensor_core import Matrix, Tape
from utils import serializers

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "task_head"
TASK_WIDTHS = (3, 32, 64, 128)

PRETRAIN_COLUMNS = ["epoch", "loss", "accuracy"]
SAMPLER_COLUMNS = ["epoch", "loss", "chamfer", "repulsion", "projection", "task", "accuracy"]


class TaskParams:
    """Weights of the mini classifier: mlp{i}_w/b for the shared layers, cls_w/b"""

    def __init__(self, blocks: Dict[str, np.ndarray], widths: Sequence[int], classes: int,
                 class_names: Optional[List[str]] = None):
        self.blocks = blocks
        self.widths = tuple(int(w) for w in widths)
        self.classes = int(classes)
        self.class_names = list(class_names or [])

    def count(self) -> int:
        return int(sum(v.size for v in self.blocks.values()))

    def snapshot(self) -> Dict[str, bytes]:
        return {name: value.tobytes() for name, value in self.blocks.items()}

    def meta(self) -> dict:
        return {"widths": list(self.widths), "classes": self.classes, "class_names": self.class_names}


def init_task_params(classes: int, seed: int, widths: Sequence[int] = TASK_WIDTHS,
                     class_names: Optional[List[str]] = None) -> TaskParams:
    if classes < 1:
        raise DomainError(f"task head needs at least one class, got {classes}")
    if len(widths) < 2 or widths[0] != 3:
        raise ConfigError(f"task widths must start at 3 and have a hidden layer, got {list(widths)}")
    rng = np.random.default_rng(seed)
    blocks = {}
    for i in range(len(widths) - 1):
        bound = math.sqrt(1.0 / widths[i])
        blocks[f"mlp{i}_w"] = rng.uniform(-bound, bound, size=(widths[i], widths[i + 1]))
        blocks[f"mlp{i}_b"] = np.zeros((1, widths[i + 1]))
    bound = math.sqrt(1.0 / widths[-1])
    blocks["cls_w"] = rng.uniform(-bound, bound, size=(widths[-1], classes))
    blocks["cls_b"] = np.zeros((1, classes))
    return TaskParams(blocks, widths, classes, class_names)


def _weights(theta: Union[TaskParams, Dict[str, Matrix]]) -> Dict[str, Matrix]:
    if isinstance(theta, TaskParams):
        return {name: Matrix(value) for name, value in theta.blocks.items()}
    return theta


def _features(x: Matrix, w: Dict[str, Matrix]) -> Matrix:
    i = 0
    while f"mlp{i}_w" in w:
        x = tc.relu(tc.linear(x, w[f"mlp{i}_w"], w[f"mlp{i}_b"]))
        i += 1
    return x


def task_forward(p, theta) -> Matrix:
    """Class logits (1×classes) for one cloud"""
    x = p if isinstance(p, Matrix) else Matrix(as_cloud(p)[:, :3])
    if x.rows == 0:
        raise DomainError("task_forward on an empty cloud")
    w = _weights(theta)
    pooled = tc.reduce(_features(x, w), "max_over_rows")
    return tc.linear(pooled, w["cls_w"], w["cls_b"])


def task_forward_batch(stacked, theta, points_per_cloud: int) -> Matrix:
    """Logits (B×classes) for B clouds of equal size stacked row-wise"""
    x = stacked if isinstance(stacked, Matrix) else Matrix(stacked)
    w = _weights(theta)
    pooled = tc.max_over_segments(_features(x, w), points_per_cloud)
    return tc.linear(pooled, w["cls_w"], w["cls_b"])


def predict(clouds: np.ndarray, theta: TaskParams, batch_size: int = 64) -> np.ndarray:
    """Predicted labels for a (K, n, 3) array of clouds"""
    clouds = np.asarray(clouds, dtype=np.float64)
    preds = []
    for start in range(0, clouds.shape[0], batch_size):
        chunk = clouds[start:start + batch_size]
        logits = task_forward_batch(chunk.reshape(-1, 3), theta, chunk.shape[1])
        preds.append(np.argmax(logits.value, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def accuracy(dataset: PointDataset, theta: TaskParams) -> float:
    if len(dataset) == 0:
        return 0.0
    return float((predict(dataset.clouds, theta) == dataset.labels).mean())


def _check_finite(loss: Matrix, diagnostics: dict):
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"loss became {value}", dict(diagnostics, loss=repr(value)))


@dataclass
class TaskTrainResult:
    params: TaskParams
    train_accuracy: float
    test_accuracy: Optional[float]
    history: List[dict] = field(default_factory=list)


def pretrain_task(dataset: PointDataset, cfg: TrainConfig, test: Optional[PointDataset] = None,
                  widths: Sequence[int] = TASK_WIDTHS, metrics_path: Optional[str] = None) -> TaskTrainResult:
    """
    Cross-entropy training of the classifier on full-resolution clouds.

    Args:
        dataset: training clouds
        cfg: batch size, learning rate, epochs, seed and Adam constants
        test: optional held-out clouds for the reported test accuracy
        widths: shared-MLP widths, starting at 3
        metrics_path: where to write the per-epoch CSV (epoch, loss, accuracy)

    Returns:
        TaskTrainResult with the trained params and final accuracies
    """
    if len(dataset) == 0:
        raise DomainError("cannot pretrain on an empty dataset")
    classes = max(dataset.num_classes, int(dataset.labels.max()) + 1)
    if classes < 2:
        logger.warning("[TRAIN_TASK] single-class dataset; every prediction is trivially correct")
    theta = init_task_params(classes, cfg.seed, widths, dataset.class_names)
    optimizer = tc.Adam(theta.blocks, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []

    for epoch in range(1, cfg.epochs + 1):
        losses, correct = [], 0
        for b, idx in enumerate(dataset.batches(cfg.batch_size, rng)):
            tape = Tape()
            w = {name: tape.leaf(value, name=name) for name, value in theta.blocks.items()}
            logits = task_forward_batch(dataset.clouds[idx].reshape(-1, 3), w, dataset.n)
            loss = tc.softmax_cross_entropy(logits, dataset.labels[idx])
            _check_finite(loss, {"epoch": epoch, "batch": b})
            optimizer.step(tc.backward(tape, loss))
            losses.append(loss.item() * len(idx))
            correct += int((np.argmax(logits.value, axis=1) == dataset.labels[idx]).sum())
        row = {"epoch": epoch, "loss": sum(losses) / len(dataset), "accuracy": correct / len(dataset)}
        history.append(row)
        logger.info(f"[TRAIN_TASK] epoch {epoch}/{cfg.epochs} loss={row['loss']:.5f} acc={row['accuracy']:.4f}")

    if metrics_path:
        serializers.write_csv(metrics_path, PRETRAIN_COLUMNS, ([r[c] for c in PRETRAIN_COLUMNS] for r in history))

    train_acc = accuracy(dataset, theta)
    test_acc = accuracy(test, theta) if test is not None else None
    logger.info(f"[TRAIN_TASK] ✅ train accuracy {train_acc:.4f}, test accuracy {test_acc}")
    return TaskTrainResult(theta, train_acc, test_acc, history)


@dataclass
class SamplerTrainResult:
    params: lightn_model.SamplerParams
    history: List[dict] = field(default_factory=list)


def train_sampler(dataset: PointDataset, theta: TaskParams, m: int, cfg: TrainConfig, loss_cfg: LossConfig,
                  attention: Optional[AttentionConfig] = None, ffn: Optional[FFNConfig] = None,
                  projection: Optional[ProjectionConfig] = None,
                  init: Optional[lightn_model.SamplerParams] = None,
                  metrics_path: Optional[str] = None) -> SamplerTrainResult:
    """
    Train LighTN against the frozen classifier.

    Per batch: forward -> soft_project -> sampling loss per cloud (averaged),
    then the frozen head on the projected points for the task loss, and
    L_total = L_sampling + δ·L_task. Only sampler weights live on the tape;
    the classifier enters as constants and is verified bit-identical afterwards.
    """
    if m < 1 or m > dataset.n:
        raise DomainError(f"cannot sample m={m} from N={dataset.n}")
    if theta.classes < int(dataset.labels.max()) + 1:
        raise ConfigError(f"task head has {theta.classes} classes, dataset labels go to {int(dataset.labels.max())}")
    projection = projection or ProjectionConfig(temperature_kind=loss_cfg.temperature_kind)
    params = init.copy() if init is not None else lightn_model.init_params(
        cfg.seed, attention or AttentionConfig(), m=m, ffn=ffn or FFNConfig(), projection=projection)
    if params.m != m:
        raise ConfigError(f"initial sampler emits {params.m} points, training asked for m={m}")

    frozen = theta.snapshot()
    theta_const = _weights(theta)
    optimizer = tc.Adam(params.blocks, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []

    for epoch in range(1, cfg.epochs + 1):
        sums = {c: 0.0 for c in SAMPLER_COLUMNS[1:]}
        for b, idx in enumerate(dataset.batches(cfg.batch_size, rng)):
            tape = Tape()
            w = lightn_model.attach(params, tape)
            t = w["temperature_t"]
            projected, sampling, parts = [], None, {"chamfer": 0.0, "repulsion": 0.0, "projection": 0.0}
            for k in idx:
                cloud = dataset.clouds[k]
                generated = lightn_model.forward(cloud, w, m, params.attention)
                q = soft_project(generated, cloud, params.projection, t)
                terms = sampling_loss_terms(generated, q, cloud, t, loss_cfg)
                for name in parts:
                    if name in terms:
                        parts[name] += terms[name].item()
                sampling = terms["sampling"] if sampling is None else tc.add(sampling, terms["sampling"])
                projected.append(q)
            sampling = tc.scale(sampling, 1.0 / len(idx))
            logits = task_forward_batch(tc.concat_rows(projected), theta_const, m)
            task = tc.softmax_cross_entropy(logits, dataset.labels[idx])
            loss = total_loss(sampling, task, loss_cfg)
            _check_finite(loss, {"epoch": epoch, "batch": b, "temperature": params.temperature_t})

            grads = tc.backward(tape, loss)
            if set(grads) != set(params.blocks):
                raise ContractError(f"unexpected gradient buffers: {sorted(set(grads) - set(params.blocks))}")
            optimizer.step(grads)
            params.clamp_temperature(TEMPERATURE_FLOOR)

            sums["loss"] += loss.item() * len(idx)
            sums["task"] += task.item() * len(idx)
            for name, value in parts.items():
                sums[name] += value
            sums["accuracy"] += int((np.argmax(logits.value, axis=1) == dataset.labels[idx]).sum())

        row = {"epoch": epoch}
        row.update({name: value / len(dataset) for name, value in sums.items()})
        history.append(row)
        logger.info(f"[TRAIN_SAMPLER] epoch {epoch}/{cfg.epochs} loss={row['loss']:.5f} "
                    f"cd={row['chamfer']:.5f} task={row['task']:.5f} acc={row['accuracy']:.4f} "
                    f"t={params.temperature_t:.4g}")

    if theta.snapshot() != frozen:
        raise ContractError("task head parameters changed during sampler training")
    if metrics_path:
        serializers.write_csv(metrics_path, SAMPLER_COLUMNS, ([r[c] for c in SAMPLER_COLUMNS] for r in history))
    logger.info(f"[TRAIN_SAMPLER] ✅ trained m={m} sampler, final t={params.temperature_t:.4g}")
    return SamplerTrainResult(params, history)


def sampled_clouds(dataset: PointDataset, sampler, m: int, mode: Union[EvalMode, str] = EvalMode.soft,
                   seed: int = 0) -> np.ndarray:
    """
    The (K, m, 3) clouds a sampler feeds to the classifier.

    ``sampler`` is a SamplerParams, a classic sampler name (fps, random, voxel)
    or None for the full-resolution clouds. Matched mode checks that every
    returned cloud is m distinct input points.
    """
    mode = EvalMode(mode)
    if sampler is None:
        return dataset.clouds
    if m < 1 or m > dataset.n:
        raise DomainError(f"cannot sample m={m} from N={dataset.n}")
    out = np.empty((len(dataset), m, 3))
    if isinstance(sampler, lightn_model.SamplerParams):
        if sampler.m != m:
            raise ConfigError(f"sampler emits {sampler.m} points, evaluation asked for m={m}")
        for k, cloud in enumerate(dataset.clouds):
            generated = lightn_model.generate(cloud, sampler)
            if mode == EvalMode.soft:
                out[k] = soft_project_points(generated, cloud, sampler.projection, sampler.temperature_t)
                continue
            idx = dedup_and_complete(nn_match(generated, cloud), cloud, m)
            if len(set(idx.tolist())) != m:
                raise ContractError(f"matched sample of cloud {k} has {len(set(idx.tolist()))} distinct points")
            out[k] = cloud[idx]
        return out
    name = SamplerName(sampler)
    if name == SamplerName.lightn:
        raise ConfigError("lightn evaluation needs trained SamplerParams")
    for k, cloud in enumerate(dataset.clouds):
        out[k] = cloud[apply_sampler(name.value, cloud, m, seed=seed + k)]
    return out


def evaluate(dataset: PointDataset, sampler, theta: TaskParams, m: int,
             mode: Union[EvalMode, str] = EvalMode.soft, seed: int = 0) -> float:
    """Classification accuracy of the frozen head on sampled clouds"""
    if len(dataset) == 0:
        return 0.0
    clouds = sampled_clouds(dataset, sampler, m, mode, seed)
    acc = float((predict(clouds, theta) == dataset.labels).mean())
    if sampler is None:
        label = "full"
    elif isinstance(sampler, lightn_model.SamplerParams):
        label = SamplerName.lightn.value
    else:
        label = SamplerName(sampler).value
    logger.info(f"[EVAL] sampler={label} m={m} mode={EvalMode(mode).value} accuracy={acc:.4f}")
    return acc


def save_task_params(theta: TaskParams, path: str):
    serializers.save_checkpoint(path, CHECKPOINT_KIND, theta.blocks, theta.meta())
    logger.info(f"[CHECKPOINT] saved task head ({theta.count():,} weights) to {path}")


def load_task_params(path: str) -> TaskParams:
    blocks, meta = serializers.load_checkpoint(path, CHECKPOINT_KIND)
    return TaskParams(blocks, meta["widths"], int(meta["classes"]), meta.get("class_names"))
