"""Training, checkpointing and evaluation."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import PrepConfig, RunConfig, TrainConfig
from .data import DatasetManifest
from .imaging import augment, center_box, clahe, crop_roi, load_image, resize_bilinear
from .metrics import (
    MetricsReport,
    UndefinedMetricError,
    average_precision,
    confusion_counts,
    roc_auc,
    threshold_metrics,
)
from .network import GlaucomaNet, ModelConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_MAGIC = b"GLAUCOSCREEN-CKPT\n"


class TrainingError(RuntimeError):
    pass


class CheckpointIntegrityError(RuntimeError):
    pass


class CheckpointVersionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def prepare_roi(image: np.ndarray, box, prep: PrepConfig) -> np.ndarray:
    """ROI crop resized to ``prep.roi_side`` and contrast-equalized."""
    if box is None:
        box = center_box(image.shape[1], image.shape[2], prep.roi_fallback_frac)
    roi = crop_roi(image, box, prep.roi_side)
    if prep.clahe_enabled:
        roi = clahe(roi, prep.clip_limit, prep.tile_grid)
    return roi


@dataclass
class SampleCache:
    """Model-ready full and ROI images for every record, held in memory."""

    full: np.ndarray  # N x 3 x S x S, float32
    roi: np.ndarray  # N x 3 x S x S, float32
    labels: np.ndarray  # N

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def build(cls, manifest: DatasetManifest, side: int, prep: PrepConfig) -> "SampleCache":
        n = len(manifest)
        full = np.empty((n, 3, side, side), dtype=np.float32)
        roi = np.empty((n, 3, side, side), dtype=np.float32)
        for i, rec in enumerate(manifest.records):
            image = load_image(manifest.resolve(rec))
            full[i] = resize_bilinear(image, side, side)
            roi[i] = resize_bilinear(prepare_roi(image, rec.roi, prep), side, side)
        return cls(full, roi, manifest.labels)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(state: dict, path: str | Path) -> Path:
    """Write ``state`` as magic line, JSON header line, then a checksummed payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(state, buf)
    payload = buf.getvalue()
    header = {
        "schema_version": SCHEMA_VERSION,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(payload)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(_MAGIC):
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file")
    rest = blob[len(_MAGIC) :]
    nl = rest.find(b"\n")
    try:
        header = json.loads(rest[:nl])
        version = header["schema_version"]
        digest, size = header["sha256"], header["payload_bytes"]
    except (ValueError, KeyError, TypeError):
        raise CheckpointIntegrityError(f"{path}: unreadable header") from None
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint schema version {version}, this build reads version {SCHEMA_VERSION}"
        )
    payload = rest[nl + 1 :]
    if len(payload) != size or hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch (file truncated or corrupt)")
    return torch.load(io.BytesIO(payload), weights_only=True)


def model_from_state(state: dict) -> GlaucomaNet:
    cfg = RunConfig.from_dict(state["config"])
    model = GlaucomaNet(cfg.model)
    model.load_state_dict(state["model"])
    return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def set_determinism(cfg: TrainConfig) -> None:
    if cfg.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif cfg.num_threads > 0:
        torch.set_num_threads(cfg.num_threads)


def build_model(model_cfg: ModelConfig, seed: int) -> GlaucomaNet:
    torch.manual_seed(seed)
    return GlaucomaNet(model_cfg)


def class_weights(labels: np.ndarray) -> torch.Tensor:
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    return torch.tensor(len(labels) / (2.0 * counts), dtype=torch.float32)


def _epoch_order(seed: int, epoch: int, n: int, batch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [perm[i : i + batch] for i in range(0, n, batch)]
    # train-mode batch norm needs two samples when the final map is 1x1
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches.pop()
    return batches


def _augment_batch(cache: SampleCache, idx: np.ndarray, cfg: TrainConfig, iteration: int):
    policy = cfg.policy
    full = np.empty((len(idx), *cache.full.shape[1:]), dtype=np.float32)
    roi = np.empty_like(full)
    for j, i in enumerate(idx):
        full[j] = augment(cache.full[i], policy, np.random.default_rng([cfg.seed, iteration, int(i), 0]))
        roi[j] = augment(cache.roi[i], policy, np.random.default_rng([cfg.seed, iteration, int(i), 1]))
    return torch.from_numpy(full), torch.from_numpy(roi)


@dataclass
class TrainResult:
    state: dict
    log: list[dict] = field(default_factory=list)
    checkpoint_path: Path | None = None


def _state(model, optimizer, cfg: RunConfig, epoch: int, batch_pos: int, iteration: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "epoch": epoch,
        "batch_in_epoch": batch_pos,
        "iteration": iteration,
        "rng": {"torch": torch.get_rng_state()},
        "config": cfg.to_dict(),
    }


def train(
    cfg: RunConfig,
    train_data: SampleCache,
    val_data: SampleCache | None = None,
    out_dir: str | Path | None = None,
    resume: dict | None = None,
) -> TrainResult:
    """Adam on (optionally class-weighted) cross-entropy over the fused logits.

    ``resume`` is a checkpoint state; training continues from its epoch and
    batch position, so a resumed run matches an uninterrupted one step for step.
    Epoch order and augmentation draws are keyed on ``(seed, epoch)`` and
    ``(seed, iteration, sample)``, which keeps them independent of where a run
    was interrupted.
    """
    tc = cfg.train
    labels = train_data.labels
    if len(labels) == 0:
        raise TrainingError("training set is empty")
    if len(np.unique(labels)) < 2:
        raise TrainingError("training set must contain both classes")
    set_determinism(tc)
    out_dir = Path(out_dir) if out_dir is not None else None

    model = build_model(cfg.model, tc.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2), eps=tc.eps)
    epoch, batch_pos, iteration = 0, 0, 0
    if resume is not None:
        model.load_state_dict(resume["model"])
        optimizer.load_state_dict(resume["optimizer"])
        torch.set_rng_state(resume["rng"]["torch"])
        epoch, batch_pos, iteration = resume["epoch"], resume["batch_in_epoch"], resume["iteration"]

    weight = class_weights(labels) if tc.class_weighting else None
    log_path = None
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
    records: list[dict] = []

    def done() -> bool:
        return tc.max_iterations is not None and iteration >= tc.max_iterations

    model.train()
    while epoch < tc.max_epochs and not done():
        batches = _epoch_order(tc.seed, epoch, len(labels), tc.batch_size)
        while batch_pos < len(batches) and not done():
            idx = batches[batch_pos]
            iteration += 1
            batch_pos += 1
            lr = tc.lr_at(iteration)
            for group in optimizer.param_groups:
                group["lr"] = lr
            full, roi = _augment_batch(train_data, idx, tc, iteration)
            target = torch.from_numpy(labels[idx])
            logits, _ = model(full, roi)
            loss = F.cross_entropy(logits, target, weight=weight)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at iteration {iteration} (epoch {epoch}, lr {lr})"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

            if iteration % tc.log_every == 0:
                rec = {"iteration": iteration, "epoch": epoch, "loss": float(loss.item()), "lr": lr}
                records.append(rec)
                if log_path:
                    with open(log_path, "a", encoding="utf-8") as f:
                        f.write(json.dumps(rec) + "\n")
            if out_dir and val_data is not None and iteration % tc.snapshot_every == 0:
                report = evaluate_model(model, val_data, tc.batch_size)
                snap = out_dir / "snapshots" / f"iter_{iteration:07d}.json"
                snap.parent.mkdir(parents=True, exist_ok=True)
                snap.write_text(json.dumps({"iteration": iteration, "epoch": epoch, **report.to_dict()}, indent=2))
                model.train()
        if batch_pos >= len(batches):
            epoch += 1
            batch_pos = 0
            if out_dir and epoch % tc.checkpoint_every == 0:
                state = _state(model, optimizer, cfg, epoch, batch_pos, iteration)
                save_checkpoint(state, out_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt")
                save_checkpoint(state, out_dir / "checkpoints" / "latest.ckpt")
            log.info("epoch %d done at iteration %d", epoch, iteration)

    state = _state(model, optimizer, cfg, epoch, batch_pos, iteration)
    path = save_checkpoint(state, out_dir / "final.ckpt") if out_dir else None
    return TrainResult(state, records, path)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@torch.no_grad()
def predict_scores(model: GlaucomaNet, data: SampleCache, batch_size: int = 16) -> np.ndarray:
    """Class-1 softmax probabilities, no augmentation, batch norm in eval mode."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(data), batch_size):
        full = torch.from_numpy(data.full[i : i + batch_size]).to(dtype)
        roi = torch.from_numpy(data.roi[i : i + batch_size]).to(dtype)
        logits, _ = model(full, roi)
        out.append(torch.softmax(logits.double(), dim=1)[:, 1].numpy())
    return np.concatenate(out)


def safe_metrics(labels: np.ndarray, scores: np.ndarray, threshold: float = 0.5) -> MetricsReport:
    """Summary metrics with undefined rank metrics reported as ``None``.

    AUC is undefined for a single-class set and, here, also for a constant
    score vector, which carries no ranking information.
    """
    scores = np.asarray(scores, dtype=np.float64)
    counts = confusion_counts(labels, scores, threshold)
    ap = auc = None
    try:
        ap = average_precision(labels, scores)
    except UndefinedMetricError as e:
        warnings.warn(f"AP undefined: {e}", RuntimeWarning, stacklevel=2)
    try:
        if np.ptp(scores) == 0:
            raise UndefinedMetricError("all scores are identical")
        auc = roc_auc(labels, scores)
    except UndefinedMetricError as e:
        warnings.warn(f"AUC undefined: {e}", RuntimeWarning, stacklevel=2)
    return MetricsReport(ap=ap, auc=auc, counts=counts, threshold=float(threshold), **threshold_metrics(counts))


def evaluate_model(model: GlaucomaNet, data: SampleCache, batch_size: int = 16, threshold: float = 0.5):
    return safe_metrics(data.labels, predict_scores(model, data, batch_size), threshold)


def evaluate(state: dict, data: SampleCache, batch_size: int = 16, threshold: float = 0.5) -> MetricsReport:
    if state.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"checkpoint schema version {state.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    return evaluate_model(model_from_state(state), data, batch_size, threshold)
