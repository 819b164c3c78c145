"""Training loop, checkpointing, scoring and the ablation runner.

SGD with momentum, exponential per-epoch learning-rate decay, class
balancing by frame duplication, early stopping on the dev overall loss,
and a JSON-lines training log. Everything is deterministic for a fixed
seed in single-worker mode.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import data as data_mod
from .data import (AugmentConfig, SampleManifest, augment, balance_classes,
                   load_and_crop, normalize)
from .errors import DivergenceError, ValidationError
from .evaluation import ScoreRecord, auc, compute_report, eer_threshold
from .losses import LossWeights, bce_loss, focal_loss, overall_loss, smooth_l1
from .network import BackboneSpec, DualStreamModel, build_model

CHECKPOINT_VERSION = 1

ABLATION_PRESETS = {
    "rgb_bce": {"use_mfd": False, "use_ham": False, "loss_kind": "bce"},
    "rgb_mfd_bce": {"use_mfd": True, "use_ham": False, "loss_kind": "bce"},
    "full_bce": {"use_mfd": True, "use_ham": True, "loss_kind": "bce"},
    "full_flsl": {"use_mfd": True, "use_ham": True, "loss_kind": "focal_sl"},
}


@dataclass
class TrainConfig:
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    lr_decay_gamma: float = 0.995
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 15
    seed: int = 0
    backbone: str = "tiny"
    use_mfd: bool = True
    use_ham: bool = True
    loss_kind: str = "focal_sl"  # "focal_sl" | "bce"
    gamma: float = 2.0
    lambda1_initial: float = 1.0
    lambda1_after: float = 100.0
    lambda1_step_epoch: int = 5
    score_source: str = "binary"
    input_size: int = 224
    augment: bool = True
    cache_images: bool = True
    monitor: str = "dev_loss"  # "dev_loss" | "dev_acer"
    norm_mean: tuple = data_mod.DEFAULT_MEAN
    norm_std: tuple = data_mod.DEFAULT_STD

    def __post_init__(self):
        for name in ("lr0", "momentum", "weight_decay", "lr_decay_gamma",
                     "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.loss_kind not in ("focal_sl", "bce"):
            raise ValidationError(f"loss_kind must be focal_sl or bce, got {self.loss_kind!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["norm_mean"] = list(self.norm_mean)
        d["norm_std"] = list(self.norm_std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("norm_mean", "norm_std"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda1_initial=self.lambda1_initial,
            lambda1_after=self.lambda1_after,
            lambda1_step_epoch=self.lambda1_step_epoch,
            gamma=self.gamma,
        )


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Exponential schedule: lr0 * gamma^epoch."""
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay_gamma ** epoch


def make_model(cfg: TrainConfig) -> DualStreamModel:
    return build_model(
        seed=cfg.seed,
        backbone_spec=BackboneSpec.named(cfg.backbone),
        use_mfd=cfg.use_mfd,
        use_ham=cfg.use_ham,
        input_size=cfg.input_size,
        score_source=cfg.score_source,
    )


class FrameLoader:
    """Loads, augments and normalizes frames; optional in-memory cache of
    the decoded images (pre-augmentation)."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self._cache = {} if cfg.cache_images else None
        self.errors = []

    def load(self, record, augment_seed=None):
        if self._cache is not None and record.frame_path in self._cache:
            img = self._cache[record.frame_path].astype(np.float32) / 255.0
        else:
            img = load_and_crop(record, self.cfg.input_size)
            if self._cache is not None:
                self._cache[record.frame_path] = (img * 255.0 + 0.5).astype(np.uint8)
        if augment_seed is not None:
            img = augment(img, augment_seed, AugmentConfig())
        img = normalize(img, self.cfg.norm_mean, self.cfg.norm_std)
        return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))

    def load_batch(self, records, epoch=None):
        """Returns (images, labels, kept_records); failed loads go to
        self.errors instead of raising."""
        images, labels, kept = [], [], []
        for idx, record in records:
            seed = None
            if epoch is not None and self.cfg.augment:
                seed = int(np.random.SeedSequence(
                    [self.cfg.seed, epoch, idx]).generate_state(1)[0])
            try:
                images.append(self.load(record, seed))
            except ValidationError as exc:
                self.errors.append({"frame_path": record.frame_path, "error": str(exc)})
                continue
            labels.append(record.y)
            kept.append(record)
        if not images:
            return None, None, []
        return torch.stack(images), torch.tensor(labels, dtype=torch.float64), kept


def _batch_losses(model, images, labels, cfg: TrainConfig, epoch: int):
    pixel_logits, binary_logit, _ = model(images)
    pixel_probs = torch.sigmoid(pixel_logits)
    binary_probs = torch.sigmoid(binary_logit)
    target_map = labels.to(pixel_probs.dtype).view(-1, 1, 1, 1).expand_as(pixel_probs)
    if cfg.loss_kind == "bce":
        pixel = bce_loss(pixel_probs, target_map)
        binary = bce_loss(binary_probs, labels)
        total = 0.5 * pixel + 0.5 * binary
    else:
        pixel = smooth_l1(pixel_probs, target_map)
        binary = focal_loss(binary_probs, labels, cfg.gamma)
        total = overall_loss(pixel, binary, epoch, cfg.loss_weights())
    return total, float(pixel.detach()), float(binary.detach())


def _epoch_batches(records, batch_size, rng=None):
    indexed = list(enumerate(records))
    if rng is not None:
        rng.shuffle(indexed)
    for i in range(0, len(indexed), batch_size):
        yield indexed[i:i + batch_size]


def evaluate_loss(model, records, loader, cfg: TrainConfig, epoch: int) -> float:
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for batch in _epoch_batches(records, cfg.batch_size):
            images, labels, kept = loader.load_batch(batch)
            if images is None:
                continue
            loss, _, _ = _batch_losses(model, images, labels, cfg, epoch)
            total += float(loss.detach()) * len(kept)
            n += len(kept)
    if n == 0:
        raise ValidationError("no loadable records in evaluation split")
    return total / n


def score_videos(model, records, cfg: TrainConfig | None = None, loader=None) -> list:
    """Per-video scores: mean-rule fusion of per-frame scores."""
    cfg = cfg or TrainConfig()
    loader = loader or FrameLoader(cfg)
    model.eval()
    by_video = {}
    with torch.no_grad():
        for batch in _epoch_batches(records, cfg.batch_size):
            images, _, kept = loader.load_batch(batch)
            if images is None:
                continue
            pixel_logits, binary_logit, _ = model(images)
            binary_probs = torch.sigmoid(binary_logit)
            pixel_means = torch.sigmoid(pixel_logits).mean(dim=(-3, -2, -1))
            for record, bp, pm in zip(kept, binary_probs, pixel_means):
                if model.score_source == "binary":
                    s = float(bp)
                elif model.score_source == "pixel":
                    s = float(pm)
                else:
                    s = 0.5 * (float(bp) + float(pm))
                by_video.setdefault(record.video_id, (record, []))[1].append(s)
    return [
        ScoreRecord(video_id=vid, score=sum(scores) / len(scores),
                    label=rec.label, pai=rec.pai, dataset_id=rec.dataset_id)
        for vid, (rec, scores) in sorted(by_video.items())
    ]


def export_embeddings(model, records, cfg: TrainConfig, path: str) -> None:
    """CSV: video_id, frame_id, label, pai, then embedding components."""
    loader = FrameLoader(cfg)
    model.eval()
    with open(path, "w") as fh:
        header = ["video_id", "frame_id", "label", "pai"]
        header += [f"e{i}" for i in range(model.embedding_dim)]
        fh.write(",".join(header) + "\n")
        with torch.no_grad():
            for batch in _epoch_batches(records, cfg.batch_size):
                images, _, kept = loader.load_batch(batch)
                if images is None:
                    continue
                _, _, embeddings = model(images)
                for record, emb in zip(kept, embeddings):
                    row = [record.video_id, os.path.basename(record.frame_path),
                           record.label, record.pai]
                    row += [f"{v:.8g}" for v in emb.tolist()]
                    fh.write(",".join(row) + "\n")


def save_checkpoint(model, cfg: TrainConfig, metadata: dict, path: str) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "model_state": model.state_dict(),
        "backbone_spec": dataclasses.asdict(model.spec),
        "train_config": cfg.to_dict(),
        "metadata": metadata,
    }, path)


def load_checkpoint(path: str):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    cfg = TrainConfig.from_dict(ckpt["train_config"])
    model = make_model(cfg)
    model.load_state_dict(ckpt["model_state"])
    model.eval()
    return model, cfg, ckpt


def train(cfg: TrainConfig, manifest: SampleManifest, out_dir: str):
    """Run the training recipe; returns (checkpoint_path, log_path).

    Writes a frozen resolved config, an append-only JSON-lines log, the
    best-dev checkpoint, and a run report with any record-level errors.
    """
    if not manifest.split("train") or not manifest.split("dev"):
        raise ValidationError("manifest needs non-empty train and dev splits")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    torch.manual_seed(cfg.seed)
    balanced = balance_classes(manifest)
    train_records = balanced.split("train")
    dev_records = manifest.split("dev")

    model = make_model(cfg)
    loader = FrameLoader(cfg)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr0,
                                momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    log_path = os.path.join(out_dir, "train_log.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    best = None
    since_improve = 0
    log_fh = open(log_path, "w")
    try:
        for epoch in range(cfg.max_epochs):
            lr = lr_at(epoch, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000 + epoch]))
            total, n = 0.0, 0
            for batch in _epoch_batches(train_records, cfg.batch_size, rng):
                images, labels, kept = loader.load_batch(batch, epoch=epoch)
                if images is None:
                    continue
                optimizer.zero_grad()
                loss, _, _ = _batch_losses(model, images, labels, cfg, epoch)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                optimizer.step()
                total += float(loss.detach()) * len(kept)
                n += len(kept)
            train_loss = total / max(n, 1)

            dev_loss = evaluate_loss(model, dev_records, loader, cfg, epoch)
            dev_scores = score_videos(model, dev_records, cfg, loader)
            try:
                dev_auc = auc(dev_scores)
            except ValidationError:
                dev_auc = float("nan")
            if cfg.monitor == "dev_acer":
                t = eer_threshold(dev_scores)
                monitored = compute_report(dev_scores, t).acer
            else:
                monitored = dev_loss

            entry = {"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss,
                     "dev_auc": dev_auc, "lr": lr,
                     "lambda1": cfg.loss_weights().lambda1(epoch)}
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

            if best is None or monitored < best["monitored"]:
                best = {"monitored": monitored, "epoch": epoch,
                        "dev_loss": dev_loss, "dev_auc": dev_auc}
                save_checkpoint(model, cfg, dict(best), ckpt_path)
                since_improve = 0
            else:
                since_improve += 1
                if since_improve >= cfg.patience:
                    break
    finally:
        log_fh.close()
        with open(os.path.join(out_dir, "run_report.json"), "w") as fh:
            json.dump({"record_errors": loader.errors, "best": best}, fh, indent=2)
    return ckpt_path, log_path


def run_ablation(manifest: SampleManifest, base_cfg: TrainConfig, out_dir: str,
                 presets=None, seeds=None) -> dict:
    """Train and evaluate each ablation preset under identical seeds and
    data; returns a table keyed by preset with per-seed test AUC/HTER."""
    presets = presets or list(ABLATION_PRESETS)
    seeds = seeds or [base_cfg.seed]
    unknown = set(presets) - set(ABLATION_PRESETS)
    if unknown:
        raise ValidationError(f"unknown ablation presets: {sorted(unknown)}")
    test_records = manifest.split("test")
    if not test_records:
        raise ValidationError("ablation needs a test split")
    table = {}
    for preset in presets:
        flags = ABLATION_PRESETS[preset]
        table[preset] = []
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, seed=seed, **flags)
            run_dir = os.path.join(out_dir, f"{preset}_seed{seed}")
            ckpt_path, _ = train(cfg, manifest, run_dir)
            model, cfg_loaded, _ = load_checkpoint(ckpt_path)
            scores = score_videos(model, test_records, cfg_loaded)
            threshold = eer_threshold(scores)
            report = compute_report(scores, threshold, name=f"{preset}_seed{seed}")
            table[preset].append({"seed": seed, "auc": report.auc,
                                  "hter": report.hter, "acer": report.acer})
    return table
