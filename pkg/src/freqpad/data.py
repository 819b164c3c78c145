"""Manifest-driven frame ingestion, augmentation, class balancing, and a
seed-deterministic synthetic corpus generator.

A manifest is a CSV (one row per frame) whose first line is a schema
marker. The synthetic generator builds face-like textures whose classes
differ by controllable frequency signatures: "print" attacks have their
high-band energy strongly attenuated, "replay" attacks additionally carry
a periodic high-band grating on top of an attenuated texture, so a plain
high-band energy ratio already separates bona fide from attack.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image

from .errors import ValidationError
from .frequency import build_base_masks

SCHEMA_MARKER = "#freqpad-manifest-v1"
MANIFEST_FIELDS = [
    "dataset_id", "video_id", "frame_path", "label", "pai", "split",
    "crop_x", "crop_y", "crop_w", "crop_h",
]

LABEL_BONA_FIDE = "bona_fide"
LABEL_ATTACK = "attack"
SPLITS = ("train", "dev", "test")

# the common large-scale image statistics
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)

TARGET_SIZE = 224


@dataclass
class SampleRecord:
    frame_path: str
    video_id: str
    label: str
    pai: str
    split: str
    dataset_id: str = "default"
    crop_box: tuple | None = None  # (x, y, w, h) pixels

    def __post_init__(self):
        if self.label not in (LABEL_BONA_FIDE, LABEL_ATTACK):
            raise ValidationError(f"bad label {self.label!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"bad split {self.split!r}")
        if (self.label == LABEL_BONA_FIDE) != (self.pai == "none"):
            raise ValidationError(
                f"label/pai mismatch: {self.label!r} with pai {self.pai!r}"
            )

    @property
    def is_bona_fide(self) -> bool:
        return self.label == LABEL_BONA_FIDE

    @property
    def y(self) -> int:
        # bona fide = 1, attack = 0
        return 1 if self.is_bona_fide else 0


@dataclass
class SampleManifest:
    records: list
    schema_version: int = 1

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValidationError(f"bad split {name!r}")
        return [r for r in self.records if r.split == name]

    def validate(self) -> None:
        per_video = {}
        for r in self.records:
            key = r.video_id
            meta = (r.label, r.pai, r.split, r.dataset_id)
            if per_video.setdefault(key, meta) != meta:
                raise ValidationError(
                    f"video {key!r} has inconsistent label/pai/split/dataset"
                )


def write_manifest(manifest: SampleManifest, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_MARKER + "\n")
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for r in manifest.records:
            row = {
                "dataset_id": r.dataset_id,
                "video_id": r.video_id,
                "frame_path": r.frame_path,
                "label": r.label,
                "pai": r.pai,
                "split": r.split,
                "crop_x": "", "crop_y": "", "crop_w": "", "crop_h": "",
            }
            if r.crop_box is not None:
                row["crop_x"], row["crop_y"], row["crop_w"], row["crop_h"] = r.crop_box
            writer.writerow(row)


def read_manifest(path: str) -> SampleManifest:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != SCHEMA_MARKER:
            raise ValidationError(
                f"{path}: missing schema marker (expected {SCHEMA_MARKER!r})"
            )
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise ValidationError(f"{path}: unexpected manifest columns {reader.fieldnames}")
        records = []
        for row in reader:
            crop = None
            if row["crop_x"] != "":
                crop = tuple(int(row[k]) for k in ("crop_x", "crop_y", "crop_w", "crop_h"))
            records.append(SampleRecord(
                frame_path=row["frame_path"],
                video_id=row["video_id"],
                label=row["label"],
                pai=row["pai"],
                split=row["split"],
                dataset_id=row["dataset_id"],
                crop_box=crop,
            ))
    manifest = SampleManifest(records)
    manifest.validate()
    return manifest


def sample_frames(total_frames: int, k: int = 10) -> list:
    """k segment-midpoint frame indices: floor((i + 0.5) * T / k)."""
    if total_frames < 1 or k < 1:
        raise ValidationError("total_frames and k must be >= 1")
    return [int((i + 0.5) * total_frames / k) for i in range(k)]


def load_and_crop(record: SampleRecord, target_size: int = TARGET_SIZE) -> np.ndarray:
    """Load, optionally crop, and resize to target_size; RGB floats in [0,1]."""
    try:
        img = Image.open(record.frame_path).convert("RGB")
    except OSError as exc:
        raise ValidationError(f"cannot read {record.frame_path}: {exc}") from exc
    if record.crop_box is not None:
        x, y, w, h = record.crop_box
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
            raise ValidationError(
                f"crop box {record.crop_box} outside {img.width}x{img.height} image"
            )
        img = img.crop((x, y, x + w, y + h))
    img = img.resize((target_size, target_size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def normalize(image: np.ndarray, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> np.ndarray:
    return (image - np.asarray(mean, dtype=image.dtype)) / np.asarray(std, dtype=image.dtype)


@dataclass
class AugmentConfig:
    prob: float = 0.5
    max_rotation_deg: float = 15.0
    cutout_min: int = 32
    cutout_max: int = 64
    max_channel_shift: float = 20.0 / 255.0
    max_jitter: float = 0.2


def augment(image: np.ndarray, seed: int, cfg: AugmentConfig | None = None) -> np.ndarray:
    """Training augmentation: flip, rotation, cutout, channel shift, color
    jitter, each applied with independent probability. Deterministic per seed."""
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    out = image.astype(np.float32, copy=True)
    h, w = out.shape[:2]
    if rng.random() < cfg.prob:
        out = out[:, ::-1, :].copy()
    if rng.random() < cfg.prob:
        angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
        out = scipy.ndimage.rotate(out, angle, axes=(0, 1), reshape=False,
                                   order=1, mode="reflect")
    if rng.random() < cfg.prob:
        side = int(rng.integers(cfg.cutout_min, cfg.cutout_max + 1))
        side = min(side, h, w)
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        out[top:top + side, left:left + side, :] = 0.0
    if rng.random() < cfg.prob:
        shift = rng.uniform(-cfg.max_channel_shift, cfg.max_channel_shift, size=3)
        out = out + shift.astype(np.float32)
    if rng.random() < cfg.prob:
        brightness = 1.0 + rng.uniform(-cfg.max_jitter, cfg.max_jitter)
        contrast = 1.0 + rng.uniform(-cfg.max_jitter, cfg.max_jitter)
        saturation = 1.0 + rng.uniform(-cfg.max_jitter, cfg.max_jitter)
        out = out * brightness
        mean = out.mean()
        out = (out - mean) * contrast + mean
        gray = out.mean(axis=2, keepdims=True)
        out = (out - gray) * saturation + gray
    return np.clip(out, 0.0, 1.0)


def balance_classes(manifest: SampleManifest) -> SampleManifest:
    """Duplicate minority-class train frames round-robin until the
    bona fide : attack ratio is within [0.9, 1.1]. Dev/test untouched."""
    train = manifest.split("train")
    bona = [r for r in train if r.is_bona_fide]
    attack = [r for r in train if not r.is_bona_fide]
    if not bona or not attack:
        raise ValidationError("train split must contain both classes")
    minority, majority = (bona, attack) if len(bona) < len(attack) else (attack, bona)
    extra = [replace(minority[i % len(minority)])
             for i in range(len(majority) - len(minority))]
    return SampleManifest(manifest.records + extra, manifest.schema_version)


@dataclass
class SyntheticSpec:
    n_videos_per_class: int = 20
    frames_per_video: int = 10
    image_size: int = TARGET_SIZE
    attack_modes: tuple = ("lowpass_print", "moire_replay")
    seed: int = 0
    dataset_id: str = "synthetic"
    split_fractions: tuple = (0.6, 0.2, 0.2)  # train / dev / test


# spectral shaping of the attack textures, relative to the bona fide source
_PRINT_HIGH_GAIN = 0.2    # high-band amplitude x0.2 -> 4% energy, well under 30%
_REPLAY_HIGH_GAIN = 0.45
_REPLAY_GRATING_AMP = 0.035


def _smooth_base(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency face-like base: random low-band spectrum + ellipse."""
    coeffs = np.zeros((size, size))
    k = max(size // 16, 2)
    coeffs[:k, :k] = rng.normal(0, 1.0, (k, k)) / (1 + np.add.outer(np.arange(k), np.arange(k)))
    base = scipy.fft.idctn(coeffs, type=2, norm="ortho")
    base = 0.5 + 0.2 * base / (np.abs(base).max() + 1e-9)
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = size / 2 + rng.uniform(-8, 8), size / 2 + rng.uniform(-8, 8)
    ellipse = ((yy - cy) / (0.42 * size)) ** 2 + ((xx - cx) / (0.32 * size)) ** 2
    base = base + 0.18 * np.exp(-ellipse * 2.0)
    return base


def _high_texture(rng: np.random.Generator, size: int, high_mask: np.ndarray) -> np.ndarray:
    """Broadband texture supported on the high DCT band."""
    coeffs = rng.normal(0, 1.0, (size, size)) * high_mask
    tex = scipy.fft.idctn(coeffs, type=2, norm="ortho")
    return 0.08 * tex / (tex.std() + 1e-9)


def _grating(rng: np.random.Generator, size: int) -> np.ndarray:
    """Periodic high-frequency grating (screen-like moire pattern)."""
    yy, xx = np.mgrid[0:size, 0:size]
    freq = rng.uniform(0.25, 0.45)  # cycles per pixel, high band
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    carrier = np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    return _REPLAY_GRATING_AMP * carrier


def _shape_texture(texture: np.ndarray, high_mask: np.ndarray, gain: float) -> np.ndarray:
    coeffs = scipy.fft.dctn(texture, type=2, norm="ortho")
    coeffs = coeffs * np.where(high_mask > 0, gain, 1.0)
    return scipy.fft.idctn(coeffs, type=2, norm="ortho")


def high_band_energy_ratio(image: np.ndarray) -> float:
    """Fraction of DCT energy in the high band (d in [1/8, 7/8)), averaged
    over channels; the no-learning discriminator the generator is built for."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    high = build_base_masks(h, w)[2]
    num = den = 0.0
    for c in range(img.shape[2]):
        coeffs = scipy.fft.dctn(img[:, :, c] - img[:, :, c].mean(), type=2, norm="ortho")
        e = coeffs ** 2
        num += float((e * high).sum())
        den += float(e.sum())
    return num / (den + 1e-12)


def _render_frame(rng: np.random.Generator, size: int, mode: str,
                  high_mask: np.ndarray) -> np.ndarray:
    base = _smooth_base(rng, size)
    texture = _high_texture(rng, size, high_mask)
    if mode == "bona_fide":
        gray = base + texture
    elif mode == "lowpass_print":
        gray = base + _shape_texture(texture, high_mask, _PRINT_HIGH_GAIN)
    elif mode == "moire_replay":
        gray = base + _shape_texture(texture, high_mask, _REPLAY_HIGH_GAIN) + _grating(rng, size)
    else:
        raise ValidationError(f"unknown attack mode {mode!r}")
    gray = np.clip(gray, 0.0, 1.0)
    tint = 1.0 + 0.05 * rng.uniform(-1, 1, size=3)
    img = np.clip(gray[:, :, None] * tint[None, None, :], 0.0, 1.0)
    return (img * 255.0 + 0.5).astype(np.uint8)


def _assign_split(index: int, total: int, fractions) -> str:
    n_train = int(round(fractions[0] * total))
    n_dev = int(round(fractions[1] * total))
    if index < n_train:
        return "train"
    if index < n_train + n_dev:
        return "dev"
    return "test"


def generate_synthetic(spec: SyntheticSpec, out_dir: str) -> SampleManifest:
    """Write PNG frames plus a manifest; fully determined by spec.seed."""
    frames_dir = os.path.join(out_dir, "frames")
    try:
        os.makedirs(frames_dir, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create {frames_dir}: {exc}") from exc
    high_mask = build_base_masks(spec.image_size, spec.image_size)[2]
    modes = ["bona_fide"] + list(spec.attack_modes)
    records = []
    for mode_idx, mode in enumerate(modes):
        n_videos = spec.n_videos_per_class if mode == "bona_fide" else max(
            spec.n_videos_per_class // len(spec.attack_modes), 1)
        for vid in range(n_videos):
            video_id = f"{spec.dataset_id}_{mode}_{vid:04d}"
            split = _assign_split(vid, n_videos, spec.split_fractions)
            label = LABEL_BONA_FIDE if mode == "bona_fide" else LABEL_ATTACK
            pai = "none" if mode == "bona_fide" else mode
            for f in range(spec.frames_per_video):
                rng = np.random.default_rng(
                    np.random.SeedSequence([spec.seed, mode_idx, vid, f]))
                img = _render_frame(rng, spec.image_size, mode, high_mask)
                name = f"{video_id}_f{f:03d}.png"
                path = os.path.join(frames_dir, name)
                Image.fromarray(img).save(path)
                records.append(SampleRecord(
                    frame_path=path, video_id=video_id, label=label, pai=pai,
                    split=split, dataset_id=spec.dataset_id))
    manifest = SampleManifest(records)
    manifest.validate()
    return manifest


def manifest_to_csv_bytes(manifest: SampleManifest) -> bytes:
    """Manifest serialized exactly as write_manifest would emit it."""
    buf = io.StringIO()
    buf.write(SCHEMA_MARKER + "\n")
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS)
    writer.writeheader()
    for r in manifest.records:
        row = {k: "" for k in MANIFEST_FIELDS}
        row.update(dataset_id=r.dataset_id, video_id=r.video_id,
                   frame_path=r.frame_path, label=r.label, pai=r.pai, split=r.split)
        if r.crop_box is not None:
            row["crop_x"], row["crop_y"], row["crop_w"], row["crop_h"] = r.crop_box
        writer.writerow(row)
    return buf.getvalue().encode()
