"""Dual-stream PAD model: an RGB stream and a frequency-decomposition
stream over the same backbone architecture, attention taps at three
stages, a 14x14 pixel-wise head, and a fully connected binary head.

Stage taps S1..S4 sit at input/4, /8, /16, /32 spatial resolution. Stream
fusion at the taps is elementwise addition; attention taps are read-only
side branches feeding the pixel head, the trunks are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .attention import ChannelAttention, SpatialAttention
from .errors import ValidationError
from .frequency import N_BANDS, FilterBank

RGB_CHANNELS = 3
MFD_CHANNELS = N_BANDS * RGB_CHANNELS
DEFAULT_INPUT_SIZE = 224

TINY_CHANNELS = [16, 32, 64, 128]
RESNET50_CHANNELS = [64, 512, 1024, 2048]


@dataclass
class BackboneSpec:
    name: str = "tiny"
    stage_channels: list = field(default_factory=lambda: list(TINY_CHANNELS))
    stage_spatial: list = field(default_factory=lambda: [56, 28, 14, 7])
    pretrained_weights_path: str | None = None

    @classmethod
    def tiny(cls) -> "BackboneSpec":
        return cls()

    @classmethod
    def resnet50(cls, pretrained_weights_path: str | None = None) -> "BackboneSpec":
        return cls(
            name="resnet50",
            stage_channels=list(RESNET50_CHANNELS),
            stage_spatial=[56, 28, 14, 7],
            pretrained_weights_path=pretrained_weights_path,
        )

    @classmethod
    def named(cls, name: str) -> "BackboneSpec":
        if name == "tiny":
            return cls.tiny()
        if name == "resnet50":
            return cls.resnet50()
        raise ValidationError(f"unknown backbone {name!r}")


def _conv_block(c_in: int, c_out: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Small four-stage CNN honoring the S1..S4 spatial contract."""

    def __init__(self, in_channels: int, stage_channels=None):
        super().__init__()
        ch = list(stage_channels or TINY_CHANNELS)
        self.stage_channels = ch
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, ch[0], 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(ch[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.stage2 = _conv_block(ch[0], ch[1], stride=2)
        self.stage3 = _conv_block(ch[1], ch[2], stride=2)
        self.stage4 = _conv_block(ch[2], ch[3], stride=2)

    def forward(self, x):
        s1 = self.stem(x)
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        s4 = self.stage4(s3)
        return s1, s2, s3, s4


class ResNet50Backbone(nn.Module):
    """torchvision ResNet-50 trunk with the four stage taps exposed."""

    def __init__(self, in_channels: int, weights_path: str | None = None):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, stride=2, padding=3, bias=False)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4
        self.stage_channels = list(RESNET50_CHANNELS)

    def forward(self, x):
        s1 = self.stem(x)
        s2 = self.layer2(self.layer1(s1))
        s3 = self.layer3(s2)
        s4 = self.layer4(s3)
        return s1, s2, s3, s4


def _make_backbone(spec: BackboneSpec, in_channels: int) -> nn.Module:
    if spec.name == "tiny":
        return TinyBackbone(in_channels, spec.stage_channels)
    if spec.name == "resnet50":
        return ResNet50Backbone(in_channels, spec.pretrained_weights_path)
    raise ValidationError(f"unknown backbone {spec.name!r}")


def fuse_stage(rgb_feat: torch.Tensor, mfd_feat: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of same-shaped stage features from the two streams."""
    if rgb_feat.shape != mfd_feat.shape:
        raise ValidationError(
            f"stage shapes differ: {tuple(rgb_feat.shape)} vs {tuple(mfd_feat.shape)}"
        )
    return rgb_feat + mfd_feat


@dataclass
class Prediction:
    pixel_map: torch.Tensor
    binary_prob: float
    embedding: torch.Tensor
    frame_id: str = ""


class PixelHead(nn.Module):
    """Two stacked convolutions producing a one-channel logit map."""

    def __init__(self, in_channels: int):
        super().__init__()
        mid = max(in_channels // 4, 4)
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, mid, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class DualStreamModel(nn.Module):
    """Dual-stream model; `use_mfd` / `use_ham` flags drive the ablations.

    `score_source` picks the per-frame score used for video fusion:
    "binary" (default), "pixel" (mean of the pixel map) or "both".
    """

    def __init__(
        self,
        backbone_spec: BackboneSpec | None = None,
        use_mfd: bool = True,
        use_ham: bool = True,
        input_size: int = DEFAULT_INPUT_SIZE,
        channel_att_reduction: int = 16,
        score_source: str = "binary",
    ):
        super().__init__()
        if use_ham and not use_mfd:
            raise ValidationError("use_ham requires use_mfd (attention taps fuse both streams)")
        if score_source not in ("binary", "pixel", "both"):
            raise ValidationError(f"unknown score_source {score_source!r}")
        spec = backbone_spec or BackboneSpec.tiny()
        self.spec = spec
        self.use_mfd = use_mfd
        self.use_ham = use_ham
        self.input_size = input_size
        self.map_size = input_size // 16
        self.score_source = score_source

        self.rgb_stream = _make_backbone(spec, RGB_CHANNELS)
        ch = spec.stage_channels
        if use_mfd:
            self.filter_bank = FilterBank(input_size, input_size)
            self.mfd_stream = _make_backbone(spec, MFD_CHANNELS)
        if use_ham:
            self.spatial_att_1 = SpatialAttention(kernel_size=7)
            self.spatial_att_2 = SpatialAttention(kernel_size=5)
            self.channel_att_3 = ChannelAttention(ch[2], channel_att_reduction)
            pixel_in = ch[0] + ch[1] + ch[2]
        else:
            pixel_in = ch[2] * (2 if use_mfd else 1)
        self.pixel_head = PixelHead(pixel_in)
        self.binary_head = nn.Linear(ch[3] * (2 if use_mfd else 1), 1)

    @property
    def embedding_dim(self) -> int:
        return self.binary_head.in_features

    def _check_input(self, rgb: torch.Tensor):
        if rgb.shape[-2:] != (self.input_size, self.input_size):
            raise ValidationError(
                f"expected {self.input_size}x{self.input_size} input, "
                f"got {tuple(rgb.shape[-2:])}"
            )
        if rgb.shape[-3] != RGB_CHANNELS:
            raise ValidationError(f"expected {RGB_CHANNELS}-channel input")

    def forward(self, rgb: torch.Tensor, mfd: torch.Tensor | None = None):
        """Returns (pixel_logits, binary_logit, embedding) with batch dim.

        `mfd` may carry a precomputed decomposition; by default it is
        produced in-graph so gradients reach the learnable masks.
        """
        self._check_input(rgb)
        squeeze = rgb.dim() == 3
        if squeeze:
            rgb = rgb.unsqueeze(0)
            if mfd is not None:
                mfd = mfd.unsqueeze(0)

        r1, r2, r3, r4 = self.rgb_stream(rgb)
        if self.use_mfd:
            if mfd is None:
                mfd = self.filter_bank.decompose(rgb)
            m1, m2, m3, m4 = self.mfd_stream(mfd)

        if self.use_ham:
            taps = [
                self.spatial_att_1(fuse_stage(r1, m1)),
                self.spatial_att_2(fuse_stage(r2, m2)),
                self.channel_att_3(fuse_stage(r3, m3)),
            ]
        elif self.use_mfd:
            taps = [r3, m3]
        else:
            taps = [r3]
        size = (self.map_size, self.map_size)
        taps = [
            t if t.shape[-2:] == size else F.interpolate(
                t, size=size, mode="bilinear", align_corners=False)
            for t in taps
        ]
        pixel_logits = self.pixel_head(torch.cat(taps, dim=1))

        pooled = [r4.mean(dim=(-2, -1))]
        if self.use_mfd:
            pooled.append(m4.mean(dim=(-2, -1)))
        embedding = torch.cat(pooled, dim=1)
        binary_logit = self.binary_head(embedding).squeeze(-1)

        if squeeze:
            return pixel_logits.squeeze(0), binary_logit.squeeze(0), embedding.squeeze(0)
        return pixel_logits, binary_logit, embedding

    def attention_maps(self, rgb: torch.Tensor) -> dict:
        """Attention maps of the three taps, for debug dumps."""
        if not self.use_ham:
            raise ValidationError("model has no attention taps")
        self._check_input(rgb)
        if rgb.dim() == 3:
            rgb = rgb.unsqueeze(0)
        with torch.no_grad():
            r1, r2, r3, _ = self.rgb_stream(rgb)
            m1, m2, m3, _ = self.mfd_stream(self.filter_bank.decompose(rgb))
            return {
                "spatial_att_1": self.spatial_att_1.attention_map(fuse_stage(r1, m1)),
                "spatial_att_2": self.spatial_att_2.attention_map(fuse_stage(r2, m2)),
                "channel_att_3": self.channel_att_3.channel_scales(fuse_stage(r3, m3)),
            }

    def predict(self, rgb: torch.Tensor, frame_id: str = "") -> Prediction:
        with torch.no_grad():
            pixel_logits, binary_logit, embedding = self.forward(rgb)
        return Prediction(
            pixel_map=torch.sigmoid(pixel_logits).squeeze(-3),
            binary_prob=float(torch.sigmoid(binary_logit)),
            embedding=embedding,
            frame_id=frame_id,
        )

    def frame_score(self, pred: Prediction) -> float:
        if self.score_source == "binary":
            return pred.binary_prob
        if self.score_source == "pixel":
            return float(pred.pixel_map.mean())
        return 0.5 * (pred.binary_prob + float(pred.pixel_map.mean()))


def predict_video(frames) -> float:
    """Mean-rule fusion of per-frame scores (floats or Predictions)."""
    frames = list(frames)
    if not frames:
        raise ValidationError("predict_video needs at least one frame")
    scores = [f.binary_prob if isinstance(f, Prediction) else float(f) for f in frames]
    return sum(scores) / len(scores)


def build_model(seed: int = 0, **kwargs) -> DualStreamModel:
    """Deterministic construction: same seed and spec, same parameters."""
    torch.manual_seed(seed)
    return DualStreamModel(**kwargs)
