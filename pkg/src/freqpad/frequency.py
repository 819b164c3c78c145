"""Multi-level frequency decomposition: orthonormal 2-D DCT, fixed binary
band filters, and learnable additive filters applied in the DCT domain.

Each input channel is decomposed into N=4 components
``C_i = idct2(dct2(x) * (base_i + sigma(learn_i)))`` where ``base_i`` is a
binary band mask and ``sigma`` squashes the learnable mask into (-1, 1).
Components are stacked band-major, so an RGB image yields 12 channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import torch
from torch import nn

from .errors import ValidationError

N_BANDS = 4

BAND_LOW = "low"
BAND_MID = "mid"
BAND_HIGH = "high"
BAND_RESIDUAL = "residual"
BAND_NAMES = (BAND_LOW, BAND_MID, BAND_HIGH, BAND_RESIDUAL)

# Band boundaries as fractions of the anti-diagonal depth. The fourth
# (full-spectrum) mask is all ones and covers the 7/8..1 residual too.
_LOW_EDGE = 1.0 / 16.0
_MID_EDGE = 1.0 / 8.0
_HIGH_EDGE = 7.0 / 8.0


def _check_grid(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"{name} must be a 2-D grid, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def dct2(image_channel: np.ndarray) -> np.ndarray:
    """Orthonormal type-II 2-D DCT of a single channel."""
    x = _check_grid(image_channel)
    return scipy.fft.dctn(x, type=2, norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal type-III 2-D DCT)."""
    y = _check_grid(coeffs, "coeffs")
    return scipy.fft.idctn(y, type=2, norm="ortho")


def band_of(u: int, v: int, h: int, w: int) -> str:
    """Band id for DCT coefficient (u, v) on an h-by-w plane.

    Uses the normalized anti-diagonal depth d = (u+v)/(h+w-2); the band
    edges sit at 1/16, 1/8 and 7/8 of the full depth.
    """
    if not (0 <= u < h and 0 <= v < w):
        raise ValidationError(f"index ({u}, {v}) outside {h}x{w} plane")
    denom = h + w - 2
    d = 0.0 if denom == 0 else (u + v) / denom
    if d < _LOW_EDGE:
        return BAND_LOW
    if d < _MID_EDGE:
        return BAND_MID
    if d < _HIGH_EDGE:
        return BAND_HIGH
    return BAND_RESIDUAL


def sigma_norm(f):
    """Squash to (-1, 1): (1 - e^-f) / (1 + e^-f), i.e. tanh(f/2)."""
    if isinstance(f, torch.Tensor):
        return torch.tanh(f / 2.0)
    return np.tanh(np.asarray(f, dtype=np.float64) / 2.0)


def build_base_masks(h: int, w: int) -> np.ndarray:
    """The four binary base masks, shape (4, h, w).

    Masks 0-2 select the low / mid / high bands and are pairwise disjoint;
    mask 3 is all ones (full spectrum).
    """
    if h < 2 or w < 2:
        raise ValidationError("DCT plane must be at least 2x2")
    uu, vv = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = (uu + vv) / (h + w - 2)
    masks = np.zeros((N_BANDS, h, w))
    masks[0] = d < _LOW_EDGE
    masks[1] = (d >= _LOW_EDGE) & (d < _MID_EDGE)
    masks[2] = (d >= _MID_EDGE) & (d < _HIGH_EDGE)
    masks[3] = 1.0
    return masks


def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix M so that M @ x transforms columns."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


class FilterBank(nn.Module):
    """Fixed base masks plus learnable additive masks over the DCT plane.

    The learnable masks are the only trainable parameters; base masks and
    the DCT matrices are registered buffers.
    """

    def __init__(self, height: int, width: int):
        super().__init__()
        self.n_bands = N_BANDS
        self.height = height
        self.width = width
        base = torch.from_numpy(build_base_masks(height, width))
        self.register_buffer("base_masks", base)
        self.learnable_masks = nn.Parameter(
            torch.zeros(N_BANDS, height, width, dtype=torch.float64)
        )
        self.register_buffer("dct_h", torch.from_numpy(_dct_matrix(height)))
        self.register_buffer("dct_w", torch.from_numpy(_dct_matrix(width)))

    def combined_masks(self) -> torch.Tensor:
        """base + sigma(learnable); values lie in (base-1, base+1)."""
        return self.base_masks + sigma_norm(self.learnable_masks)

    def decompose(self, image: torch.Tensor) -> torch.Tensor:
        """Decompose (..., C, H, W) into (..., N*C, H, W), band-major.

        Differentiable w.r.t. both the image and the learnable masks.
        """
        if image.shape[-2] != self.height or image.shape[-1] != self.width:
            raise ValidationError(
                f"image spatial size {tuple(image.shape[-2:])} does not match "
                f"filter bank ({self.height}, {self.width})"
            )
        if not torch.isfinite(self.learnable_masks).all():
            raise ValidationError("learnable masks contain non-finite values")
        squeeze = image.dim() == 3
        x = image.unsqueeze(0) if squeeze else image
        b, c, h, w = x.shape
        dct_h = self.dct_h.to(x.dtype)
        dct_w = self.dct_w.to(x.dtype)
        coeffs = dct_h @ x @ dct_w.T                      # (B, C, H, W)
        filt = self.combined_masks().to(x.dtype)          # (N, H, W)
        # band-major: output channel index = band * C + input channel
        masked = coeffs.unsqueeze(1) * filt[None, :, None, :, :]
        comps = dct_h.T @ masked @ dct_w                  # (B, N, C, H, W)
        comps = comps.reshape(b, self.n_bands * c, h, w)
        return comps.squeeze(0) if squeeze else comps


@dataclass
class DecomposedStack:
    """Per-image frequency components, H x W x (N*C), band-major."""

    components: np.ndarray
    source_shape: tuple

    @property
    def n_components(self) -> int:
        return self.components.shape[2]


def init_filter_bank(h: int, w: int, seed: int = 0) -> FilterBank:
    """Fresh bank: base masks from the band geometry, learnable masks zero.

    The seed is accepted for interface uniformity; initialization is
    deterministic regardless.
    """
    del seed
    return FilterBank(h, w)


def decompose(image: np.ndarray, bank: FilterBank) -> DecomposedStack:
    """Decompose an H x W x C image array into its frequency components."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValidationError(f"expected H x W x C image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains non-finite values")
    x = torch.from_numpy(image.transpose(2, 0, 1))
    with torch.no_grad():
        comps = bank.decompose(x)
    return DecomposedStack(
        components=comps.numpy().transpose(1, 2, 0),
        source_shape=image.shape,
    )
