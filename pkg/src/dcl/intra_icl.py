"""Intra-instance contrastive learning: per-location real/fake region masks
from pixel correspondence, feature-map part segmentation, and the two
within-instance losses (fake-part separation, real-map homogeneity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

_EPS = 1e-12


@dataclass
class RegionMask:
    grid: np.ndarray  # H' x W' bool, True = fake location

    @property
    def n_fake(self) -> int:
        return int(self.grid.sum())

    @property
    def n_real(self) -> int:
        return int(self.grid.size - self.grid.sum())


@dataclass
class PartSet:
    real_parts: torch.Tensor  # (n, C)
    fake_parts: torch.Tensor  # (k, C)


def make_mask(
    fake_image: np.ndarray,
    real_image: np.ndarray,
    feat_h: int,
    feat_w: int,
    bin_threshold: float = 0.02,
) -> RegionMask:
    """Per-feature-location fake mask from the pixel difference.

    Channel-mean absolute difference, block-averaged down to feat_h x feat_w,
    thresholded. Expects pre-augmentation images (augmentation would break the
    pixel correspondence with the feature grid).
    """
    if fake_image.shape != real_image.shape:
        raise ValueError(f"shape mismatch: {fake_image.shape} vs {real_image.shape}")
    h, w = fake_image.shape[:2]
    if h % feat_h or w % feat_w:
        raise ValueError(f"image {h}x{w} not block-divisible into {feat_h}x{feat_w}")
    diff = np.abs(fake_image.astype(np.float64) - real_image.astype(np.float64)).mean(axis=-1)
    bh, bw = h // feat_h, w // feat_w
    coarse = diff.reshape(feat_h, bh, feat_w, bw).mean(axis=(1, 3))
    return RegionMask(grid=coarse > bin_threshold)


def segment_parts(feature_map: torch.Tensor, mask: RegionMask) -> PartSet:
    """Split per-location C-vectors into real/fake parts, row-major order."""
    c, h, w = feature_map.shape
    if mask.grid.shape != (h, w):
        raise ValueError(f"mask {mask.grid.shape} does not match feature map {h}x{w}")
    locs = feature_map.permute(1, 2, 0).reshape(h * w, c)
    sel = torch.from_numpy(mask.grid.reshape(-1))
    return PartSet(real_parts=locs[~sel], fake_parts=locs[sel])


def _norm_rows(x: torch.Tensor) -> torch.Tensor:
    n = x.norm(dim=-1, keepdim=True)
    # dead feature row: nudge off zero rather than poisoning the batch
    return x / torch.clamp(n, min=_EPS)


def intra_loss_fake(
    parts: PartSet, tau: float, include_self_pairs: bool = True
) -> torch.Tensor:
    """Separate fake-part features from real-part features within one map.

    Softmax mass of real-real pair similarities against real-real plus
    fake-real pairs; there is intentionally no fake-fake term.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n = parts.real_parts.shape[0]
    k = parts.fake_parts.shape[0]
    if n == 0:
        raise ValueError("mask is fully fake: no real parts to anchor the loss")
    if k == 0:
        return torch.zeros((), dtype=parts.real_parts.dtype)
    r = _norm_rows(parts.real_parts)
    f = _norm_rows(parts.fake_parts)
    rr = (r @ r.T) / tau  # (n, n)
    fr = (f @ r.T) / tau  # (k, n)
    if include_self_pairs:
        rr_terms = rr.reshape(-1)
    else:
        off = ~torch.eye(n, dtype=torch.bool)
        if n == 1:
            return torch.zeros((), dtype=parts.real_parts.dtype)
        rr_terms = rr[off]
    all_terms = torch.cat([rr_terms, fr.reshape(-1)])
    return torch.logsumexp(all_terms, dim=0) - torch.logsumexp(rr_terms, dim=0)


def intra_loss_real(feature_map: torch.Tensor, tau: float) -> torch.Tensor:
    """Drive the self-similarity (gram) of all locations toward homogeneity.

    -log sum(exp(G/tau)) over the full gram matrix of L2-normalized
    per-location vectors; minimization pushes all pairwise cosines to 1.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    c, h, w = feature_map.shape
    x = _norm_rows(feature_map.permute(1, 2, 0).reshape(h * w, c))
    gram = (x @ x.T) / tau
    return -torch.logsumexp(gram.reshape(-1), dim=0)


def intra_loss_batch(
    items: list[tuple[torch.Tensor, int, RegionMask | None]],
    tau: float,
    include_self_pairs: bool = True,
) -> torch.Tensor:
    """Class-wise means: real maps get the homogeneity loss, fake maps the
    part-separation loss. Fake samples with a degenerate all-fake mask are
    skipped rather than failing the batch."""
    real_terms: list[torch.Tensor] = []
    fake_terms: list[torch.Tensor] = []
    for fmap, label, mask in items:
        if label == 0:
            real_terms.append(intra_loss_real(fmap, tau))
        else:
            if mask is None:
                raise ValueError("fake sample requires a region mask")
            parts = segment_parts(fmap, mask)
            if parts.real_parts.shape[0] == 0:
                continue
            fake_terms.append(intra_loss_fake(parts, tau, include_self_pairs))
    zero = torch.zeros(())
    l_real = torch.stack(real_terms).mean() if real_terms else zero
    l_fake = torch.stack(fake_terms).mean() if fake_terms else zero
    return l_real + l_fake
