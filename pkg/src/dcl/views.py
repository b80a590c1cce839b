"""Stochastic view generation: patch shuffle, high-frequency (SRM) residual
enhancement, frame shift, fake-to-real mixup, plus flip and light blur.

Two views of the same sample form the positive pair for contrastive training.
All transforms preserve image shape and the [0, 1] value range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import Dataset, Sample


# The classic steganalysis high-pass subset: zero-sum residual kernels.
SRM_KERNELS: list[np.ndarray] = [
    np.array(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=np.float64,
    )
    / 12.0,
    np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]], dtype=np.float64) / 4.0,
    np.array([[1, -2, 1]], dtype=np.float64) / 2.0,
]


@dataclass
class ViewPolicy:
    patch_k: int = 3
    p_patch: float = 0.3
    srm_lambda: float = 1.0
    p_srm: float = 0.3
    p_frameshift: float = 0.5
    p_mixup: float = 0.3
    mixup_range: tuple[float, float] = (0.7, 0.95)
    p_flip: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.0, 0.0)

    def validate(self) -> None:
        for name in ("p_patch", "p_srm", "p_frameshift", "p_mixup", "p_flip"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.mixup_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"mixup_range must lie in (0, 1], got {self.mixup_range}")
        if self.patch_k < 1:
            raise ValueError("patch_k must be >= 1")
        if self.srm_lambda < 0:
            raise ValueError("srm_lambda must be >= 0")

    @classmethod
    def identity(cls) -> "ViewPolicy":
        """All stochastic transforms off; make_views returns the raw image."""
        return cls(
            p_patch=0.0, p_srm=0.0, p_frameshift=0.0, p_mixup=0.0, p_flip=0.0,
            blur_sigma_range=(0.0, 0.0),
        )


@dataclass
class ViewPair:
    view1: np.ndarray
    view2: np.ndarray
    label: int
    sample: Sample


def random_patch(image: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Split into k x k tiles and permute them uniformly at random."""
    h, w, c = image.shape
    if h % k or w % k:
        raise ValueError(f"image size {h}x{w} not divisible into {k}x{k} patches")
    if k == 1:
        return image.copy()
    th, tw = h // k, w // k
    tiles = image.reshape(k, th, k, tw, c).transpose(0, 2, 1, 3, 4).reshape(k * k, th, tw, c)
    perm = rng.permutation(k * k)
    shuffled = tiles[perm].reshape(k, k, th, tw, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(shuffled.reshape(h, w, c))


def srm_residual(image: np.ndarray) -> np.ndarray:
    """Per-channel mean response of the three high-pass kernels, reflect-padded."""
    res = np.zeros(image.shape, dtype=np.float64)
    for kern in SRM_KERNELS:
        for c in range(image.shape[2]):
            res[..., c] += ndimage.correlate(
                image[..., c].astype(np.float64), kern, mode="reflect"
            )
    return res / len(SRM_KERNELS)


def srm_enhance(image: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return image.copy()
    out = image.astype(np.float64) + lam * srm_residual(image)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def frame_shift(sample: Sample, dataset: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Image of another uniformly chosen frame of the same video."""
    frames = dataset.frames_of(sample.video_id)
    others = [s for s in frames if s.frame_idx != sample.frame_idx]
    if not others:
        return sample.image
    return others[int(rng.integers(0, len(others)))].image


def corresponding_mixup(fake: np.ndarray, real: np.ndarray, lam: float) -> np.ndarray:
    if fake.shape != real.shape:
        raise ValueError(f"shape mismatch: {fake.shape} vs {real.shape}")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"mixup lambda must be in (0, 1], got {lam}")
    return (lam * fake + (1.0 - lam) * real).astype(fake.dtype)


def _one_view(
    sample: Sample, dataset: Dataset, policy: ViewPolicy, rng: np.random.Generator
) -> np.ndarray:
    img = sample.image
    frame_idx = sample.frame_idx
    if rng.random() < policy.p_frameshift:
        frames = dataset.frames_of(sample.video_id)
        others = [s for s in frames if s.frame_idx != sample.frame_idx]
        if others:
            pick = others[int(rng.integers(0, len(others)))]
            img, frame_idx = pick.image, pick.frame_idx
    if sample.label == 1 and rng.random() < policy.p_mixup:
        lo, hi = policy.mixup_range
        lam = float(rng.uniform(lo, hi))
        real_idx = dataset.video_index[sample.corresponding_video_id][frame_idx]
        img = corresponding_mixup(img, dataset.samples[real_idx].image, lam)
    if rng.random() < policy.p_srm:
        img = srm_enhance(img, policy.srm_lambda)
    if rng.random() < policy.p_patch:
        img = random_patch(img, policy.patch_k, rng)
    if rng.random() < policy.p_flip:
        img = img[:, ::-1, :]
    lo, hi = policy.blur_sigma_range
    sigma = float(rng.uniform(lo, hi))
    if sigma > 1e-3:
        img = np.clip(
            ndimage.gaussian_filter(img.astype(np.float64), (sigma, sigma, 0)), 0.0, 1.0
        ).astype(np.float32)
    return np.ascontiguousarray(img, dtype=np.float32)


def make_views(
    sample: Sample, dataset: Dataset, policy: ViewPolicy, rng: np.random.Generator
) -> ViewPair:
    """Two independently augmented views of one sample."""
    v1 = _one_view(sample, dataset, policy, rng)
    v2 = _one_view(sample, dataset, policy, rng)
    return ViewPair(view1=v1, view2=v2, label=sample.label, sample=sample)
