"""Synthetic forgery corpus generation and on-disk dataset loading.

Corpus layout:

    <root>/real/<video_id>/<frame_idx>.png
    <root>/fake/<video_id>/<frame_idx>.png
    <root>/labels.csv   (video_id, label, manipulation, corresponding_video_id)

Fake videos reuse the source video id with a ``_f`` suffix; correspondence
between a fake frame and its real original is by matching frame index.
PNG keeps storage lossless so pixel-difference masks stay exact.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


class ManipKind(str, Enum):
    SPLICE_RECT = "SPLICE_RECT"
    SPLICE_ELLIPSE = "SPLICE_ELLIPSE"
    WARP_PATCH = "WARP_PATCH"


@dataclass
class CorpusSpec:
    n_videos: int = 8
    frames_per_video: int = 4
    image_size: int = 96
    manipulation_families: list[ManipKind] = field(
        default_factory=lambda: [ManipKind.SPLICE_RECT]
    )
    blend_softness: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_videos < 2:
            raise ValueError("n_videos must be >= 2 (a donor video is required)")
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be >= 1")
        if self.image_size % 3 != 0:
            raise ValueError("image_size must be divisible by the default patch count 3")
        if self.blend_softness < 0:
            raise ValueError("blend_softness must be >= 0")
        if not self.manipulation_families:
            raise ValueError("at least one manipulation family is required")


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    label: int  # 0 = real, 1 = fake
    video_id: str
    frame_idx: int
    corresponding_video_id: str | None = None

    @property
    def sample_id(self) -> str:
        return f"{self.video_id}/{self.frame_idx}"


class Dataset:
    """Immutable list of samples plus a video_id -> frame lookup."""

    def __init__(self, samples: list[Sample]):
        self.samples = samples
        self.video_index: dict[str, dict[int, int]] = {}
        for i, s in enumerate(samples):
            self.video_index.setdefault(s.video_id, {})[s.frame_idx] = i

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def frames_of(self, video_id: str) -> list[Sample]:
        if video_id not in self.video_index:
            raise KeyError(f"unknown video_id: {video_id}")
        by_idx = self.video_index[video_id]
        return [self.samples[by_idx[k]] for k in sorted(by_idx)]

    def corresponding_real(self, sample: Sample) -> Sample:
        """The real frame a fake sample was forged from (same frame index)."""
        if sample.label != 1 or sample.corresponding_video_id is None:
            raise ValueError(f"sample {sample.sample_id} has no real correspondence")
        idx = self.video_index[sample.corresponding_video_id][sample.frame_idx]
        return self.samples[idx]

    def split_by_video(self, holdout_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Split into (train, heldout) keeping fake videos with their source."""
        rng = np.random.default_rng(seed)
        real_ids = sorted({s.video_id for s in self.samples if s.label == 0})
        n_hold = max(1, int(round(holdout_fraction * len(real_ids))))
        held = set(rng.choice(real_ids, size=n_hold, replace=False).tolist())

        def base_id(s: Sample) -> str:
            return s.corresponding_video_id if s.label == 1 else s.video_id

        train = [s for s in self.samples if base_id(s) not in held]
        hold = [s for s in self.samples if base_id(s) in held]
        return Dataset(train), Dataset(hold)


# ---------------------------------------------------------------------------
# frame synthesis


def _smooth_noise(rng: np.random.Generator, size: int, cells: int = 6) -> np.ndarray:
    """Low-resolution noise upsampled into a smooth background, HxWx3."""
    coarse = rng.uniform(0.15, 0.85, size=(cells, cells, 3))
    return np.clip(ndimage.zoom(coarse, (size / cells, size / cells, 1), order=3), 0.0, 1.0)


def _draw_disc(img: np.ndarray, cy: float, cx: float, r: float, color: np.ndarray) -> None:
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[inside] = color


def _draw_box(img: np.ndarray, cy: float, cx: float, hh: float, hw: float, color: np.ndarray) -> None:
    h, w, _ = img.shape
    y0, y1 = int(max(0, cy - hh)), int(min(h, cy + hh))
    x0, x1 = int(max(0, cx - hw)), int(min(w, cx + hw))
    img[y0:y1, x0:x1] = color


def render_real_frame(video_rng_state: dict, frame_idx: int, size: int) -> np.ndarray:
    """One frame of a real video: fixed composition with per-frame jitter."""
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = video_rng_state
    img = _smooth_noise(rng, size)
    n_prims = int(rng.integers(2, 5))
    jitter_rng = np.random.default_rng(
        [int(rng.integers(0, 2**31)), frame_idx]
    )
    for _ in range(n_prims):
        kind = rng.integers(0, 2)
        color = rng.uniform(0.0, 1.0, size=3)
        cy = rng.uniform(0.2, 0.8) * size + jitter_rng.uniform(-2, 2)
        cx = rng.uniform(0.2, 0.8) * size + jitter_rng.uniform(-2, 2)
        r = rng.uniform(0.08, 0.2) * size
        if kind == 0:
            _draw_disc(img, cy, cx, r, color)
        else:
            _draw_box(img, cy, cx, r, r * rng.uniform(0.6, 1.6), color)
    # fine-grain sensor-like texture; forgery resampling attenuates it,
    # which is the transferable low-level cue detectors key on
    texture = jitter_rng.normal(0.0, 0.06, size=(size, size, 1))
    img = img + texture
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _region_mask(shape: tuple[int, int], kind: ManipKind, rng: np.random.Generator) -> np.ndarray:
    """Binary support region for the transplanted content."""
    h, w = shape
    cy = rng.uniform(0.3, 0.7) * h
    cx = rng.uniform(0.3, 0.7) * w
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == ManipKind.SPLICE_RECT:
        hh = rng.uniform(0.1, 0.2) * h
        hw = rng.uniform(0.1, 0.2) * w
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    ry = rng.uniform(0.1, 0.22) * h
    rx = rng.uniform(0.1, 0.22) * w
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _warp(content: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth sinusoidal coordinate distortion of an HxWx3 image."""
    h, w, _ = content.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    amp = rng.uniform(1.0, 2.5)
    fy = rng.uniform(1.0, 2.5) * 2 * np.pi / h
    fx = rng.uniform(1.0, 2.5) * 2 * np.pi / w
    py, px = rng.uniform(0, 2 * np.pi, size=2)
    dy = amp * np.sin(fy * yy + px)
    dx = amp * np.sin(fx * xx + py)
    out = np.empty_like(content)
    for c in range(3):
        out[..., c] = ndimage.map_coordinates(
            content[..., c], [yy + dy, xx + dx], order=3, mode="reflect"
        )
    return out


def forge_frame(
    real_frame: np.ndarray,
    donor_frame: np.ndarray,
    kind: ManipKind,
    blend_softness: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Transplant donor content into the real frame.

    Returns (fake_frame, truth_region) where truth_region marks exactly the
    pixels whose value changed. Outside a blend-radius dilation of the chosen
    region the fake equals the real frame.
    """
    if real_frame.shape != donor_frame.shape:
        raise ValueError(
            f"shape mismatch: real {real_frame.shape} vs donor {donor_frame.shape}"
        )
    h, w, _ = real_frame.shape
    region = _region_mask((h, w), kind, rng)
    if kind == ManipKind.WARP_PATCH:
        # in-place warp: the region's own content is distorted, so there is
        # no donor boundary to find, only the resampling footprint
        content = _warp(real_frame.astype(np.float64), rng)
    else:
        content = donor_frame.astype(np.float64)
    alpha = region.astype(np.float64)
    if blend_softness > 0:
        alpha = ndimage.gaussian_filter(alpha, blend_softness)
        alpha = np.clip((alpha - 0.05) / 0.9, 0.0, 1.0)
        alpha *= region | (ndimage.binary_dilation(region, iterations=int(3 * blend_softness) + 1))
    fake = real_frame.astype(np.float64) * (1 - alpha[..., None]) + content * alpha[..., None]
    fake = np.clip(fake, 0.0, 1.0).astype(np.float32)
    truth = np.any(fake != real_frame, axis=-1)
    return fake, truth


# ---------------------------------------------------------------------------
# corpus generation and loading


def _save_png(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as e:
        raise ValueError(f"cannot read image file {path}: {e}") from e
    return arr


def generate_corpus(spec: CorpusSpec, out_dir: str | os.PathLike) -> Path:
    """Write a synthetic corpus to out_dir. Deterministic given spec.seed."""
    spec.validate()
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        raise FileExistsError(f"output directory {root} is not empty")
    root.mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_videos + 1)
    forge_rng = np.random.default_rng(seeds[-1])
    video_states = []
    for i in range(spec.n_videos):
        g = np.random.default_rng(seeds[i])
        video_states.append(g.bit_generator.state)

    rows = []
    real_frames: dict[int, list[np.ndarray]] = {}
    for i in range(spec.n_videos):
        vid = f"v{i:03d}"
        frames = [
            render_real_frame(video_states[i], t, spec.image_size)
            for t in range(spec.frames_per_video)
        ]
        real_frames[i] = frames
        for t, frame in enumerate(frames):
            _save_png(root / "real" / vid / f"{t}.png", frame)
        rows.append((vid, 0, "", ""))

    for i in range(spec.n_videos):
        vid = f"v{i:03d}"
        fake_vid = f"{vid}_f"
        donor = (i + 1 + int(forge_rng.integers(0, spec.n_videos - 1))) % spec.n_videos
        kind = spec.manipulation_families[
            int(forge_rng.integers(0, len(spec.manipulation_families)))
        ]
        # one region draw per video, reused across frames for temporal coherence
        region_rng = np.random.default_rng(forge_rng.integers(0, 2**63))
        # splices carry a color-mismatch between donor and target lighting,
        # a family-specific giveaway the warp family does not have
        if kind is ManipKind.WARP_PATCH:
            color_shift = np.zeros(3, dtype=np.float32)
        else:
            color_shift = (
                forge_rng.choice([-1.0, 1.0], size=3)
                * forge_rng.uniform(0.05, 0.12, size=3)
            ).astype(np.float32)
        state = region_rng.bit_generator.state
        for t in range(spec.frames_per_video):
            region_rng.bit_generator.state = state
            # donor content is resampled on paste, as in real forgery
            # pipelines; the high-frequency attenuation this leaves is the
            # low-level artifact shared across manipulation families.  The
            # warp family resamples inside forge_frame (bilinear warp), so it
            # gets no extra smoothing here and its footprint is subtler.
            prepared = real_frames[donor][t].astype(np.float64)
            if kind is not ManipKind.WARP_PATCH:
                prepared = ndimage.gaussian_filter(prepared, (0.7, 0.7, 0.0))
            prepared = np.clip(prepared.astype(np.float32) + color_shift, 0.0, 1.0)
            fake, _ = forge_frame(
                real_frames[i][t], prepared,
                kind, spec.blend_softness, region_rng,
            )
            _save_png(root / "fake" / fake_vid / f"{t}.png", fake)
        rows.append((fake_vid, 1, kind.value, vid))

    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "label", "manipulation", "corresponding_video_id"])
        writer.writerows(rows)
    return root


def load_dataset(root: str | os.PathLike) -> Dataset:
    """Load a corpus written by generate_corpus (or converted to its layout)."""
    root = Path(root)
    csv_path = root / "labels.csv"
    if not csv_path.exists():
        raise FileNotFoundError(f"no samples: {csv_path} not found")
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"video_id", "label", "corresponding_video_id"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"malformed labels.csv: header must contain {sorted(required)}")
        for row in reader:
            if row["video_id"] is None or row["label"] not in ("0", "1"):
                raise ValueError(f"malformed labels.csv row: {row}")
            rows.append(row)

    known_videos = {r["video_id"] for r in rows}
    samples: list[Sample] = []
    for row in rows:
        vid = row["video_id"]
        label = int(row["label"])
        corr = row["corresponding_video_id"] or None
        if label == 1 and (corr is None or corr not in known_videos):
            raise ValueError(f"fake video {vid} references absent real video {corr!r}")
        vdir = root / ("fake" if label else "real") / vid
        if not vdir.is_dir():
            raise ValueError(f"missing frame directory for video {vid}: {vdir}")
        frame_files = sorted(vdir.iterdir(), key=lambda p: int(p.stem))
        for p in frame_files:
            samples.append(
                Sample(
                    image=_load_png(p),
                    label=label,
                    video_id=vid,
                    frame_idx=int(p.stem),
                    corresponding_video_id=corr,
                )
            )
    if not samples:
        raise ValueError("no samples found in corpus")
    return Dataset(samples)
