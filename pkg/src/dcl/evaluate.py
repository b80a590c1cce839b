"""Inference through the query path only, ranking metrics (AUC, EER), the
self-similarity diagnostic, and report artifacts for external plotting.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .data import Dataset
from .encoder import images_to_tensor
from .trainer import TrainState


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    ids: list[str]

    def __post_init__(self):
        if not (len(self.scores) == len(self.labels) == len(self.ids)):
            raise ValueError("scores, labels and ids must have equal length")


def predict(state: TrainState, dataset: Dataset, batch_size: int = 64) -> ScoreSet:
    """Per-frame fake probabilities. No augmentation, query encoder only."""
    model = state.model
    model.eval()
    scores: list[float] = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.samples[start : start + batch_size]
            x = images_to_tensor([s.image for s in chunk])
            _, _, logits = model.forward_query(x)
            scores.extend(torch.sigmoid(logits).tolist())
    return ScoreSet(
        scores=np.array(scores),
        labels=np.array([s.label for s in dataset.samples]),
        ids=[s.sample_id for s in dataset.samples],
    )


def video_scores(scoreset: ScoreSet) -> ScoreSet:
    """Aggregate frame scores to one mean score per video."""
    by_video: dict[str, list[int]] = {}
    for i, sid in enumerate(scoreset.ids):
        by_video.setdefault(sid.rsplit("/", 1)[0], []).append(i)
    vids = sorted(by_video)
    return ScoreSet(
        scores=np.array([scoreset.scores[by_video[v]].mean() for v in vids]),
        labels=np.array([scoreset.labels[by_video[v][0]] for v in vids]),
        ids=vids,
    )


def _check_two_classes(labels: np.ndarray) -> None:
    if set(np.unique(labels).tolist()) != {0, 1}:
        raise ValueError("both classes must be present")


def auc(scoreset: ScoreSet) -> float:
    """P(random fake outranks random real), ties counted half (rank form)."""
    _check_two_classes(scoreset.labels)
    ranks = rankdata(scoreset.scores)  # average ranks handle ties as 0.5
    pos = scoreset.labels == 1
    n_pos = int(pos.sum())
    n_neg = len(scoreset.labels) - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, fnr) along the descending-threshold sweep, one point per
    distinct score plus the trivial endpoints."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    fpr = np.r_[0.0, fp[distinct] / n_neg]
    fnr = np.r_[1.0, 1.0 - tp[distinct] / n_pos]
    return fpr, fnr


def eer(scoreset: ScoreSet) -> float:
    """Rate where false positives equal false negatives, bracketing operating
    points linearly interpolated when no threshold hits the crossing."""
    _check_two_classes(scoreset.labels)
    fpr, fnr = _roc_points(scoreset.scores, scoreset.labels)
    d = fpr - fnr  # monotone nondecreasing along the sweep
    i = int(np.searchsorted(d, 0.0, side="left"))
    if i == 0 or d[i] == 0.0:
        return float(fpr[i])
    d0, d1 = d[i - 1], d[i]
    t = -d0 / (d1 - d0)
    return float(fpr[i - 1] + t * (fpr[i] - fpr[i - 1]))


def self_similarity_stat(feature_map: torch.Tensor | np.ndarray) -> float:
    """Mean off-diagonal cosine between per-location feature vectors."""
    fmap = torch.as_tensor(feature_map, dtype=torch.float64)
    c, h, w = fmap.shape
    x = fmap.permute(1, 2, 0).reshape(h * w, c)
    x = x / torch.clamp(x.norm(dim=-1, keepdim=True), min=1e-12)
    m = h * w
    if m == 1:
        return 1.0
    gram = x @ x.T
    off = gram.sum() - torch.diagonal(gram).sum()
    return float(off / (m * (m - 1)))


def _selfsim_per_sample(state: TrainState, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    state.model.eval()
    stats: list[float] = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.samples[start : start + batch_size]
            fmaps, _, _ = state.model.forward_query(
                images_to_tensor([s.image for s in chunk])
            )
            stats.extend(self_similarity_stat(f) for f in fmaps)
    return np.array(stats)


def _embeddings(state: TrainState, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    state.model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.samples[start : start + batch_size]
            fmaps, _, _ = state.model.forward_query(
                images_to_tensor([s.image for s in chunk])
            )
            rows.append(fmaps.mean(dim=(2, 3)).numpy())
    return np.concatenate(rows, axis=0)


def selfsim_auc(state: TrainState, dataset: Dataset, batch_size: int = 64) -> float:
    """AUC of the negated self-similarity statistic as a 1-D fake detector.

    Trained fakes are less spatially self-similar than reals, so low
    similarity scores as evidence for "fake".
    """
    stats = _selfsim_per_sample(state, dataset, batch_size)
    return auc(
        ScoreSet(
            scores=-stats,
            labels=np.array([s.label for s in dataset.samples]),
            ids=[s.sample_id for s in dataset.samples],
        )
    )


def metrics(state: TrainState, dataset: Dataset) -> dict:
    frame = predict(state, dataset)
    video = video_scores(frame)
    return {
        "auc_frame": auc(frame),
        "eer_frame": eer(frame),
        "auc_video": auc(video),
        "eer_video": eer(video),
        "n_real": int((frame.labels == 0).sum()),
        "n_fake": int((frame.labels == 1).sum()),
    }


def report(state: TrainState, dataset: Dataset, out_dir: str | os.PathLike) -> dict:
    """Write metrics.json, self-similarity CSVs, embeddings.csv and histograms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = metrics(state, dataset)
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2)

    stats = _selfsim_per_sample(state, dataset)
    labels = np.array([s.label for s in dataset.samples])
    ids = [s.sample_id for s in dataset.samples]
    for label, name in ((0, "selfsim_real.csv"), (1, "selfsim_fake.csv")):
        with open(out / name, "w", encoding="utf-8") as f:
            f.write("sample_id,self_similarity\n")
            for i in np.flatnonzero(labels == label):
                f.write(f"{ids[i]},{stats[i]:.8f}\n")

    emb = _embeddings(state, dataset)
    with open(out / "embeddings.csv", "w", encoding="utf-8") as f:
        f.write("sample_id,label," + ",".join(f"e{j}" for j in range(emb.shape[1])) + "\n")
        for i in range(len(ids)):
            vals = ",".join(f"{v:.6f}" for v in emb[i])
            f.write(f"{ids[i]},{labels[i]},{vals}\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(stats[labels == 0], bins=20, alpha=0.6, label="real")
    ax.hist(stats[labels == 1], bins=20, alpha=0.6, label="fake")
    ax.set_xlabel("mean self-similarity")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "selfsim_hist.png", dpi=120)
    plt.close(fig)
    return result
