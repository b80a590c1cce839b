"""Query/key convolutional encoders with EMA coupling.

The key side mirrors the query side parameter-for-parameter but is updated
only by exponential moving average, never by gradients. A 1x1 convolution
squeezes the channel dimension so the contrastive embedding is the flattened
H' x W' spatial map; a pooled linear head produces the real/fake logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    channels: int = 64
    blocks: int = 4
    input_size: int = 96
    beta: float = 0.99

    def validate(self) -> None:
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.input_size % (2**self.blocks) or self.input_size // (2**self.blocks) < 2:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2^{self.blocks} "
                "with quotient >= 2"
            )

    @property
    def feat_size(self) -> int:
        return self.input_size // (2**self.blocks)


def _widths(cfg: EncoderConfig) -> list[int]:
    # narrow early blocks, full depth at the output
    return [max(8, cfg.channels >> (cfg.blocks - 1 - i)) for i in range(cfg.blocks)]


class NoiseStem(nn.Module):
    """Fixed high-pass residual stem.

    Applies the three steganalysis kernels per color channel and concatenates
    the rectified residuals with the RGB input, so the conv stack sees both
    content and noise statistics from layer one. The weights are buffers, not
    parameters: the stem is identical on the query and key branches and is
    never trained.
    """

    def __init__(self):
        super().__init__()
        from .views import SRM_KERNELS

        size = 5
        weight = torch.zeros(3 * len(SRM_KERNELS), 3, size, size)
        for i, kernel in enumerate(SRM_KERNELS):
            kh, kw = kernel.shape
            block = torch.tensor(kernel, dtype=torch.float32)
            top, left = (size - kh) // 2, (size - kw) // 2
            for c in range(3):
                weight[i * 3 + c, c, top : top + kh, left : left + kw] = block
        self.register_buffer("weight", weight)

    @property
    def out_channels(self) -> int:
        return 3 + self.weight.shape[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        padded = F.pad(x, (2, 2, 2, 2), mode="reflect")
        residual = F.conv2d(padded, self.weight)
        return torch.cat([x, residual.abs()], dim=1)


class Backbone(nn.Module):
    """Fixed noise-residual stem, then stride-2 3x3 conv blocks with BatchNorm."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.stem = NoiseStem()
        layers: list[nn.Module] = []
        in_ch = self.stem.out_channels
        for out_ch in _widths(cfg):
            layers += [
                nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
            ]
            in_ch = out_ch
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(self.stem(x))


class DualEncoder(nn.Module):
    """Query branch (trained by gradients) plus its EMA key twin."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.query_backbone = Backbone(cfg)
        self.key_backbone = Backbone(cfg)
        self.query_squeeze = nn.Conv2d(cfg.channels, 1, 1)
        self.key_squeeze = nn.Conv2d(cfg.channels, 1, 1)
        self.classifier = nn.Linear(cfg.channels, 1)
        self._sync_key()

    def _sync_key(self) -> None:
        for pq, pk in zip(self._query_params(), self._key_params()):
            pk.data.copy_(pq.data)
            pk.requires_grad_(False)

    def _query_params(self):
        return list(self.query_backbone.parameters()) + list(self.query_squeeze.parameters())

    def _key_params(self):
        return list(self.key_backbone.parameters()) + list(self.key_squeeze.parameters())

    def trainable_parameters(self):
        return self._query_params() + list(self.classifier.parameters())

    def forward_query(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (feature_map BxCxH'xW', query BxH'W', logit B)."""
        fmap = self.query_backbone(x)
        query = self.query_squeeze(fmap).flatten(1)
        logit = self.classifier(fmap.mean(dim=(2, 3))).squeeze(-1)
        return fmap, query, logit

    @torch.no_grad()
    def forward_key(self, x: torch.Tensor) -> torch.Tensor:
        """Key embedding BxH'W', detached."""
        fmap = self.key_backbone(x)
        return self.key_squeeze(fmap).flatten(1)

    @torch.no_grad()
    def ema_update(self, beta: float | None = None) -> None:
        """key := beta * key + (1 - beta) * query, elementwise."""
        b = self.cfg.beta if beta is None else beta
        if not 0.0 <= b < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {b}")
        for pq, pk in zip(self._query_params(), self._key_params()):
            if pq.shape != pk.shape:
                raise ValueError(f"query/key shape mismatch: {pq.shape} vs {pk.shape}")
            pk.data.mul_(b).add_(pq.data, alpha=1.0 - b)


def bce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over the batch, stable log-sum-exp form."""
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack HxWx3 [0,1] arrays into a Bx3xHxW tensor."""
    import numpy as np

    batch = np.stack([np.asarray(im) for im in images]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(batch)).to(dtype)
