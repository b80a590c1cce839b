"""Inter-instance contrastive learning: InfoNCE against class-opposite
negative queues, EMA class prototypes, and hard-sample gating.

Real queries contrast against the fake queue and vice versa. A key is
admitted to its queue only when it is confusable with the opposite class
prototype (strict threshold), except during an initial warm-up window where
everything enqueues so training never starves.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class ContrastConfig:
    tau: float = 0.07
    queue_capacity: int = 2048
    warmup_fill: int = 256
    proto_alpha: float = 0.9
    gate_threshold: float = 0.5

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if not 0.0 <= self.proto_alpha <= 1.0:
            raise ValueError("proto_alpha must be in [0, 1]")


def _normalize(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    n = v.norm(dim=dim, keepdim=True)
    if torch.any(n == 0):
        raise ValueError("zero-norm vector has no direction")
    return v / n


def cosine_sim(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine of the angle between u and v (last dim)."""
    return (_normalize(u) * _normalize(v)).sum(-1)


class FeatureQueue:
    """Fixed-capacity FIFO ring of detached, L2-normalized embeddings."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.dim = dim
        self.buffer = torch.zeros(capacity, dim)
        self.head = 0  # next write position
        self.size = 0
        self.total_enqueued = 0

    def enqueue(self, key: torch.Tensor) -> None:
        self.buffer[self.head] = _normalize(key.detach())
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_enqueued += 1

    def contents(self) -> torch.Tensor:
        """Entries oldest-first, shape (size, dim)."""
        if self.size < self.capacity:
            return self.buffer[: self.size]
        return torch.cat([self.buffer[self.head :], self.buffer[: self.head]])


class PrototypeBank:
    """Unit-norm EMA running directions of real and fake key embeddings."""

    def __init__(self, dim: int, alpha: float = 0.9, gate_threshold: float = 0.5):
        self.alpha = alpha
        self.gate_threshold = gate_threshold
        self.p_real = torch.zeros(dim)
        self.p_fake = torch.zeros(dim)
        self.initialized = {0: False, 1: False}

    def prototype(self, label: int) -> torch.Tensor:
        return self.p_fake if label else self.p_real

    def update(self, keys: torch.Tensor, labels: torch.Tensor) -> None:
        """EMA-update the matching prototype with each key, in batch order."""
        for key, label in zip(keys.detach(), labels):
            lab = int(label)
            k_hat = _normalize(key)
            if not self.initialized[lab]:
                proto = k_hat.clone()
                self.initialized[lab] = True
            else:
                proto = _normalize(self.alpha * self.prototype(lab) + (1 - self.alpha) * k_hat)
            if lab:
                self.p_fake = proto
            else:
                self.p_real = proto


def inter_loss(
    q: torch.Tensor,
    k: torch.Tensor,
    negatives: torch.Tensor | None,
    tau: float,
) -> torch.Tensor:
    """InfoNCE over cosine similarities; gradients flow through q only.

    q, k: (B, D); negatives: (N, D) or None/empty. Returns the batch mean.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    q_hat = _normalize(q)
    k_hat = _normalize(k.detach())
    pos = (q_hat * k_hat).sum(-1, keepdim=True) / tau
    if negatives is None or negatives.numel() == 0:
        return torch.zeros((), dtype=q.dtype)
    neg = q_hat @ _normalize(negatives.detach()).T / tau
    logits = torch.cat([pos, neg], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos.squeeze(1)).mean()


def gate_and_enqueue(
    queue_real: FeatureQueue,
    queue_fake: FeatureQueue,
    bank: PrototypeBank,
    keys: torch.Tensor,
    labels: torch.Tensor,
    warmup_fill: int,
) -> None:
    """Admit each key to its class queue iff it is confusable with the
    opposite-class prototype (strict >), bypassing the gate during warm-up."""
    for key, label in zip(keys.detach(), labels):
        lab = int(label)
        queue = queue_fake if lab else queue_real
        cross = 1 - lab
        in_warmup = queue_real.total_enqueued + queue_fake.total_enqueued < warmup_fill
        if in_warmup or not bank.initialized[cross]:
            queue.enqueue(key)
            continue
        if float(cosine_sim(key, bank.prototype(cross))) > bank.gate_threshold:
            queue.enqueue(key)
