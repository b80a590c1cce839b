"""End-to-end training: combined loss with the warm-up weighting schedule,
Adam on the query side only, EMA key updates, prototype/queue maintenance,
and deterministic checkpointing.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset, Sample
from .encoder import DualEncoder, EncoderConfig, bce_loss, images_to_tensor
from .inter_icl import ContrastConfig, FeatureQueue, PrototypeBank, gate_and_enqueue, inter_loss
from .intra_icl import RegionMask, intra_loss_batch, make_mask
from .views import ViewPolicy, make_views

CHECKPOINT_FORMAT = "dcl-ckpt-1"


@dataclass
class IntraConfig:
    # The region-level loss gets its own, softer temperature: at the
    # instance-level 0.07 its homogeneity pressure saturates the feature
    # map and starves the classification signal.
    tau: float = 0.5
    bin_threshold: float = 0.02
    include_self_pairs: bool = True

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.bin_threshold < 0:
            raise ValueError(f"bin_threshold must be >= 0, got {self.bin_threshold}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    phi_warm: float = 0.1
    phi_main: float = 0.5
    warm_epochs: int = 5
    seed: int = 0
    checkpoint_every: int = 10
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    views: ViewPolicy = field(default_factory=ViewPolicy)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    intra: IntraConfig = field(default_factory=IntraConfig)

    def validate(self) -> None:
        for name in ("phi_warm", "phi_main"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.warm_epochs < 0:
            raise ValueError("warm_epochs must be >= 0")
        self.encoder.validate()
        self.views.validate()
        self.contrast.validate()
        self.intra.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder"))
        views = d.pop("views")
        views["mixup_range"] = tuple(views["mixup_range"])
        views["blur_sigma_range"] = tuple(views["blur_sigma_range"])
        vp = ViewPolicy(**views)
        con = ContrastConfig(**d.pop("contrast"))
        intra = IntraConfig(**d.pop("intra"))
        return cls(encoder=enc, views=vp, contrast=con, intra=intra, **d)


def phi_schedule(epoch: int, config: TrainConfig) -> float:
    """Contrastive weight: phi_warm through the warm-up epochs, then phi_main."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return config.phi_warm if epoch <= config.warm_epochs else config.phi_main


def total_loss(l_ce, l_inter, l_intra, phi: float):
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must be in [0, 1], got {phi}")
    return phi * (l_inter + l_intra) + (1.0 - phi) * l_ce


class TrainState:
    """Everything mutated by training, bundled for checkpointing."""

    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        torch.manual_seed(config.seed)
        self.model = DualEncoder(config.encoder)
        dim = config.encoder.feat_size**2
        self.queue_real = FeatureQueue(config.contrast.queue_capacity, dim)
        self.queue_fake = FeatureQueue(config.contrast.queue_capacity, dim)
        self.bank = PrototypeBank(
            dim, alpha=config.contrast.proto_alpha,
            gate_threshold=config.contrast.gate_threshold,
        )
        self.optimizer = torch.optim.Adam(
            self.model.trainable_parameters(),
            lr=config.learning_rate,
            betas=(0.9, 0.999),
            weight_decay=config.weight_decay,
        )
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self._mask_cache: dict[str, RegionMask] = {}

    def mask_for(self, sample: Sample, dataset: Dataset) -> RegionMask:
        key = sample.sample_id
        if key not in self._mask_cache:
            real = dataset.corresponding_real(sample)
            fs = self.config.encoder.feat_size
            self._mask_cache[key] = make_mask(
                sample.image, real.image, fs, fs, self.config.intra.bin_threshold
            )
        return self._mask_cache[key]


def train_step(
    state: TrainState, batch: list[Sample], dataset: Dataset, phi: float
) -> dict[str, float]:
    """One optimization step over a batch; returns the four scalar losses."""
    cfg = state.config
    pairs = [make_views(s, dataset, cfg.views, state.rng) for s in batch]
    v1 = images_to_tensor([p.view1 for p in pairs])
    v2 = images_to_tensor([p.view2 for p in pairs])
    labels = torch.tensor([s.label for s in batch], dtype=torch.float32)

    fmaps, queries, logits = state.model.forward_query(v1)
    keys = state.model.forward_key(v2)

    l_ce = bce_loss(logits, labels)

    real_idx = labels == 0
    fake_idx = labels == 1
    n = len(batch)
    l_inter = torch.zeros(())
    tau = cfg.contrast.tau
    if real_idx.any():
        l_r = inter_loss(queries[real_idx], keys[real_idx], state.queue_fake.contents(), tau)
        l_inter = l_inter + l_r * (real_idx.sum() / n)
    if fake_idx.any():
        l_f = inter_loss(queries[fake_idx], keys[fake_idx], state.queue_real.contents(), tau)
        l_inter = l_inter + l_f * (fake_idx.sum() / n)

    items = []
    for i, s in enumerate(batch):
        mask = state.mask_for(s, dataset) if s.label == 1 else None
        items.append((fmaps[i], s.label, mask))
    l_intra = intra_loss_batch(items, cfg.intra.tau, cfg.intra.include_self_pairs)

    loss = total_loss(l_ce, l_inter, l_intra, phi)
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()

    state.model.ema_update()
    state.bank.update(keys, labels)
    gate_and_enqueue(
        state.queue_real, state.queue_fake, state.bank, keys, labels,
        cfg.contrast.warmup_fill,
    )
    return {
        "ce": l_ce.item(), "inter": l_inter.item(),
        "intra": l_intra.item(), "total": loss.item(),
    }


def train(
    config: TrainConfig,
    dataset: Dataset,
    checkpoint_path: str | os.PathLike | None = None,
    log_path: str | os.PathLike | None = None,
    resume_from: str | os.PathLike | None = None,
) -> tuple[TrainState, list[dict]]:
    """Train for config.epochs over shuffled batches; returns (state, log rows)."""
    labels = {s.label for s in dataset.samples}
    if labels != {0, 1}:
        raise ValueError("dataset must contain both real and fake samples")
    if resume_from:
        state = load_checkpoint(resume_from)
        if dataclasses.asdict(state.config.encoder) != dataclasses.asdict(config.encoder):
            raise ValueError("cannot resume: encoder config differs from checkpoint")
        state.config = config
    else:
        state = TrainState(config)
    log_rows: list[dict] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(state.epoch + 1, config.epochs + 1):
            phi = phi_schedule(epoch, config)
            order = state.rng.permutation(len(dataset))
            sums = {"ce": 0.0, "inter": 0.0, "intra": 0.0, "total": 0.0}
            n_steps = 0
            for start in range(0, len(order), config.batch_size):
                batch = [dataset[i] for i in order[start : start + config.batch_size]]
                losses = train_step(state, batch, dataset, phi)
                for k in sums:
                    sums[k] += losses[k]
                n_steps += 1
            state.epoch = epoch
            row = {"epoch": epoch, "steps": n_steps}
            row.update({k: sums[k] / n_steps for k in sums})
            row["queue_real"] = state.queue_real.size
            row["queue_fake"] = state.queue_fake.size
            log_rows.append(row)
            if log_file:
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
            if checkpoint_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path)
        if checkpoint_path:
            save_checkpoint(state, checkpoint_path)
    finally:
        if log_file:
            log_file.close()
    return state, log_rows


# ---------------------------------------------------------------------------
# checkpointing: zip of manifest.json + named little-endian float32 .npy arrays


def _array_entries(state: TrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in state.model.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().numpy().astype("<f4")
    arrays["queue_real/buffer"] = state.queue_real.buffer.numpy().astype("<f4")
    arrays["queue_fake/buffer"] = state.queue_fake.buffer.numpy().astype("<f4")
    arrays["bank/p_real"] = state.bank.p_real.numpy().astype("<f4")
    arrays["bank/p_fake"] = state.bank.p_fake.numpy().astype("<f4")
    for i, p in enumerate(state.optimizer.param_groups[0]["params"]):
        slot = state.optimizer.state.get(p)
        if slot:
            arrays[f"opt/{i}/exp_avg"] = slot["exp_avg"].numpy().astype("<f4")
            arrays[f"opt/{i}/exp_avg_sq"] = slot["exp_avg_sq"].numpy().astype("<f4")
    return arrays


def save_checkpoint(state: TrainState, path: str | os.PathLike) -> None:
    """Atomic write: manifest + arrays into a zip, temp file then rename."""
    path = Path(path)
    arrays = _array_entries(state)
    opt_steps = {}
    for i, p in enumerate(state.optimizer.param_groups[0]["params"]):
        slot = state.optimizer.state.get(p)
        if slot:
            opt_steps[str(i)] = int(slot["step"])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "queue_real": {
            "head": state.queue_real.head,
            "size": state.queue_real.size,
            "total_enqueued": state.queue_real.total_enqueued,
        },
        "queue_fake": {
            "head": state.queue_fake.head,
            "size": state.queue_fake.size,
            "total_enqueued": state.queue_fake.total_enqueued,
        },
        "bank_initialized": {str(k): v for k, v in state.bank.initialized.items()},
        "opt_steps": opt_steps,
        "rng_state": state.rng.bit_generator.state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, arr)
            zf.writestr(f"arrays/{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> TrainState:
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError as e:
            raise ValueError(f"checkpoint {path} has no manifest") from e
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(
                f"checkpoint format {manifest.get('format')!r} != {CHECKPOINT_FORMAT!r}"
            )
        arrays: dict[str, np.ndarray] = {}
        for name, shape in manifest["shapes"].items():
            arr = np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")))
            if list(arr.shape) != shape:
                raise ValueError(
                    f"shape mismatch for {name}: manifest {shape}, stored {list(arr.shape)}"
                )
            arrays[name] = arr

    config = TrainConfig.from_dict(manifest["config"])
    state = TrainState(config)
    sd = {}
    for name, tensor in state.model.state_dict().items():
        key = f"model/{name}"
        if key not in arrays:
            raise ValueError(f"checkpoint missing parameter {key}")
        if list(arrays[key].shape) != list(tensor.shape):
            raise ValueError(
                f"shape mismatch for {key}: model {list(tensor.shape)}, "
                f"checkpoint {list(arrays[key].shape)}"
            )
        sd[name] = torch.from_numpy(arrays[key].copy())
    state.model.load_state_dict(sd)

    for qname, queue in (("queue_real", state.queue_real), ("queue_fake", state.queue_fake)):
        queue.buffer = torch.from_numpy(arrays[f"{qname}/buffer"].copy())
        meta = manifest[qname]
        queue.head, queue.size = meta["head"], meta["size"]
        queue.total_enqueued = meta["total_enqueued"]
    state.bank.p_real = torch.from_numpy(arrays["bank/p_real"].copy())
    state.bank.p_fake = torch.from_numpy(arrays["bank/p_fake"].copy())
    state.bank.initialized = {
        int(k): v for k, v in manifest["bank_initialized"].items()
    }

    params = state.optimizer.param_groups[0]["params"]
    for i_str, step in manifest["opt_steps"].items():
        i = int(i_str)
        state.optimizer.state[params[i]] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(arrays[f"opt/{i}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt/{i}/exp_avg_sq"].copy()),
        }
    state.epoch = manifest["epoch"]
    state.rng.bit_generator.state = manifest["rng_state"]
    return state
