"""Dual contrastive learning for forgery detection, desk-scale."""

from .data import CorpusSpec, Dataset, ManipKind, Sample, generate_corpus, load_dataset
from .encoder import DualEncoder, EncoderConfig, bce_loss
from .inter_icl import ContrastConfig, FeatureQueue, PrototypeBank, cosine_sim, inter_loss
from .intra_icl import RegionMask, intra_loss_batch, intra_loss_fake, intra_loss_real, make_mask
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .views import ViewPolicy, make_views

__all__ = [
    "CorpusSpec", "Dataset", "ManipKind", "Sample", "generate_corpus", "load_dataset",
    "DualEncoder", "EncoderConfig", "bce_loss",
    "ContrastConfig", "FeatureQueue", "PrototypeBank", "cosine_sim", "inter_loss",
    "RegionMask", "intra_loss_batch", "intra_loss_fake", "intra_loss_real", "make_mask",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
    "ViewPolicy", "make_views",
]

__version__ = "0.1.0"
