"""Uncertainty-guided unsupervised domain adaptation for layer segmentation."""

from .core import DomainTag, ImageBatch, argmax_labels, minmax_normalize, one_hot, softmax_channelwise
from .evaluation import conformity, dice, evaluate, render_uncertainty, write_metrics
from .losses import LossWeights, adv_d_loss, adv_g_loss, full_objective, target_ce_loss, uce_loss
from .model import ModelConfig, UDAModel
from .selftrain import CurriculumSchedule, curriculum_fraction, score_target_set, select_subset
from .synthdata import PhantomSpec, build_corpus, load_manifest, load_split
from .trainer import TrainConfig, adapt, load_checkpoint, pretrain_source, save_checkpoint
from .uesm import LatentConfig, kl_divergence, mc_infer

__version__ = "0.1.0"
