"""Two-phase training: source pretraining, then uncertainty-guided adaptation.

Phase 1 fits the segmenter and its CVAE on labelled source images. Phase 2
alternates, per iteration, a source step (uncertainty-weighted CE + KL), a
target step (pseudo-label CE on the current curriculum subset + adversarial
generator term) and a critic step (FRM + discriminator).

Every random choice is drawn from a named ``torch.Generator`` derived from
the master seed, and the generator states travel in the checkpoint, so a run
resumed from any iteration replays the uninterrupted loss sequence exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import torch

from .core import NonFiniteError, softmax_channelwise
from .losses import LOSS_TERMS, LossWeights, adv_d_loss, adv_g_loss, make_report, target_ce_loss, uce_loss
from .backbone import BackboneConfig
from .frm_disc import DiscConfig, RecalibConfig
from .model import ModelConfig, UDAModel
from .selftrain import CurriculumSchedule, curriculum_fraction, plan_epochs, score_target_set, select_subset
from .uesm import LatentConfig, kl_divergence, mc_from_features, posterior_encode, sample_latent, split_seeds

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "ugda-checkpoint-v1"
STREAMS = ("source_order", "source_latent", "target_order", "target_latent", "score")
LOG_COLUMNS = ("iter", *LOSS_TERMS, "total")


@dataclass
class TrainConfig:
    phase1_iters: int = 3000
    phase1_lr: float = 1e-3
    phase2_iters: int = 2000
    phase2_lr: float = 1e-4
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    num_samples: int = 4
    latent_dim: int = 6
    lambda_s: float = 1.0
    lambda_t: float = 0.1
    lambda_D: float = 1.0
    lambda_G: float = 0.003
    lambda_KL: float = 1.0
    f_start: float = 0.2
    f_end: float = 0.8
    total_epochs: int | None = None
    use_frm: bool = True
    use_uce: bool = True
    use_ust: bool = True
    score_reduction: str = "mean"
    base_channels: int = 16
    feature_dim: int = 64
    common_channels: int = 32
    disc_layers: int = 3
    disc_width: int = 32
    seed: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.phase1_iters < 1 or self.phase2_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.phase1_lr < 0 or self.phase2_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        # validate eagerly
        self.weights, self.schedule

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_s, self.lambda_t, self.lambda_D, self.lambda_G, self.lambda_KL)

    @property
    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(self.f_start, self.f_end, self.total_epochs)

    @property
    def latent(self) -> LatentConfig:
        return LatentConfig(self.latent_dim, self.num_samples)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            backbone=BackboneConfig(base_channels=self.base_channels, feature_dim=self.feature_dim),
            latent=self.latent,
            recalib=RecalibConfig(common_channels=self.common_channels, recalibrate=self.use_frm),
            disc=DiscConfig(layers=self.disc_layers, base_width=self.disc_width),
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class DomainData:
    ids: list[str]
    images: torch.Tensor  # [n, 1, H, W]
    labels: torch.Tensor | None = None  # [n, H, W]

    def __len__(self):
        return len(self.ids)


class CheckpointError(RuntimeError):
    pass


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; ``checkpoint`` holds the last finite state."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class Checkpoint:
    phase: str
    iteration: int
    config: dict
    model_config: dict
    model_state: dict
    optimizer_state: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    loop_state: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    history: dict = field(default_factory=dict)
    config_digest: str = ""
    version: str = CHECKPOINT_VERSION

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)

    def build_model(self) -> UDAModel:
        model = UDAModel(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.model_state)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(asdict(ckpt), tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint file; nothing is applied to any model here."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc.__class__.__name__}: {exc})") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"{path}: not a checkpoint")
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version!r} does not match expected {CHECKPOINT_VERSION!r}")
    names = {f.name for f in fields(Checkpoint)}
    if set(payload) != names:
        raise CheckpointError(f"{path}: checkpoint fields {sorted(payload)} do not match {sorted(names)}")
    ckpt = Checkpoint(**payload)
    # instantiate once so that a mismatched state dict is rejected here
    try:
        ckpt.build_model()
    except Exception as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored model config ({exc})") from exc
    return ckpt


def write_log(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row[0], *(f"{v:.9g}" for v in row[1:])])


def _make_streams(seed: int) -> dict[str, torch.Generator]:
    seeds = split_seeds(seed, len(STREAMS) + 1)[1:]
    return {name: torch.Generator().manual_seed(s) for name, s in zip(STREAMS, seeds)}


def init_model(cfg: TrainConfig) -> UDAModel:
    torch.manual_seed(split_seeds(cfg.seed, 1)[0])
    return UDAModel(cfg.model_config())


def _adam(params, cfg: TrainConfig, lr):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))


def _draw_seed(gen: torch.Generator) -> int:
    return int(torch.randint(0, 2**62, (1,), generator=gen))


class _Cycler:
    """Endless reshuffled passes over ``range(n)``, drawing order from ``gen``."""

    def __init__(self, n, gen, order=None, pos=0):
        self.n, self.gen = n, gen
        self.order = order if order is not None else torch.randperm(n, generator=gen).tolist()
        self.pos = pos

    def next(self) -> int:
        if self.pos >= len(self.order):
            self.order = torch.randperm(self.n, generator=self.gen).tolist()
            self.pos = 0
        i = self.order[self.pos]
        self.pos += 1
        return i

    def state(self):
        return {"order": list(self.order), "pos": self.pos}


class _Run:
    """Shared bookkeeping of one training phase."""

    def __init__(self, phase, cfg: TrainConfig, model: UDAModel, ckpt: Checkpoint | None):
        self.phase, self.cfg, self.model = phase, cfg, model
        self.streams = _make_streams(cfg.seed if phase == "pretrain" else cfg.seed + 1)
        self.iteration = 0
        self.log: list[list] = []
        self.history: dict = {}
        self.loop_state: dict = {}
        self.optimizers: dict[str, torch.optim.Optimizer] = {}
        self.resume = ckpt is not None and ckpt.phase == phase
        self._ckpt = ckpt

    def restore(self):
        ckpt = self._ckpt
        for name, opt in self.optimizers.items():
            opt.load_state_dict(ckpt.optimizer_state[name])
        for name, gen in self.streams.items():
            gen.set_state(ckpt.rng_state[name])
        self.iteration = ckpt.iteration
        self.log = [list(r) for r in ckpt.log]
        self.history = json.loads(json.dumps(ckpt.history))
        self.loop_state = ckpt.loop_state

    def checkpoint(self, loop_state=None) -> Checkpoint:
        return Checkpoint(
            phase=self.phase,
            iteration=self.iteration,
            config=self.cfg.to_dict(),
            config_digest=self.cfg.digest(),
            model_config=replace(self.model.cfg, recalib=self.model.frm.cfg).to_dict(),
            model_state={k: v.detach().clone() for k, v in self.model.state_dict().items()},
            optimizer_state={k: _clone_state(o.state_dict()) for k, o in self.optimizers.items()},
            rng_state={k: g.get_state() for k, g in self.streams.items()},
            loop_state=loop_state or {},
            log=[list(r) for r in self.log],
            history=json.loads(json.dumps(self.history)),
        )

    def record(self, terms):
        report = make_report(terms, self.cfg.weights)
        self.log.append([self.iteration, *report.row()])
        return report

    def check_finite(self, loss, what, loop_state=None):
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"{self.phase}: non-finite {what} at iteration {self.iteration}",
                self.checkpoint(loop_state),
            )

    @contextmanager
    def guard(self, loop_state):
        """Turn a non-finite forward pass into :class:`TrainingDiverged`."""
        try:
            yield
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"{self.phase}: {exc} at iteration {self.iteration}", self.checkpoint(loop_state())
            ) from exc

    def finish(self, loop_state=None) -> Checkpoint:
        ckpt = self.checkpoint(loop_state)
        if self.cfg.log_path:
            write_log(Path(self.cfg.log_path).with_suffix(f".{self.phase}.csv"), self.log)
        if self.cfg.checkpoint_path:
            save_checkpoint(ckpt, self.cfg.checkpoint_path)
        return ckpt


def _clone_state(state):
    if torch.is_tensor(state):
        return state.detach().clone()
    if isinstance(state, dict):
        return {k: _clone_state(v) for k, v in state.items()}
    if isinstance(state, list):
        return [_clone_state(v) for v in state]
    return state


def pretrain_source(source: DomainData, cfg: TrainConfig, checkpoint: Checkpoint | None = None, stop_at=None):
    """Fit the segmenter on labelled source images (posterior latents, CE + KL).

    ``checkpoint`` from an unfinished pretraining run resumes it; ``stop_at``
    ends the run early at that iteration (for resumable chunks).
    """
    if len(source) == 0:
        raise ValueError("source training set is empty")
    model = checkpoint.build_model() if checkpoint is not None else init_model(cfg)
    run = _Run("pretrain", cfg, model, checkpoint)
    gen_parts = UDAModel.generator_parts
    run.optimizers["generator"] = _adam(model.parameters_of(gen_parts), cfg, cfg.phase1_lr)
    cycler_state = {}
    if run.resume:
        run.restore()
        cycler_state = run.loop_state.get("source", {})
    src = _Cycler(len(source), run.streams["source_order"], **cycler_state)
    end = cfg.phase1_iters if stop_at is None else min(stop_at, cfg.phase1_iters)
    model.train()
    w = cfg.weights
    while run.iteration < end:
        with run.guard(lambda: {"source": src.state()}):
            i = src.next()
            x, y = source.images[i : i + 1], source.labels[i : i + 1]
            seg, _ = model.backbone(x)
            prior = model.prior(x)
            post = posterior_encode(x, y, model)
            z = sample_latent(post, run.streams["source_latent"])
            pred = softmax_channelwise(model.prediction(seg, z))
            ce = target_ce_loss(pred, y)
            kl = kl_divergence(post, prior)
            loss = w.lambda_s * ce + w.lambda_KL * kl
            run.check_finite(loss, "loss", {"source": src.state()})
            opt = run.optimizers["generator"]
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            run.iteration += 1
            run.record({"L_s": ce, "KL": kl})
    return run.finish({"source": src.state()})


def _set_requires_grad(modules, flag):
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


def adapt(source: DomainData, target: DomainData, checkpoint: Checkpoint, cfg: TrainConfig, stop_at=None):
    """Adapt a source-pretrained model to unlabelled target images.

    ``checkpoint`` is either a finished pretraining checkpoint (start of
    adaptation) or an unfinished adaptation checkpoint (resume).
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("adaptation needs non-empty source and target sets")
    model = checkpoint.build_model()
    model.frm.cfg = RecalibConfig(**{**asdict(model.frm.cfg), "recalibrate": cfg.use_frm})
    run = _Run("adapt", cfg, model, checkpoint)
    run.optimizers["generator"] = _adam(model.parameters_of(UDAModel.generator_parts), cfg, cfg.phase2_lr)
    run.optimizers["critic"] = _adam(model.parameters_of(UDAModel.critic_parts), cfg, cfg.phase2_lr)
    w = cfg.weights
    n_t = len(target)
    total_epochs = plan_epochs(n_t, cfg.phase2_iters, cfg.schedule) if cfg.use_ust else None

    state = {"epoch": 0, "source": None, "order": [], "pos": 0, "pseudo": None, "selected": 0}
    if run.resume:
        run.restore()
        state = dict(run.loop_state)
    else:
        run.history = {"uncertainty_before": None, "uncertainty_after_epoch": [], "selected_per_epoch": []}

    src = _Cycler(len(source), run.streams["source_order"], **(state["source"] or {}))
    gens = run.streams
    pseudo = state["pseudo"]

    def score_all():
        ranked = score_target_set(
            target.ids, target.images, model, cfg.latent, _draw_seed(gens["score"]), cfg.score_reduction
        )
        mean = sum(p.score for p in ranked) / len(ranked)
        return ranked, mean

    def start_epoch(epoch):
        nonlocal pseudo
        if cfg.use_ust:
            ranked, mean = score_all()
            if epoch == 0:
                run.history["uncertainty_before"] = mean
            else:
                run.history["uncertainty_after_epoch"].append(mean)
            f = curriculum_fraction(min(epoch, total_epochs - 1), cfg.schedule, total_epochs)
            chosen = select_subset(ranked, f)
            run.history["selected_per_epoch"].append(len(chosen))
            perm = torch.randperm(len(chosen), generator=gens["target_order"]).tolist()
            chosen = [chosen[k] for k in perm]
            pseudo = torch.cat([p.pseudo_label for p in chosen])
            return [p.index for p in chosen]
        pseudo = None
        return torch.randperm(n_t, generator=gens["target_order"]).tolist()

    def loop_state():
        return {**state, "source": src.state(), "pseudo": pseudo}

    model.train()
    if not run.resume:
        state["order"] = start_epoch(0)
    end = cfg.phase2_iters if stop_at is None else min(stop_at, cfg.phase2_iters)
    gen_opt, critic_opt = run.optimizers["generator"], run.optimizers["critic"]
    critic = [model.frm, model.discriminator]
    target_weight = (w.lambda_t if cfg.use_ust else 0.0) + w.lambda_G

    while run.iteration < end:
        if state["pos"] >= len(state["order"]):
            state["epoch"] += 1
            state["order"], state["pos"] = start_epoch(state["epoch"]), 0
        slot = state["pos"]
        t_idx = state["order"][slot]
        state["pos"] += 1
        with run.guard(loop_state):
            terms = {}

            # source step: uncertainty-weighted CE with posterior latents, plus KL
            i = src.next()
            x_s, y_s = source.images[i : i + 1], source.labels[i : i + 1]
            seg_s, pyr_s = model.backbone(x_s)
            prior_s = model.prior(x_s)
            post_s = posterior_encode(x_s, y_s, model)
            z = sample_latent(post_s, gens["source_latent"])
            pred_s = softmax_channelwise(model.prediction(seg_s, z))
            mc_seed = _draw_seed(gens["source_latent"])
            if cfg.use_uce:
                u = mc_from_features(seg_s.detach(), prior_s.detach(), model.prediction, cfg.num_samples, mc_seed).uncertainty
            else:
                u = torch.zeros_like(pred_s[:, 0])
            terms["L_s"] = uce_loss(pred_s, y_s, u)
            terms["KL"] = kl_divergence(post_s, prior_s)
            loss = w.lambda_s * terms["L_s"] + w.lambda_KL * terms["KL"]
            run.check_finite(loss, "source loss", loop_state())
            gen_opt.zero_grad(set_to_none=True)
            loss.backward()
            gen_opt.step()

            # target step: pseudo-label CE on the curriculum subset + fool the critic
            x_t = target.images[t_idx : t_idx + 1]
            z_seed = _draw_seed(gens["target_latent"])
            if target_weight > 0:
                _set_requires_grad(critic, False)
                seg_t, pyr_t = model.backbone(x_t)
                loss = 0.0
                if cfg.use_ust and w.lambda_t > 0:
                    prior_t = model.prior(x_t)
                    pred_t = softmax_channelwise(model.prediction(seg_t, sample_latent(prior_t, z_seed)))
                    terms["L_t"] = target_ce_loss(pred_t, pseudo[slot : slot + 1])
                    loss = loss + w.lambda_t * terms["L_t"]
                if w.lambda_G > 0:
                    terms["L_adv_G"] = adv_g_loss(model.discriminator(model.frm(pyr_t)))
                    loss = loss + w.lambda_G * terms["L_adv_G"]
                _set_requires_grad(critic, True)
                run.check_finite(loss, "target loss", loop_state())
                gen_opt.zero_grad(set_to_none=True)
                loss.backward()
                gen_opt.step()
            elif w.lambda_D > 0:
                with torch.no_grad():
                    _, pyr_t = model.backbone(x_t)

            # critic step on detached features, segmenter untouched
            if w.lambda_D > 0:
                d_src = model.discriminator(model.frm([p.detach() for p in pyr_s]))
                d_tgt = model.discriminator(model.frm([p.detach() for p in pyr_t]))
                terms["L_adv_D"] = adv_d_loss(d_src, d_tgt)
                loss = w.lambda_D * terms["L_adv_D"]
                run.check_finite(loss, "critic loss", loop_state())
                critic_opt.zero_grad(set_to_none=True)
                loss.backward()
                critic_opt.step()

        run.iteration += 1
        run.record(terms)

    if run.iteration >= cfg.phase2_iters and cfg.use_ust:
        _, mean = score_all()
        run.history["uncertainty_after_epoch"].append(mean)
    return run.finish(loop_state())


def finetune_source(source: DomainData, checkpoint: Checkpoint, cfg: TrainConfig):
    """Continue source-only training with the adaptation-phase settings.

    Reference path for ablations: it consumes the source random streams
    exactly as :func:`adapt` does.
    """
    model = checkpoint.build_model()
    run = _Run("adapt", cfg, model, None)
    opt = _adam(model.parameters_of(UDAModel.generator_parts), cfg, cfg.phase2_lr)
    run.optimizers["generator"] = opt
    src = _Cycler(len(source), run.streams["source_order"])
    w = cfg.weights
    model.train()
    while run.iteration < cfg.phase2_iters:
        i = src.next()
        x, y = source.images[i : i + 1], source.labels[i : i + 1]
        seg, _ = model.backbone(x)
        prior = model.prior(x)
        post = posterior_encode(x, y, model)
        pred = softmax_channelwise(model.prediction(seg, sample_latent(post, run.streams["source_latent"])))
        mc_seed = _draw_seed(run.streams["source_latent"])
        u = (
            mc_from_features(seg.detach(), prior.detach(), model.prediction, cfg.num_samples, mc_seed).uncertainty
            if cfg.use_uce
            else torch.zeros_like(pred[:, 0])
        )
        ls, kl = uce_loss(pred, y, u), kl_divergence(post, prior)
        loss = w.lambda_s * ls + w.lambda_KL * kl
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        run.iteration += 1
        run.record({"L_s": ls, "KL": kl})
    return run.checkpoint()
