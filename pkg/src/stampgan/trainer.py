"""Two-stage curriculum training driver.

The mask stage trains first; the texture stage either conditions on ground
truth masks (default) or on generated masks from a finished mask checkpoint;
the optional joint stage fine-tunes both models, letting texture-adversarial
gradients reach the mask generator through the soft composite.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from stampgan.batching import to_torch_batch
from stampgan.checkpoint import (
    config_hash,
    load_stage_checkpoint,
    save_stage_checkpoint,
)
from stampgan.data import batch_order, filter_instances, load_dataset, make_example
from stampgan.mask_gan import MaskGanBundle, mask_train_step
from stampgan.texture_gan import (
    DEFAULT_TEXTURE_LAMBDAS,
    TextureGanBundle,
    texture_train_step,
)

STAGES = ("mask", "texture", "joint")


class StageOrderError(RuntimeError):
    """A stage needs a prerequisite checkpoint that does not exist."""


@dataclass
class TrainConfig:
    stage: str = "mask"
    epochs: int = 1000
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.99
    image_size: int = 64
    seed: int = 0
    # loss weights (mask stage uses lambda_fm / lambda_rec)
    lambda_fm: float = 10.0
    lambda_rec: float = 10.0
    lambda_t_rec: float = 10.0
    lambda_kl: float = 0.05
    lambda_t_fm: float = 10.0
    lambda_per: float = 10.0
    lambda_irec: float = 10.0
    # latent sizes
    mask_latent_dim: int = 128
    texture_latent_dim: int = 8
    # architecture scale
    base_channels: int = 16
    d_channels: int = 32
    d_layers: int = 3
    n_res: int = 4
    mlp_hidden: int = 256
    ema_decay: float = 0.999
    # ablation switches
    no_fm: bool = False
    no_noise: bool = False
    no_bicycle: bool = False
    no_vgg: bool = False
    mrecon: bool = False
    bgcond: bool = False
    # wiring
    mask_source: str = "ground_truth"  # texture stage: ground_truth | generated
    mask_checkpoint: str = ""
    texture_checkpoint: str = ""
    perceptual_backend: str = "surrogate"
    perceptual_seed: int = 1234
    checkpoint_every: int = 50
    out_dir: str = "runs/default"
    device: str = "cpu"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        for name in ("lambda_fm", "lambda_rec", "lambda_t_rec", "lambda_kl",
                     "lambda_t_fm", "lambda_per", "lambda_irec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % 8 != 0:
            raise ValueError("image_size must be a multiple of 8")
        if self.mask_source not in ("ground_truth", "generated"):
            raise ValueError(f"bad mask_source {self.mask_source!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_file(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def texture_lambdas(self) -> dict:
        return {"rec": self.lambda_t_rec, "kl": self.lambda_kl,
                "fm": self.lambda_t_fm, "per": self.lambda_per,
                "irec": self.lambda_irec}


def desk_config(stage: str, **overrides) -> TrainConfig:
    """Small-footprint preset: 64 px, 200 mask / 100 texture epochs.

    The mask stage uses a shallower discriminator: finer score patches keep
    generated mass inside the conditioning box at this scale.
    """
    defaults = dict(
        stage=stage,
        epochs={"mask": 200, "texture": 100, "joint": 50}[stage],
        image_size=64,
        base_channels=8,
        d_channels=16,
        d_layers=2 if stage == "mask" else 3,
        n_res=3,
        mlp_hidden=128,
        mask_latent_dim=16,
        texture_latent_dim=8,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def lr_at(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Constant for the first half, then linear to zero at the end."""
    if epoch < 0 or epoch >= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    half = total_epochs // 2
    if epoch < half:
        return base_lr
    return base_lr * (total_epochs - epoch) / (total_epochs - half)


def build_mask_bundle(config: TrainConfig) -> MaskGanBundle:
    return MaskGanBundle(
        latent_dim=config.mask_latent_dim, base=config.base_channels,
        n_res=config.n_res, d_base=config.d_channels, d_layers=config.d_layers,
        mlp_hidden=config.mlp_hidden, ema_decay=config.ema_decay,
        mrecon=config.mrecon, bgcond=config.bgcond, device=config.device)


def build_texture_bundle(config: TrainConfig) -> TextureGanBundle:
    return TextureGanBundle(
        latent_dim=config.texture_latent_dim, base=config.base_channels,
        n_res=config.n_res, d_base=config.d_channels, d_layers=config.d_layers,
        enc_base=config.base_channels,
        perceptual_backend=config.perceptual_backend,
        perceptual_seed=config.perceptual_seed, device=config.device)


def dataset_fingerprint(examples) -> str:
    digest = hashlib.sha256()
    for ex in examples:
        digest.update(ex.image.data.tobytes())
        digest.update(ex.mask.data.tobytes())
    return digest.hexdigest()


def _adam(params, config: TrainConfig):
    return torch.optim.Adam(params, lr=config.lr,
                            betas=(config.beta1, config.beta2), weight_decay=0.0)


def _set_lr(optimizers, lr: float):
    for opt in optimizers:
        for group in opt.param_groups:
            group["lr"] = lr


def _mean_breakdown(breakdowns: list[dict]) -> dict:
    keys = breakdowns[0].keys()
    return {k: float(np.mean([b[k] for b in breakdowns])) for k in keys}


class Trainer:
    """Owns bundles, optimizers and RNG for one stage run."""

    def __init__(self, config: TrainConfig, examples):
        self.config = config
        self.examples = examples
        self.dataset_hash = dataset_fingerprint(examples)
        torch.manual_seed(config.seed)
        self.rng = torch.Generator()
        self.rng.manual_seed(config.seed + 1)
        self.start_epoch = 0
        self.mask_bundle = None
        self.texture_bundle = None
        self.optimizers: dict[str, torch.optim.Optimizer] = {}
        self._build()

    # -- construction --------------------------------------------------

    def _build(self):
        cfg = self.config
        if cfg.stage == "mask":
            self.mask_bundle = build_mask_bundle(cfg)
            self.optimizers["g"] = _adam(list(self.mask_bundle.generator_parameters()), cfg)
            self.optimizers["d"] = _adam(self.mask_bundle.discriminator.parameters(), cfg)
            return

        if cfg.stage == "texture":
            self.texture_bundle = build_texture_bundle(cfg)
            if cfg.mask_source == "generated":
                self.mask_bundle = self._load_frozen_mask()
            self.optimizers["g"] = _adam(list(self.texture_bundle.generator_parameters()), cfg)
            self.optimizers["d"] = _adam(self.texture_bundle.discriminator.parameters(), cfg)
            return

        # joint: fine-tune both, texture G optimizer also covers mask G side
        self.mask_bundle = self._load_frozen_mask(frozen=False)
        self.texture_bundle = build_texture_bundle(cfg)
        if not cfg.texture_checkpoint:
            raise StageOrderError("joint stage needs texture_checkpoint")
        tex_payload = load_stage_checkpoint(cfg.texture_checkpoint, expect_kind="texture")
        self.texture_bundle.load_state_dict(tex_payload["bundle"])
        self.optimizers["g"] = _adam(
            list(self.texture_bundle.generator_parameters())
            + list(self.mask_bundle.generator_parameters()), cfg)
        self.optimizers["d"] = _adam(self.texture_bundle.discriminator.parameters(), cfg)
        self.optimizers["mask_g"] = _adam(list(self.mask_bundle.generator_parameters()), cfg)
        self.optimizers["mask_d"] = _adam(self.mask_bundle.discriminator.parameters(), cfg)

    def _load_frozen_mask(self, frozen: bool = True) -> MaskGanBundle:
        cfg = self.config
        if not cfg.mask_checkpoint or not os.path.exists(cfg.mask_checkpoint):
            raise StageOrderError(
                "texture/joint stage with generated masks needs a finished "
                f"mask checkpoint, got {cfg.mask_checkpoint!r}")
        payload = load_stage_checkpoint(cfg.mask_checkpoint, expect_kind="mask")
        mask_cfg = TrainConfig.from_dict(payload["config"])
        bundle = build_mask_bundle(mask_cfg)
        bundle.load_state_dict(payload["bundle"])
        if frozen:
            bundle.eval_mode()
            for net in bundle.generator_modules():
                net.requires_grad_(False)
        return bundle

    # -- persistence ----------------------------------------------------

    def _rng_state(self) -> dict:
        return {"torch": torch.get_rng_state(), "sampler": self.rng.get_state()}

    def _load_rng_state(self, state: dict):
        torch.set_rng_state(state["torch"])
        self.rng.set_state(state["sampler"])

    def _bundle_state(self) -> dict:
        state = {}
        if self.mask_bundle is not None:
            state["mask"] = self.mask_bundle.state_dict()
        if self.texture_bundle is not None:
            state["texture"] = self.texture_bundle.state_dict()
        return state

    def save(self, path: str, epoch: int):
        cfg = self.config
        state = self._bundle_state()
        bundle_state = state["mask"] if cfg.stage == "mask" else state["texture"]
        if cfg.stage == "joint":
            bundle_state = state  # both bundles
        save_stage_checkpoint(
            path, kind=cfg.stage, epoch=epoch, config_dict=cfg.to_dict(),
            bundle_state=bundle_state,
            optimizer_states={k: o.state_dict() for k, o in self.optimizers.items()},
            rng_state=self._rng_state(), dataset_hash=self.dataset_hash)

    def resume(self, path: str):
        payload = load_stage_checkpoint(path, expect_kind=self.config.stage)
        if payload["config_hash"] != config_hash(self.config.to_dict()):
            raise ValueError("checkpoint config does not match this run's config")
        if payload["dataset_hash"] != self.dataset_hash:
            raise ValueError("checkpoint dataset hash does not match")
        if self.config.stage == "mask":
            self.mask_bundle.load_state_dict(payload["bundle"])
        elif self.config.stage == "texture":
            self.texture_bundle.load_state_dict(payload["bundle"])
        else:
            self.mask_bundle.load_state_dict(payload["bundle"]["mask"])
            self.texture_bundle.load_state_dict(payload["bundle"]["texture"])
        for key, opt in self.optimizers.items():
            opt.load_state_dict(payload["optimizers"][key])
        self._load_rng_state(payload["rng"])
        self.start_epoch = payload["epoch"] + 1

    # -- the loop --------------------------------------------------------

    def _step(self, batch) -> dict:
        cfg = self.config
        if cfg.stage == "mask":
            br = mask_train_step(
                self.mask_bundle, batch, self.optimizers["g"], self.optimizers["d"],
                lambda_fm=cfg.lambda_fm, lambda_rec=cfg.lambda_rec,
                use_fm=not cfg.no_fm, generator=self.rng)
            return br.to_dict()
        if cfg.stage == "texture":
            br = texture_train_step(
                self.texture_bundle, batch, self.optimizers["g"], self.optimizers["d"],
                lambdas=cfg.texture_lambdas(), use_fm=not cfg.no_fm,
                use_perceptual=not cfg.no_vgg, use_bicycle=not cfg.no_bicycle,
                use_noise=not cfg.no_noise, mask_source=cfg.mask_source,
                mask_bundle=self.mask_bundle, generator=self.rng)
            return br.to_dict()
        # joint: keep training the mask stage, then texture with live masks
        mask_br = mask_train_step(
            self.mask_bundle, batch, self.optimizers["mask_g"],
            self.optimizers["mask_d"], lambda_fm=cfg.lambda_fm,
            lambda_rec=cfg.lambda_rec, use_fm=not cfg.no_fm, generator=self.rng)
        tex_br = texture_train_step(
            self.texture_bundle, batch, self.optimizers["g"], self.optimizers["d"],
            lambdas=cfg.texture_lambdas(), use_fm=not cfg.no_fm,
            use_perceptual=not cfg.no_vgg, use_bicycle=not cfg.no_bicycle,
            use_noise=not cfg.no_noise, mask_source="generated",
            mask_bundle=self.mask_bundle, joint=True, generator=self.rng)
        merged = {f"mask_{k}": v for k, v in mask_br.to_dict().items()}
        merged.update(tex_br.to_dict())
        return merged

    def run(self, metrics_path: str | None = None) -> str:
        cfg = self.config
        os.makedirs(cfg.out_dir, exist_ok=True)
        metrics_path = metrics_path or os.path.join(cfg.out_dir, f"{cfg.stage}_metrics.jsonl")
        final_path = os.path.join(cfg.out_dir, f"{cfg.stage}_final.pt")
        n = len(self.examples)
        mode = "a" if self.start_epoch > 0 else "w"
        with open(metrics_path, mode) as metrics:
            for epoch in range(self.start_epoch, cfg.epochs):
                lr = lr_at(epoch, cfg.epochs, cfg.lr)
                _set_lr(self.optimizers.values(), lr)
                epoch_breakdowns = []
                for idx in batch_order(n, cfg.batch_size, cfg.seed, epoch):
                    batch = to_torch_batch(self.examples, idx, device=cfg.device)
                    epoch_breakdowns.append(self._step(batch))
                line = {"epoch": epoch, "stage": cfg.stage, "lr": lr}
                line.update(_mean_breakdown(epoch_breakdowns))
                metrics.write(json.dumps(line) + "\n")
                metrics.flush()
                if (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                    self.save(os.path.join(cfg.out_dir,
                                           f"{cfg.stage}_epoch{epoch + 1:05d}.pt"), epoch)
        self.save(final_path, cfg.epochs - 1)
        return final_path


def prepare_examples(dataset_dir: str, image_size: int):
    records = filter_instances(load_dataset(dataset_dir, size=image_size))
    return [make_example(r) for r in records]


def train(config: TrainConfig, dataset_dir: str | None = None, examples=None,
          resume_from: str | None = None) -> str:
    """Run one stage to completion; returns the final checkpoint path."""
    if examples is None:
        if dataset_dir is None:
            raise ValueError("need dataset_dir or examples")
        examples = prepare_examples(dataset_dir, config.image_size)
    if not examples:
        raise ValueError("dataset is empty after filtering")
    trainer = Trainer(config, examples)
    if resume_from:
        trainer.resume(resume_from)
    return trainer.run()
