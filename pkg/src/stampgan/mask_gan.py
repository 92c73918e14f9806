"""Shape-mask GAN: hinge adversarial loss, AdaIN latent conditioning with an
MLP encoder/decoder reconstruction path, and feature matching against an
exponential moving average of real-batch discriminator features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from stampgan.domain import BoundingBox, ImageTensor, LatentVector, MaskTensor
from stampgan.networks import (
    Discriminator,
    MaskGenerator,
    MaskLatentProbe,
    StyleMlp,
    StyleMlpDecoder,
    init_gan_weights,
)

DEFAULT_MASK_LATENT_DIM = 128


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


class UninitializedEmaError(RuntimeError):
    """Feature-matching loss requested before any EMA update."""


def hinge_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """E[max(0, 1 - D(real))] + E[max(0, 1 + D(fake))]."""
    return torch.relu(1.0 - real_scores).mean() + torch.relu(1.0 + fake_scores).mean()


def hinge_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """-E[D(fake)]."""
    return -fake_scores.mean()


def latent_reconstruction_loss(z: torch.Tensor, z_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute latent error, averaged over dimensions (and batch)."""
    return (z - z_hat).abs().mean()


class FeatureEma:
    """Per-layer running mean of real-batch discriminator features.

    Stores full spatial maps, mean-pooled over the batch axis only, outside
    the autograd graph. The matching loss sums per-layer mean squared errors
    between fake features and the stored means.
    """

    def __init__(self, decay: float = 0.999):
        if not (0.0 < decay < 1.0):
            raise ValueError("decay must lie in (0, 1)")
        self.decay = decay
        self.state: list[torch.Tensor] | None = None

    @property
    def initialized(self) -> bool:
        return self.state is not None

    @torch.no_grad()
    def update(self, real_feats: list[torch.Tensor]):
        batch_means = [f.detach().mean(dim=0) for f in real_feats]
        if self.state is None:
            self.state = [torch.zeros_like(m) for m in batch_means]
        for ema, m in zip(self.state, batch_means):
            ema.mul_(self.decay).add_(m, alpha=1.0 - self.decay)

    def loss(self, fake_feats: list[torch.Tensor]) -> torch.Tensor:
        if self.state is None:
            raise UninitializedEmaError("EMA has no feature statistics yet")
        total = 0.0
        for fake, ema in zip(fake_feats, self.state):
            total = total + ((fake - ema.unsqueeze(0)) ** 2).mean()
        return total

    def state_dict(self) -> dict:
        if self.state is None:
            return {"decay": self.decay, "layers": None}
        return {"decay": self.decay, "layers": [t.clone() for t in self.state]}

    def load_state_dict(self, d: dict):
        self.decay = d["decay"]
        self.state = None if d["layers"] is None else [t.clone() for t in d["layers"]]


@dataclass
class MaskLossBreakdown:
    adv_g: float
    adv_d: float
    fm: float
    rec: float
    total_g: float
    total_d: float

    @classmethod
    def build(cls, adv_g, adv_d, fm, rec, lambda_fm, lambda_rec):
        total_g = adv_g + lambda_fm * fm + lambda_rec * rec
        return cls(adv_g=adv_g, adv_d=adv_d, fm=fm, rec=rec,
                   total_g=total_g, total_d=adv_d)

    def to_dict(self) -> dict:
        return dict(adv_g=self.adv_g, adv_d=self.adv_d, fm=self.fm, rec=self.rec,
                    total_g=self.total_g, total_d=self.total_d)


class MaskGanBundle:
    """Generator, discriminator, AdaIN style encoder/decoder and EMA state."""

    def __init__(self, latent_dim: int = DEFAULT_MASK_LATENT_DIM, base: int = 16,
                 n_down: int = 3, n_res: int = 4, d_base: int = 32, d_layers: int = 3,
                 mlp_hidden: int = 256, ema_decay: float = 0.999,
                 mrecon: bool = False, bgcond: bool = False, device: str = "cpu",
                 g_extra: dict | None = None, d_extra: dict | None = None,
                 probe_extra: dict | None = None):
        self.latent_dim = latent_dim
        self.mrecon = mrecon
        self.bgcond = bgcond
        self.device = torch.device(device)
        self.generator = MaskGenerator(base=base, n_down=n_down, n_res=n_res,
                                       **(g_extra or {}))
        n_adain = self.generator.adain_param_count
        self.style_encoder = StyleMlp(latent_dim, n_adain, hidden=mlp_hidden)
        # latent is reconstructed from the AdaIN parameters, or from the
        # generated mask itself under the mrecon ablation
        if mrecon:
            self.style_decoder = MaskLatentProbe(latent_dim, base=8,
                                                 n_down=max(n_down, 2),
                                                 **(probe_extra or {}))
        else:
            self.style_decoder = StyleMlpDecoder(n_adain, latent_dim, hidden=mlp_hidden)
        d_in = 2 + (3 if bgcond else 0)  # mask + bbox raster (+ foreground)
        self.discriminator = Discriminator(d_in, base=d_base, n_layers=d_layers,
                                           **(d_extra or {}))
        self.ema = FeatureEma(decay=ema_decay)
        for net in (self.generator, self.style_encoder, self.style_decoder,
                    self.discriminator):
            init_gan_weights(net)
            net.to(self.device)
        # masks start near-empty; out-of-box mass has to be argued in, not out
        nn.init.constant_(self.generator.head.bias, -2.0)

    def generator_modules(self) -> list[nn.Module]:
        return [self.generator, self.style_encoder, self.style_decoder]

    def generator_parameters(self):
        for net in self.generator_modules():
            yield from net.parameters()

    def forward_generator(self, image_boxcut: torch.Tensor, z: torch.Tensor,
                          bbox_vec: torch.Tensor):
        """Soft masks plus the AdaIN parameters that conditioned them."""
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[1]} != configured {self.latent_dim}")
        adain_params = self.style_encoder(bbox_vec, z)
        mask = self.generator(image_boxcut, adain_params)
        return mask, adain_params

    def reconstruct_latent(self, adain_params: torch.Tensor,
                           generated_mask: torch.Tensor) -> torch.Tensor:
        if self.mrecon:
            return self.style_decoder(generated_mask)
        return self.style_decoder(adain_params)

    def d_input(self, mask: torch.Tensor, bbox_raster: torch.Tensor,
                foreground: torch.Tensor | None = None) -> torch.Tensor:
        parts = [mask, bbox_raster]
        if self.bgcond:
            if foreground is None:
                raise ValueError("bgcond discriminator needs the foreground image")
            parts.append(foreground)
        return torch.cat(parts, dim=1)

    def eval_mode(self):
        for net in (self.generator, self.style_encoder, self.style_decoder,
                    self.discriminator):
            net.eval()

    def train_mode(self):
        for net in (self.generator, self.style_encoder, self.style_decoder,
                    self.discriminator):
            net.train()

    @torch.no_grad()
    def generate(self, image_boxcut: ImageTensor, z: LatentVector,
                 bbox: BoundingBox) -> MaskTensor:
        """Domain-typed single-image inference on a frozen bundle."""
        if z.dim != self.latent_dim:
            raise ValueError(f"latent dim {z.dim} != configured {self.latent_dim}")
        self.eval_mode()
        ib = torch.from_numpy(np.ascontiguousarray(
            image_boxcut.data.transpose(2, 0, 1))).float()[None].to(self.device)
        zt = torch.from_numpy(z.values.copy()).float()[None].to(self.device)
        bv = torch.tensor([list(bbox.vec)], dtype=torch.float32, device=self.device)
        mask, _ = self.forward_generator(ib, zt, bv)
        arr = mask[0, 0].detach().cpu().double().numpy()
        return MaskTensor(np.clip(arr, 0.0, 1.0))

    def state_dict(self) -> dict:
        return {
            "generator": self.generator.state_dict(),
            "style_encoder": self.style_encoder.state_dict(),
            "style_decoder": self.style_decoder.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "ema": self.ema.state_dict(),
        }

    def load_state_dict(self, d: dict):
        self.generator.load_state_dict(d["generator"])
        self.style_encoder.load_state_dict(d["style_encoder"])
        self.style_decoder.load_state_dict(d["style_decoder"])
        self.discriminator.load_state_dict(d["discriminator"])
        self.ema.load_state_dict(d["ema"])


def mask_train_step(bundle: MaskGanBundle, batch: dict, opt_g, opt_d,
                    lambda_fm: float = 10.0, lambda_rec: float = 10.0,
                    use_fm: bool = True,
                    generator: torch.Generator | None = None) -> MaskLossBreakdown:
    """One alternating D/G update on a batch.

    The feature-matching loss compares against the EMA state accumulated from
    *previous* batches; the current batch's real features are folded in after
    the generator update (the first batch bootstraps the EMA instead).
    """
    i_b = batch["image_boxcut"]
    m_real = batch["mask"]
    b_raster = batch["bbox_raster"]
    b_vec = batch["bbox_vec"]
    fg = batch.get("foreground")
    n = i_b.shape[0]
    z = torch.randn(n, bundle.latent_dim, device=i_b.device, dtype=i_b.dtype,
                    generator=generator)

    # --- discriminator update
    fake, adain_params = bundle.forward_generator(i_b, z, b_vec)
    real_scores, _ = bundle.discriminator(bundle.d_input(m_real, b_raster, fg))
    fake_scores_d, _ = bundle.discriminator(bundle.d_input(fake.detach(), b_raster, fg))
    d_loss = hinge_d_loss(real_scores, fake_scores_d)
    opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    opt_d.step()

    # real features for the EMA come from the updated discriminator
    with torch.no_grad():
        _, real_feats = bundle.discriminator(bundle.d_input(m_real, b_raster, fg))
    bootstrapped = False
    if use_fm and not bundle.ema.initialized:
        bundle.ema.update(real_feats)
        bootstrapped = True

    # --- generator update
    fake_scores, fake_feats = bundle.discriminator(bundle.d_input(fake, b_raster, fg))
    adv_g = hinge_g_loss(fake_scores)
    fm = bundle.ema.loss(fake_feats) if use_fm else None
    z_hat = bundle.reconstruct_latent(adain_params, fake)
    rec = latent_reconstruction_loss(z, z_hat)
    g_loss = adv_g + lambda_rec * rec
    if use_fm:
        g_loss = g_loss + lambda_fm * fm
    opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    opt_g.step()

    if use_fm and not bootstrapped:
        bundle.ema.update(real_feats)

    breakdown = MaskLossBreakdown.build(
        adv_g=float(adv_g.item()), adv_d=float(d_loss.item()),
        fm=float(fm.item()) if use_fm else 0.0, rec=float(rec.item()),
        lambda_fm=lambda_fm if use_fm else 0.0, lambda_rec=lambda_rec)
    for name, value in breakdown.to_dict().items():
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite mask loss {name}", breakdown)
    return breakdown
