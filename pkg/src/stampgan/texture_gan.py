"""Texture GAN with dual latent paths: a random latent drives free synthesis
while an encoded latent (reparametrized from the real foreground) anchors the
feature-matching, image-reconstruction, KL and perceptual losses. The latent
reconstruction loss is stop-gradient with respect to the encoder so the
encoder cannot smuggle information through the generated pixels."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import torch

from stampgan.domain import ImageTensor, LatentVector, MaskTensor
from stampgan.mask_gan import TrainingDivergedError, hinge_d_loss, latent_reconstruction_loss
from stampgan.networks import (
    Discriminator,
    FeatureNet,
    TextureEncoder,
    TextureGenerator,
    build_vgg16_extractor,
    init_gan_weights,
    params_hash,
)

DEFAULT_TEXTURE_LATENT_DIM = 8


def hinge_d_loss_two_fakes(real_scores, fake_scores_a, fake_scores_b):
    """Hinge D loss with one real and two fake branches."""
    return (torch.relu(1.0 - real_scores).mean()
            + torch.relu(1.0 + fake_scores_a).mean()
            + torch.relu(1.0 + fake_scores_b).mean())


def hinge_g_loss_two_fakes(fake_scores_a, fake_scores_b):
    return -fake_scores_a.mean() - fake_scores_b.mean()


def feature_matching_loss(fake_feats, real_feats) -> torch.Tensor:
    """Mean squared feature difference, averaged over elements and layers.

    The real branch is detached: gradients only reach the generator.
    """
    total = 0.0
    for fake, real in zip(fake_feats, real_feats):
        total = total + ((fake - real.detach()) ** 2).mean()
    return total / len(fake_feats)


def image_reconstruction_loss(generated, target) -> torch.Tensor:
    """Mean absolute pixel difference over the full image."""
    return (generated - target).abs().mean()


def kl_divergence(mu, logvar) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over dims, mean over batch."""
    return (0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=1)).mean()


def perceptual_loss(extractor, image_a, image_b) -> torch.Tensor:
    """Mean absolute difference of frozen third-stage backbone features."""
    return (extractor(image_a) - extractor(image_b)).abs().mean()


def reparametrize(mu, logvar, eps=None, generator=None):
    if eps is None:
        eps = torch.randn(mu.shape, device=mu.device, dtype=mu.dtype,
                          generator=generator)
    return mu + torch.exp(0.5 * logvar) * eps


@contextlib.contextmanager
def frozen_parameters(module):
    """Run a forward with the module's parameters severed from autograd."""
    flags = [(p, p.requires_grad) for p in module.parameters()]
    for p, _ in flags:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad_(flag)


@dataclass
class TextureLossBreakdown:
    adv_g: float
    adv_d: float
    rec: float
    kl: float
    fm: float
    per: float
    irec: float
    total_g: float
    total_d: float

    @classmethod
    def build(cls, adv_g, adv_d, rec, kl, fm, per, irec, lambdas):
        total_g = (adv_g + lambdas["rec"] * rec + lambdas["kl"] * kl
                   + lambdas["fm"] * fm + lambdas["per"] * per
                   + lambdas["irec"] * irec)
        return cls(adv_g=adv_g, adv_d=adv_d, rec=rec, kl=kl, fm=fm, per=per,
                   irec=irec, total_g=total_g, total_d=adv_d)

    def to_dict(self) -> dict:
        return dict(adv_g=self.adv_g, adv_d=self.adv_d, rec=self.rec, kl=self.kl,
                    fm=self.fm, per=self.per, irec=self.irec,
                    total_g=self.total_g, total_d=self.total_d)


DEFAULT_TEXTURE_LAMBDAS = {"rec": 10.0, "kl": 0.05, "fm": 10.0, "per": 10.0,
                           "irec": 10.0}


class TextureGanBundle:
    """Generator, discriminator, texture encoder and frozen feature backbone."""

    def __init__(self, latent_dim: int = DEFAULT_TEXTURE_LATENT_DIM, base: int = 16,
                 n_down: int = 3, n_res: int = 4, d_base: int = 32, d_layers: int = 3,
                 enc_base: int = 16, perceptual_backend: str = "surrogate",
                 perceptual_seed: int = 1234, device: str = "cpu",
                 g_extra: dict | None = None, d_extra: dict | None = None,
                 enc_extra: dict | None = None, perceptual_extra: dict | None = None):
        self.latent_dim = latent_dim
        self.device = torch.device(device)
        self.generator = TextureGenerator(latent_dim=latent_dim, base=base,
                                          n_down=n_down, n_res=n_res,
                                          **(g_extra or {}))
        self.encoder = TextureEncoder(latent_dim=latent_dim, base=enc_base,
                                      **(enc_extra or {}))
        self.discriminator = Discriminator(4, base=d_base, n_layers=d_layers,
                                           **(d_extra or {}))
        for net in (self.generator, self.encoder, self.discriminator):
            init_gan_weights(net)
            net.to(self.device)
        # the encoder has to start readable: with sigma ~ 1 and a near-zero
        # mean head, the reparametrized latent is pure noise and the encoder
        # never picks up a learning signal
        torch.nn.init.normal_(self.encoder.fc_mu.weight, 0.0, 0.1)
        torch.nn.init.constant_(self.encoder.fc_logvar.bias, -3.0)
        self.perceptual_backend = perceptual_backend
        self.perceptual_seed = perceptual_seed
        if perceptual_backend == "surrogate":
            self.perceptual = FeatureNet(seed=perceptual_seed,
                                         **(perceptual_extra or {}))
        elif perceptual_backend == "vgg16":
            self.perceptual = build_vgg16_extractor()
        else:
            raise ValueError(f"unknown perceptual backend {perceptual_backend!r}")
        self.perceptual.to(self.device)
        self.perceptual_hash = params_hash(self.perceptual)

    def generator_modules(self):
        return [self.generator, self.encoder]

    def generator_parameters(self):
        for net in self.generator_modules():
            yield from net.parameters()

    def encode(self, foreground: torch.Tensor, eps=None, generator=None):
        """(mu, logvar, z) with the reparametrization trick."""
        mu, logvar = self.encoder(foreground)
        z = reparametrize(mu, logvar, eps=eps, generator=generator)
        return mu, logvar, z

    def encode_mean_detached(self, image: torch.Tensor) -> torch.Tensor:
        """Encoder mean with encoder parameters stop-gradiented; gradients
        still flow into the *input* image."""
        with frozen_parameters(self.encoder):
            mu, _ = self.encoder(image)
        return mu

    def d_input(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return torch.cat([image, mask], dim=1)

    def eval_mode(self):
        for net in (self.generator, self.encoder, self.discriminator):
            net.eval()

    def train_mode(self):
        for net in (self.generator, self.encoder, self.discriminator):
            net.train()
        self.perceptual.eval()

    @torch.no_grad()
    def generate(self, image_maskcut: ImageTensor, z: LatentVector,
                 noise_seed: int = 0) -> ImageTensor:
        """Domain-typed single-image inference on a frozen bundle."""
        if z.dim != self.latent_dim:
            raise ValueError(f"latent dim {z.dim} != configured {self.latent_dim}")
        self.eval_mode()
        x = torch.from_numpy(np.ascontiguousarray(
            image_maskcut.data.transpose(2, 0, 1))).float()[None].to(self.device)
        zt = torch.from_numpy(z.values.copy()).float()[None].to(self.device)
        out = self.generator(x, zt, noise_seed=noise_seed)
        arr = out[0].detach().cpu().double().numpy().transpose(1, 2, 0)
        return ImageTensor(np.clip(arr, -1.0, 1.0))

    def state_dict(self) -> dict:
        return {
            "generator": self.generator.state_dict(),
            "encoder": self.encoder.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "perceptual_backend": self.perceptual_backend,
            "perceptual_seed": self.perceptual_seed,
            "perceptual_hash": self.perceptual_hash,
        }

    def load_state_dict(self, d: dict):
        self.generator.load_state_dict(d["generator"])
        self.encoder.load_state_dict(d["encoder"])
        self.discriminator.load_state_dict(d["discriminator"])
        if d["perceptual_hash"] != self.perceptual_hash:
            raise ValueError("perceptual extractor hash mismatch; checkpoints "
                             "reference the extractor by content hash")


def composite_torch(image, stamp, mask):
    return image * (1.0 - mask) + stamp * mask


def texture_train_step(bundle: TextureGanBundle, batch: dict, opt_g, opt_d,
                       lambdas: dict | None = None,
                       use_fm: bool = True, use_perceptual: bool = True,
                       use_bicycle: bool = True, use_noise: bool = True,
                       mask_source: str = "ground_truth", mask_bundle=None,
                       joint: bool = False,
                       generator: torch.Generator | None = None) -> TextureLossBreakdown:
    """One alternating D/G update over both latent branches.

    Random branch: z ~ N(0, I) fills the mask-cut image, giving the free
    sample and its latent-reconstruction constraint. Encoded branch: the real
    foreground is encoded (reparametrized), regenerated, and anchors the
    feature-matching / reconstruction / KL / perceptual terms. Each image is
    paired with the mask that produced it when fed to the discriminator.
    Disabling the bicycle cycle removes the latent-reconstruction term (the
    z -> image -> z cycle); the encoded branch and its KL stay in place.
    """
    lambdas = dict(DEFAULT_TEXTURE_LAMBDAS if lambdas is None else lambdas)
    image = batch["image"]
    m = batch["mask"]
    i_m = batch["image_maskcut"]
    s_real = batch["foreground"]
    n = image.shape[0]

    if mask_source == "generated":
        if mask_bundle is None:
            raise ValueError("mask_source='generated' needs a mask bundle")
        z_m = torch.randn(n, mask_bundle.latent_dim, device=image.device,
                          generator=generator)
        m_gen, _ = mask_bundle.forward_generator(batch["image_boxcut"], z_m,
                                                 batch["bbox_vec"])
        # joint fine-tuning lets Eq-7 gradients reach the mask generator
        m_rand = m_gen if joint else m_gen.detach()
        i_rand = image * (1.0 - m_rand)
    elif mask_source == "ground_truth":
        m_rand, i_rand = m, i_m
    else:
        raise ValueError(f"unknown mask_source {mask_source!r}")

    z_random = torch.randn(n, bundle.latent_dim, device=image.device,
                           dtype=image.dtype, generator=generator)
    eps = torch.randn(n, bundle.latent_dim, device=image.device,
                      dtype=image.dtype, generator=generator)

    def draw_noise():
        if not use_noise:
            return None
        return [torch.randn(n, c, h, w, device=image.device, dtype=image.dtype,
                            generator=generator)
                for c, h, w in bundle.generator.noise_shapes(*image.shape[2:])]

    # random-latent branch
    s_hat = bundle.generator(i_rand, z_random, noise=draw_noise(), use_noise=use_noise)
    i_s_hat = composite_torch(image, s_hat, m_rand)
    # encoded-latent branch
    mu, logvar, z_enc = bundle.encode(s_real, eps=eps)
    s_hat_enc = bundle.generator(i_m, z_enc, noise=draw_noise(), use_noise=use_noise)
    i_s_hat_enc = composite_torch(image, s_hat_enc, m)

    # --- discriminator update (everything generated is detached here,
    # including a live generated mask in joint mode)
    real_scores, _ = bundle.discriminator(bundle.d_input(image, m))
    fake_scores_a, _ = bundle.discriminator(
        bundle.d_input(i_s_hat.detach(), m_rand.detach()))
    fake_scores_b, _ = bundle.discriminator(bundle.d_input(i_s_hat_enc.detach(), m))
    d_loss = hinge_d_loss_two_fakes(real_scores, fake_scores_a, fake_scores_b)
    opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    opt_d.step()

    # --- generator update
    g_scores_a, _ = bundle.discriminator(bundle.d_input(i_s_hat, m_rand))
    g_scores_b, enc_fake_feats = bundle.discriminator(bundle.d_input(i_s_hat_enc, m))
    adv_g = hinge_g_loss_two_fakes(g_scores_a, g_scores_b)

    kl = kl_divergence(mu, logvar)
    if use_bicycle:
        mu_hat = bundle.encode_mean_detached(s_hat)
        rec = latent_reconstruction_loss(z_random, mu_hat)
    else:
        rec = None
    if use_fm:
        with torch.no_grad():
            _, real_feats = bundle.discriminator(bundle.d_input(image, m))
        fm = feature_matching_loss(enc_fake_feats, real_feats)
    else:
        fm = None
    per = perceptual_loss(bundle.perceptual, image, i_s_hat_enc) if use_perceptual else None
    irec = image_reconstruction_loss(i_s_hat_enc, image)

    g_loss = adv_g + lambdas["irec"] * irec + lambdas["kl"] * kl
    if use_bicycle:
        g_loss = g_loss + lambdas["rec"] * rec
    if use_fm:
        g_loss = g_loss + lambdas["fm"] * fm
    if use_perceptual:
        g_loss = g_loss + lambdas["per"] * per
    opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    opt_g.step()

    effective = dict(lambdas)
    if not use_bicycle:
        effective["rec"] = 0.0
    if not use_fm:
        effective["fm"] = 0.0
    if not use_perceptual:
        effective["per"] = 0.0
    breakdown = TextureLossBreakdown.build(
        adv_g=float(adv_g.item()), adv_d=float(d_loss.item()),
        rec=float(rec.item()) if use_bicycle else 0.0,
        kl=float(kl.item()),
        fm=float(fm.item()) if use_fm else 0.0,
        per=float(per.item()) if use_perceptual else 0.0,
        irec=float(irec.item()), lambdas=effective)
    for name, value in breakdown.to_dict().items():
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite texture loss {name}", breakdown)
    return breakdown
