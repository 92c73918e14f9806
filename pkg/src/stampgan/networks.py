"""Network building blocks: AdaIN machinery, generators, discriminators.

Generators keep instance normalization in all hidden layers. The mask
generator is conditioned purely through AdaIN affine parameters predicted by
an MLP from (bbox vector, latent); its spatial input is only the cut-out
background. The texture generator instead receives the latent tiled onto the
bottleneck and injects per-stage Gaussian noise in the decoder.
"""

from __future__ import annotations

import hashlib
import math

import torch
import torch.nn.functional as F
from torch import nn


class AdaIN2d(nn.Module):
    """Instance norm whose affine parameters are assigned per batch."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = None  # (B, C) gamma
        self.bias = None    # (B, C) beta

    def forward(self, x):
        if self.weight is None or self.bias is None:
            raise RuntimeError("AdaIN parameters have not been assigned")
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        xn = (x - mean) / torch.sqrt(var + self.eps)
        return xn * (1.0 + self.weight[:, :, None, None]) + self.bias[:, :, None, None]


def num_adain_params(module: nn.Module) -> int:
    return sum(2 * m.channels for m in module.modules() if isinstance(m, AdaIN2d))


def assign_adain_params(module: nn.Module, params: torch.Tensor):
    """Slice a (B, total) parameter vector into every AdaIN layer in order."""
    pos = 0
    for m in module.modules():
        if isinstance(m, AdaIN2d):
            m.weight = params[:, pos:pos + m.channels]
            m.bias = params[:, pos + m.channels:pos + 2 * m.channels]
            pos += 2 * m.channels
    if pos != params.shape[1]:
        raise ValueError(f"AdaIN parameter count mismatch: consumed {pos}, got {params.shape[1]}")


class AdaINResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, 1, pad)
        self.norm1 = AdaIN2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, kernel, 1, pad)
        self.norm2 = AdaIN2d(channels)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, 1, pad)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, kernel, 1, pad)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class NoiseInjection(nn.Module):
    """Adds per-channel scaled unit Gaussian noise (decoder stochasticity)."""

    def __init__(self, channels: int, init: float = 0.1):
        super().__init__()
        self.weight = nn.Parameter(torch.full((1, channels, 1, 1), init))

    def forward(self, x, noise):
        return x + self.weight * noise


def _stride2_pad(kernel: int) -> int:
    """Padding that exactly halves even input sizes for a stride-2 conv."""
    return max((kernel - 2 + kernel % 2) // 2, 0)


def _down_block(cin, cout, kernel):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, 2, _stride2_pad(kernel)),
        nn.InstanceNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _up_conv(cin, cout, kernel):
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(cin, cout, kernel, 1, kernel // 2),
        nn.InstanceNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class MaskGenerator(nn.Module):
    """Cut-out background image -> soft object mask, AdaIN-conditioned."""

    def __init__(self, base: int = 16, n_down: int = 3, n_res: int = 4,
                 stem_kernel: int = 7, down_kernel: int = 4, res_kernel: int = 3,
                 up_kernel: int = 3):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, base, stem_kernel, 1, stem_kernel // 2),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
        )
        downs, c = [], base
        for _ in range(n_down):
            downs.append(_down_block(c, c * 2, down_kernel))
            c *= 2
        self.downs = nn.Sequential(*downs)
        self.res = nn.Sequential(*[AdaINResBlock(c, res_kernel) for _ in range(n_res)])
        ups = []
        for _ in range(n_down):
            ups.append(_up_conv(c, c // 2, up_kernel))
            c //= 2
        self.ups = nn.Sequential(*ups)
        self.head = nn.Conv2d(c, 1, stem_kernel, 1, stem_kernel // 2)

    @property
    def adain_param_count(self) -> int:
        return num_adain_params(self)

    def forward(self, image_boxcut, adain_params):
        assign_adain_params(self, adain_params)
        h = self.stem(image_boxcut)
        h = self.downs(h)
        h = self.res(h)
        h = self.ups(h)
        return torch.sigmoid(self.head(h))


class StyleMlp(nn.Module):
    """(bbox vec, latent) -> AdaIN affine parameter vector."""

    def __init__(self, latent_dim: int, out_dim: int, hidden: int = 256):
        super().__init__()
        self.latent_dim = latent_dim
        self.net = nn.Sequential(
            nn.Linear(4 + latent_dim, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, out_dim),
        )

    def forward(self, bbox_vec, z):
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[1]} != configured {self.latent_dim}")
        return self.net(torch.cat([bbox_vec, z], dim=1))


class StyleMlpDecoder(nn.Module):
    """AdaIN parameter vector -> reconstructed latent."""

    def __init__(self, in_dim: int, latent_dim: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, latent_dim),
        )

    def forward(self, params):
        return self.net(params)


class MaskLatentProbe(nn.Module):
    """Generated mask image -> reconstructed latent (mrecon ablation path)."""

    def __init__(self, latent_dim: int, base: int = 8, n_down: int = 3, kernel: int = 4):
        super().__init__()
        pad = _stride2_pad(kernel)
        layers, c = [nn.Conv2d(1, base, kernel, 2, pad),
                     nn.LeakyReLU(0.2, inplace=True)], base
        for _ in range(n_down - 1):
            layers += [nn.Conv2d(c, c * 2, kernel, 2, pad),
                       nn.LeakyReLU(0.2, inplace=True)]
            c *= 2
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Linear(c, latent_dim)

    def forward(self, mask):
        h = self.conv(mask).mean(dim=(2, 3))
        return self.fc(h)


class Discriminator(nn.Module):
    """Conv stack exposing per-layer features plus patch realism scores.

    Scores come back as (B, patches); the hinge losses average over them, so
    every spatial patch carries its own margin (PatchGAN-style), which is what
    localizes mass inside the conditioning box.
    """

    def __init__(self, in_channels: int, base: int = 32, n_layers: int = 3,
                 kernel: int = 4):
        super().__init__()
        pad = _stride2_pad(kernel)
        blocks, c = [], in_channels
        cout = base
        for _ in range(n_layers):
            blocks.append(nn.Sequential(
                nn.Conv2d(c, cout, kernel, 2, pad),
                nn.LeakyReLU(0.2, inplace=True),
            ))
            c, cout = cout, cout * 2
        self.blocks = nn.ModuleList(blocks)
        self.score = nn.Conv2d(c, 1, 3, 1, 1)

    def forward(self, x):
        feats = []
        h = x
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        score = self.score(h).flatten(1)
        return score, feats


class TextureGenerator(nn.Module):
    """Mask-cut image + latent -> full-frame texture image in [-1, 1].

    The latent is tiled and fused at the bottleneck. Each decoder stage adds
    unit Gaussian noise scaled by a learned per-channel weight; in training
    mode the noise is resampled per call, in eval mode it comes from a seeded
    generator so outputs are reproducible.
    """

    def __init__(self, latent_dim: int = 8, base: int = 16, n_down: int = 3,
                 n_res: int = 4, stem_kernel: int = 7, down_kernel: int = 4,
                 res_kernel: int = 3, up_kernel: int = 3, eval_noise_seed: int = 0):
        super().__init__()
        self.latent_dim = latent_dim
        self.eval_noise_seed = eval_noise_seed
        self.stem = nn.Sequential(
            nn.Conv2d(3, base, stem_kernel, 1, stem_kernel // 2),
            nn.InstanceNorm2d(base),
            nn.ReLU(inplace=True),
        )
        downs, c = [], base
        for _ in range(n_down):
            downs.append(_down_block(c, c * 2, down_kernel))
            c *= 2
        self.downs = nn.Sequential(*downs)
        self.fuse = nn.Conv2d(c + latent_dim, c, 1)
        self.res = nn.Sequential(*[ResBlock(c, res_kernel) for _ in range(n_res)])
        self.up_convs = nn.ModuleList()
        self.noises = nn.ModuleList()
        for _ in range(n_down):
            self.up_convs.append(_up_conv(c, c // 2, up_kernel))
            self.noises.append(NoiseInjection(c // 2))
            c //= 2
        self.head = nn.Conv2d(c, 3, stem_kernel, 1, stem_kernel // 2)

    def noise_shapes(self, height: int, width: int) -> list[tuple[int, int, int]]:
        """Per-decoder-stage (C, H, W) noise shapes for a given input size."""
        n_down = len(self.up_convs)
        shapes = []
        h, w = height // 2 ** n_down, width // 2 ** n_down
        c = self.fuse.out_channels
        for _ in range(n_down):
            h, w, c = h * 2, w * 2, c // 2
            shapes.append((c, h, w))
        return shapes

    def _draw_noise(self, batch, height, width, device, dtype,
                    generator: torch.Generator | None):
        noise = []
        for c, h, w in self.noise_shapes(height, width):
            noise.append(torch.randn(batch, c, h, w, device=device, dtype=dtype,
                                     generator=generator))
        return noise

    def forward(self, image_maskcut, z, noise=None, noise_seed: int | None = None,
                use_noise: bool = True):
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[1]} != configured {self.latent_dim}")
        b, _, height, width = image_maskcut.shape
        if use_noise and noise is None:
            if noise_seed is None and self.training:
                gen = None  # fresh noise, global RNG
            else:
                seed = self.eval_noise_seed if noise_seed is None else noise_seed
                gen = torch.Generator(device=image_maskcut.device).manual_seed(int(seed))
            noise = self._draw_noise(b, height, width, image_maskcut.device,
                                     image_maskcut.dtype, gen)
        h = self.stem(image_maskcut)
        h = self.downs(h)
        tile = z[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        h = self.fuse(torch.cat([h, tile], dim=1))
        h = self.res(h)
        for k, up in enumerate(self.up_convs):
            h = up(h)
            if use_noise:
                h = self.noises[k](h, noise[k])
        return torch.tanh(self.head(h))


class TextureEncoder(nn.Module):
    """Foreground image -> (mu, logvar) for the reparametrized texture latent."""

    LOGVAR_RANGE = 10.0

    def __init__(self, latent_dim: int = 8, base: int = 16, n_down: int = 4,
                 kernel: int = 4):
        super().__init__()
        self.latent_dim = latent_dim
        pad = _stride2_pad(kernel)
        layers, c = [nn.Conv2d(3, base, kernel, 2, pad), nn.ReLU(inplace=True)], base
        for _ in range(n_down - 1):
            layers += [nn.Conv2d(c, c * 2, kernel, 2, pad), nn.ReLU(inplace=True)]
            c *= 2
        self.conv = nn.Sequential(*layers)
        self.fc_mu = nn.Linear(c, latent_dim)
        self.fc_logvar = nn.Linear(c, latent_dim)

    def forward(self, foreground):
        h = self.conv(foreground).mean(dim=(2, 3))
        mu = self.fc_mu(h)
        logvar = self.fc_logvar(h).clamp(-self.LOGVAR_RANGE, self.LOGVAR_RANGE)
        return mu, logvar


class FeatureNet(nn.Module):
    """Fixed conv feature extractor with deterministic seeded weights.

    Stands in for a pretrained backbone where downloading weights is not an
    option (unit tests, desk-scale runs). Returns the third-stage activation.
    """

    def __init__(self, base: int = 16, n_stages: int = 3, seed: int = 1234,
                 kernel: int = 3):
        super().__init__()
        layers, c = [], 3
        cout = base
        for _ in range(n_stages):
            layers += [nn.Conv2d(c, cout, kernel, 2, kernel // 2), nn.ReLU(inplace=True)]
            c, cout = cout, cout * 2
        self.features = nn.Sequential(*layers)
        init_seeded(self, seed)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):  # noqa: ARG002 - frozen forever
        return super().train(False)

    def forward(self, image):
        return self.features(image)


def init_seeded(module: nn.Module, seed: int):
    """Deterministic He-style init from a private generator (frozen nets)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.dim() == 4 else 1)
                std = math.sqrt(2.0 / max(fan_in, 1))
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()


def init_gan_weights(module: nn.Module, std: float = 0.02):
    """Conventional N(0, 0.02) init for GAN convs and linears."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def params_hash(module: nn.Module) -> str:
    """Content hash of all parameters (frozen extractors are referenced
    by hash in checkpoints, never embedded)."""
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_vgg16_extractor():
    """Pretrained VGG16 features up to the third-stage final activation
    (relu3_3). Needs torchvision plus downloadable weights."""
    from torchvision.models import vgg16

    net = vgg16(weights="DEFAULT").features[:16]
    net.requires_grad_(False)
    net.eval()
    return net
