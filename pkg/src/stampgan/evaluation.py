"""KID metric with the paired-subset protocol, count-best statistics, and the
copy-paste nearest-neighbour mask retrieval baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from stampgan.domain import EmptyMaskError, MaskTensor
from stampgan.networks import FeatureNet

KERNEL_DEGREE = 3


class InsufficientSamplesError(ValueError):
    pass


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """k(a, b) = (a.b / d + 1)^3 for all pairs of rows."""
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** KERNEL_DEGREE


def kid(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased squared MMD between two feature sets.

    Within-set terms exclude the diagonal; the cross term uses all pairs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError("feature sets must be 2-D with equal dimension")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise InsufficientSamplesError("KID needs at least 2 samples per set")
    kxx = polynomial_kernel(x, x)
    kyy = polynomial_kernel(y, y)
    kxy = polynomial_kernel(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


@dataclass
class KidReport:
    """Per-subset KID scores for one or more systems on shared subsets."""

    system_names: list[str]
    scores: list[list[float]]  # [system][subset]
    n_subsets: int
    subset_size: int
    seed: int
    mean: list[float] = field(default_factory=list)
    std: list[float] = field(default_factory=list)
    count_best: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.mean:
            self.mean = [float(np.mean(s)) for s in self.scores]
        if not self.std:
            self.std = [float(np.std(s, ddof=1)) if len(s) > 1 else 0.0
                        for s in self.scores]
        if not self.count_best:
            wins = np.zeros(len(self.scores))
            per_subset = np.asarray(self.scores)  # (systems, subsets)
            for j in range(per_subset.shape[1]):
                wins[int(np.argmin(per_subset[:, j]))] += 1  # ties: lowest index
            self.count_best = [float(w / per_subset.shape[1]) for w in wins]

    def to_dict(self) -> dict:
        return {
            "system_names": self.system_names, "scores": self.scores,
            "n_subsets": self.n_subsets, "subset_size": self.subset_size,
            "seed": self.seed, "mean": self.mean, "std": self.std,
            "count_best": self.count_best,
        }

    def save(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "KidReport":
        with open(path) as f:
            return cls(**json.load(f))


def subset_protocol(real_feats: np.ndarray, fake_feats_per_system: dict,
                    n_subsets: int = 50, subset_size: int = 50,
                    seed: int = 0) -> KidReport:
    """KID over random subsets, identical subset indices for every system."""
    real_feats = np.asarray(real_feats, dtype=np.float64)
    names = list(fake_feats_per_system.keys())
    fakes = [np.asarray(fake_feats_per_system[k], dtype=np.float64) for k in names]
    if not names:
        raise ValueError("need at least one system")
    n_fake = fakes[0].shape[0]
    if any(f.shape[0] != n_fake for f in fakes):
        raise ValueError("paired comparison needs equal fake-set sizes")
    if subset_size > min(real_feats.shape[0], n_fake):
        raise ValueError(f"subset_size {subset_size} exceeds a set size")
    if subset_size < 2:
        raise InsufficientSamplesError("subset_size must be >= 2")

    rng = np.random.default_rng(seed)
    scores = [[] for _ in names]
    # one index list per subset, shared by every system; the real set joins
    # the pairing when its size matches (then a system equal to the real
    # features wins every subset by construction)
    shared_real = real_feats.shape[0] == n_fake
    for _ in range(n_subsets):
        idx_fake = rng.choice(n_fake, size=subset_size, replace=False)
        idx_real = idx_fake if shared_real else rng.choice(
            real_feats.shape[0], size=subset_size, replace=False)
        for s, fake in enumerate(fakes):
            scores[s].append(kid(fake[idx_fake], real_feats[idx_real]))
    return KidReport(system_names=names, scores=scores, n_subsets=n_subsets,
                     subset_size=subset_size, seed=seed)


# ---------------------------------------------------------------------------
# feature extraction


def extract_features(images, backend: str = "surrogate", seed: int = 5150,
                     batch_size: int = 64, device: str = "cpu") -> np.ndarray:
    """Embed images (N, H, W, 3 in [-1, 1]) into fixed feature vectors.

    The surrogate backend is a seeded frozen conv stack with global average
    pooling: deterministic and dependency-free. The inception backend needs
    torchvision with downloadable weights.
    """
    if hasattr(images[0], "data"):
        arr = np.stack([im.data for im in images])
    else:
        arr = np.asarray(images, dtype=np.float64)
    if backend == "surrogate":
        net = FeatureNet(base=16, n_stages=3, seed=seed).to(device)

        def embed(x):
            return net(x).mean(dim=(2, 3))
    elif backend == "inception":
        net = _build_inception(device)

        def embed(x):
            x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear",
                                                align_corners=False)
            return net(x)
    else:
        raise ValueError(f"unknown feature backend {backend!r}")

    feats = []
    with torch.no_grad():
        for k in range(0, arr.shape[0], batch_size):
            chunk = torch.from_numpy(
                arr[k:k + batch_size].transpose(0, 3, 1, 2).copy()).float().to(device)
            feats.append(embed(chunk).cpu().double().numpy())
    return np.concatenate(feats, axis=0)


def _build_inception(device):
    from torchvision.models import inception_v3

    net = inception_v3(weights="DEFAULT")
    net.fc = torch.nn.Identity()
    net.eval()
    net.requires_grad_(False)
    return net.to(device)


# ---------------------------------------------------------------------------
# copy-paste baseline: nearest training mask by cosine similarity


def _tight_crop(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMaskError("cannot crop an empty mask")
    return mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def _resize_float(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    if arr.shape == (height, width):
        return arr.astype(np.float64)
    img = Image.fromarray(arr.astype(np.float32), mode="F")
    return np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64)


def nn_mask_retrieve(query: MaskTensor, corpus: list[MaskTensor]) -> int:
    """Index of the corpus mask most similar to the query.

    Every mask is tight-cropped and rescaled to the query crop's size before
    the cosine similarity, which normalizes object scale away. Ties resolve
    to the lowest index; an empty corpus mask simply never wins.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    q = _tight_crop(query.data)
    qh, qw = q.shape
    qflat = q.ravel()
    qnorm = np.linalg.norm(qflat)
    best_idx, best_sim = 0, -np.inf
    for idx, cand in enumerate(corpus):
        try:
            c = _tight_crop(cand.data)
        except EmptyMaskError:
            continue
        cflat = _resize_float(c, qh, qw).ravel()
        cnorm = np.linalg.norm(cflat)
        sim = float(qflat @ cflat / (qnorm * cnorm)) if cnorm > 0 else -1.0
        if sim > best_sim:
            best_idx, best_sim = idx, sim
    if best_sim == -np.inf:
        raise EmptyMaskError("all corpus masks are empty")
    return best_idx
