"""Versioned checkpoint files for training stages and exported serving models.

A stage checkpoint carries network + optimizer + EMA + RNG state so training
resumes bit-for-bit. A serving model packs the final mask and texture bundles
together with their configs; the perceptual extractor is referenced by content
hash only.
"""

from __future__ import annotations

import hashlib
import json
import os

import torch

FORMAT_VERSION = 1

STAGE_KEYS = {"format_version", "kind", "epoch", "config", "config_hash",
              "dataset_hash", "bundle", "optimizers", "rng"}
MODEL_KEYS = {"format_version", "kind", "label", "resolution",
              "mask_latent_dim", "texture_latent_dim", "mask_config",
              "texture_config", "mask_state", "texture_state"}


class CheckpointError(ValueError):
    pass


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(config_dict, sort_keys=True).encode()).hexdigest()


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_stage_checkpoint(path: str, kind: str, epoch: int, config_dict: dict,
                          bundle_state: dict, optimizer_states: dict,
                          rng_state: dict, dataset_hash: str):
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "epoch": epoch,
        "config": config_dict,
        "config_hash": config_hash(config_dict),
        "dataset_hash": dataset_hash,
        "bundle": bundle_state,
        "optimizers": optimizer_states,
        "rng": rng_state,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save(payload, path)


def load_stage_checkpoint(path: str, expect_kind: str | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    if set(payload.keys()) != STAGE_KEYS:
        raise CheckpointError(f"{path}: unexpected checkpoint fields")
    if expect_kind is not None and payload["kind"] != expect_kind:
        raise CheckpointError(
            f"{path}: expected a {expect_kind} checkpoint, got {payload['kind']}")
    return payload


def export_model(mask_ckpt_path: str, texture_ckpt_path: str, out_path: str,
                 label: str) -> str:
    """Merge final stage checkpoints into one serving bundle file."""
    mask = load_stage_checkpoint(mask_ckpt_path, expect_kind="mask")
    texture = load_stage_checkpoint(texture_ckpt_path)
    if texture["kind"] not in ("texture", "joint"):
        raise CheckpointError("second checkpoint must be a texture or joint stage")
    if mask["config"]["image_size"] != texture["config"]["image_size"]:
        raise CheckpointError("mask and texture stages trained at different sizes")
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "label": label,
        "resolution": mask["config"]["image_size"],
        "mask_latent_dim": mask["config"]["mask_latent_dim"],
        "texture_latent_dim": texture["config"]["texture_latent_dim"],
        "mask_config": mask["config"],
        "texture_config": texture["config"],
        "mask_state": mask["bundle"],
        "texture_state": texture["bundle"],
    }
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    torch.save(payload, out_path)
    return out_path


def load_model_file(path: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported model format")
    if payload.get("kind") != "model" or set(payload.keys()) != MODEL_KEYS:
        raise CheckpointError(f"{path}: unexpected model fields")
    return payload


def model_manifest_entry(path: str) -> dict | None:
    """Manifest row for a model file, or None if incompatible."""
    try:
        payload = load_model_file(path)
    except (CheckpointError, RuntimeError, EOFError):
        return None
    return {
        "model_id": os.path.splitext(os.path.basename(path))[0],
        "label": payload["label"],
        "checkpoint_hash": file_hash(path),
        "resolution": payload["resolution"],
        "latent_dims": {"mask": payload["mask_latent_dim"],
                        "texture": payload["texture_latent_dim"]},
    }
