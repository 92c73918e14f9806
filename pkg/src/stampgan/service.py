"""HTTP inference service: stamp, retexture, latent interpolation, manifest.

Models are immutable once loaded; every generated byte is a deterministic
function of (model hash, request, latents, noise seed), so any stored session
replays exactly. One inference lane runs at a time, with a bounded wait queue
that answers 429 when full.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from stampgan.checkpoint import file_hash, load_model_file, model_manifest_entry
from stampgan.domain import (
    BoundingBox,
    ImageTensor,
    InvalidBoxError,
    LatentVector,
    MaskTensor,
    StampResult,
    binarize,
    composite,
    cutout,
)
from stampgan.trainer import TrainConfig, build_mask_bundle, build_texture_bundle


# ---------------------------------------------------------------------------
# wire encoding


def image_to_b64(image: ImageTensor) -> str:
    buf = io.BytesIO()
    Image.fromarray(image.to_uint8(), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def mask_to_b64(mask: MaskTensor) -> str:
    buf = io.BytesIO()
    Image.fromarray(mask.to_uint8(), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def image_from_b64(payload: str, size: int) -> ImageTensor:
    img = Image.open(io.BytesIO(base64.b64decode(payload))).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return ImageTensor.from_uint8(np.asarray(img))


def mask_from_b64(payload: str, size: int) -> MaskTensor:
    img = Image.open(io.BytesIO(base64.b64decode(payload))).convert("L")
    if img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return MaskTensor((np.asarray(img) > 127).astype(np.float64), binary=True)


def png_hash(b64_payload: str) -> str:
    return hashlib.sha256(base64.b64decode(b64_payload)).hexdigest()


# ---------------------------------------------------------------------------
# model registry


@dataclass
class LoadedModel:
    model_id: str
    label: str
    resolution: int
    checkpoint_hash: str
    mask_latent_dim: int
    texture_latent_dim: int
    mask_bundle: object
    texture_bundle: object


def load_model(path: str, device: str = "cpu") -> LoadedModel:
    payload = load_model_file(path)
    mask_cfg = TrainConfig.from_dict({**payload["mask_config"], "device": device})
    tex_cfg = TrainConfig.from_dict({**payload["texture_config"], "device": device})
    mask_bundle = build_mask_bundle(mask_cfg)
    mask_bundle.load_state_dict(payload["mask_state"])
    mask_bundle.eval_mode()
    texture_bundle = build_texture_bundle(tex_cfg)
    texture_bundle.load_state_dict(payload["texture_state"])
    texture_bundle.eval_mode()
    return LoadedModel(
        model_id=os.path.splitext(os.path.basename(path))[0],
        label=payload["label"], resolution=payload["resolution"],
        checkpoint_hash=file_hash(path),
        mask_latent_dim=payload["mask_latent_dim"],
        texture_latent_dim=payload["texture_latent_dim"],
        mask_bundle=mask_bundle, texture_bundle=texture_bundle)


# ---------------------------------------------------------------------------
# inference pipeline (pure given latents and seed)


def run_stamp(model: LoadedModel, background: ImageTensor, bbox_vec,
              z_mask: LatentVector, z_texture: LatentVector,
              noise_seed: int) -> StampResult:
    bbox = BoundingBox.from_vec(bbox_vec, background.height, background.width)
    soft = model.mask_bundle.generate(cutout(background, bbox.raster), z_mask, bbox)
    hard = binarize(soft)
    texture = model.texture_bundle.generate(cutout(background, hard), z_texture,
                                            noise_seed=noise_seed)
    return StampResult(background=background, mask=hard, texture=texture,
                       composite=composite(background, texture, hard),
                       z_mask=z_mask, z_texture=z_texture)


def run_retexture(model: LoadedModel, background: ImageTensor, mask: MaskTensor,
                  z_texture: LatentVector, noise_seed: int) -> ImageTensor:
    texture = model.texture_bundle.generate(cutout(background, mask), z_texture,
                                            noise_seed=noise_seed)
    return composite(background, texture, mask)


# ---------------------------------------------------------------------------
# session store (single sqlite file, content-addressed blobs)


class SessionStore:
    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        with self._conn() as conn:
            conn.execute("CREATE TABLE IF NOT EXISTS sessions ("
                         "session_id TEXT PRIMARY KEY, created_at TEXT, "
                         "endpoint TEXT, request_json TEXT, latents_json TEXT, "
                         "result_hashes TEXT)")
            conn.execute("CREATE TABLE IF NOT EXISTS blobs ("
                         "hash TEXT PRIMARY KEY, png BLOB)")

    def _conn(self):
        return sqlite3.connect(self.path)

    def record(self, endpoint: str, request: dict, latents: dict,
               images_b64: dict) -> str:
        hashes = {k: png_hash(v) for k, v in images_b64.items()}
        body = json.dumps({"endpoint": endpoint, "request": request,
                           "latents": latents}, sort_keys=True)
        session_id = hashlib.sha256(body.encode()).hexdigest()
        with self._lock, self._conn() as conn:
            for key, payload in images_b64.items():
                conn.execute("INSERT OR IGNORE INTO blobs VALUES (?, ?)",
                             (hashes[key], base64.b64decode(payload)))
            conn.execute(
                "INSERT OR REPLACE INTO sessions VALUES (?, ?, ?, ?, ?, ?)",
                (session_id, datetime.now(timezone.utc).isoformat(), endpoint,
                 json.dumps(request, sort_keys=True),
                 json.dumps(latents, sort_keys=True),
                 json.dumps(hashes, sort_keys=True)))
        return session_id

    def get(self, session_id: str) -> dict | None:
        with self._lock, self._conn() as conn:
            row = conn.execute("SELECT * FROM sessions WHERE session_id=?",
                               (session_id,)).fetchone()
        if row is None:
            return None
        return {"session_id": row[0], "created_at": row[1], "endpoint": row[2],
                "request": json.loads(row[3]), "latents": json.loads(row[4]),
                "result_hashes": json.loads(row[5])}


# ---------------------------------------------------------------------------
# request schemas


class StampBody(BaseModel):
    model_id: str
    image_b64: str
    bbox: list[float]
    z_mask: list[float] | None = None
    z_texture: list[float] | None = None
    noise_seed: int | None = None


class RetextureBody(BaseModel):
    model_id: str
    image_b64: str
    mask_b64: str
    z_texture: list[float] | None = None
    noise_seed: int | None = None


class InterpolateBody(BaseModel):
    model_id: str
    image_b64: str
    bbox: list[float]
    axis: str
    frames: int = 9
    z_mask_a: list[float] | None = None
    z_mask_b: list[float] | None = None
    z_texture_a: list[float] | None = None
    z_texture_b: list[float] | None = None
    noise_seed: int | None = None


def create_app(model_dir: str, device: str = "cpu", queue_size: int = 4,
               session_db: str | None = None, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="stampgan inference service")
    app.state.model_dir = model_dir
    app.state.device = device
    app.state.models: dict[str, LoadedModel] = {}
    app.state.loading: set[str] = set()
    app.state.load_lock = threading.Lock()
    app.state.queue = threading.BoundedSemaphore(queue_size)
    app.state.lane = threading.Lock()  # one inference execution at a time
    app.state.sessions = SessionStore(
        session_db or os.path.join(model_dir, "sessions.db"))

    def model_paths() -> dict[str, str]:
        paths = {}
        if os.path.isdir(model_dir):
            for name in sorted(os.listdir(model_dir)):
                if name.endswith(".pt"):
                    paths[os.path.splitext(name)[0]] = os.path.join(model_dir, name)
        return paths

    def get_model(model_id: str) -> LoadedModel:
        if model_id in app.state.models:
            return app.state.models[model_id]
        path = model_paths().get(model_id)
        if path is None or model_manifest_entry(path) is None:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")
        with app.state.load_lock:
            if model_id in app.state.loading:
                raise HTTPException(status_code=503, detail="model loading")
            app.state.loading.add(model_id)
        try:
            model = load_model(path, device=app.state.device)
            app.state.models[model_id] = model
        finally:
            app.state.loading.discard(model_id)
        return model

    def lane():
        if not app.state.queue.acquire(blocking=False):
            raise HTTPException(status_code=429, detail="inference queue full")
        app.state.lane.acquire()

    def release():
        app.state.lane.release()
        app.state.queue.release()

    def latent_or_sample(values, dim, rng) -> LatentVector:
        if values is None:
            return LatentVector(rng.standard_normal(dim))
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise HTTPException(status_code=422,
                                detail=f"latent must have dim {dim}")
        return LatentVector(arr)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "models": sorted(model_paths().keys())}

    @app.get("/v1/models")
    def models():
        entries = []
        for path in model_paths().values():
            entry = model_manifest_entry(path)
            if entry is not None:
                entries.append(entry)
        return {"models": entries}

    @app.post("/v1/stamp")
    def stamp(body: StampBody):
        model = get_model(body.model_id)
        rng = np.random.default_rng()
        z_mask = latent_or_sample(body.z_mask, model.mask_latent_dim, rng)
        z_texture = latent_or_sample(body.z_texture, model.texture_latent_dim, rng)
        noise_seed = int(rng.integers(0, 2 ** 31)) if body.noise_seed is None \
            else int(body.noise_seed)
        background = image_from_b64(body.image_b64, model.resolution)
        lane()
        try:
            result = run_stamp(model, background, tuple(body.bbox), z_mask,
                               z_texture, noise_seed)
        except InvalidBoxError as err:
            raise HTTPException(status_code=422, detail=str(err))
        finally:
            release()
        images = {"mask": mask_to_b64(result.mask),
                  "texture": image_to_b64(result.texture),
                  "composite": image_to_b64(result.composite)}
        latents = {"z_mask": list(map(float, z_mask.values)),
                   "z_texture": list(map(float, z_texture.values)),
                   "noise_seed": noise_seed}
        session_id = app.state.sessions.record(
            "stamp", body.model_dump(exclude={"image_b64"}), latents, images)
        return {**images, "latents": latents, "session_id": session_id,
                "model_hash": model.checkpoint_hash}

    @app.post("/v1/retexture")
    def retexture(body: RetextureBody):
        model = get_model(body.model_id)
        rng = np.random.default_rng()
        z_texture = latent_or_sample(body.z_texture, model.texture_latent_dim, rng)
        noise_seed = int(rng.integers(0, 2 ** 31)) if body.noise_seed is None \
            else int(body.noise_seed)
        background = image_from_b64(body.image_b64, model.resolution)
        raw_mask = Image.open(io.BytesIO(base64.b64decode(body.mask_b64)))
        if raw_mask.size != (model.resolution, model.resolution):
            raise HTTPException(status_code=422,
                                detail="mask size does not match the image")
        mask = mask_from_b64(body.mask_b64, model.resolution)
        if not mask.data.any():
            raise HTTPException(status_code=422, detail="mask is empty")
        lane()
        try:
            out = run_retexture(model, background, mask, z_texture, noise_seed)
        finally:
            release()
        images = {"composite": image_to_b64(out)}
        latents = {"z_texture": list(map(float, z_texture.values)),
                   "noise_seed": noise_seed}
        session_id = app.state.sessions.record(
            "retexture", body.model_dump(exclude={"image_b64", "mask_b64"}),
            latents, images)
        return {**images, "latents": latents, "session_id": session_id,
                "model_hash": model.checkpoint_hash}

    @app.post("/v1/interpolate")
    def interpolate(body: InterpolateBody):
        if body.axis not in ("mask", "texture"):
            raise HTTPException(status_code=422,
                                detail="axis must be 'mask' or 'texture'")
        if body.frames < 2:
            raise HTTPException(status_code=422, detail="frames must be >= 2")
        model = get_model(body.model_id)
        rng = np.random.default_rng()
        noise_seed = int(rng.integers(0, 2 ** 31)) if body.noise_seed is None \
            else int(body.noise_seed)
        if body.axis == "mask":
            za = latent_or_sample(body.z_mask_a, model.mask_latent_dim, rng)
            zb = latent_or_sample(body.z_mask_b, model.mask_latent_dim, rng)
            z_fixed = latent_or_sample(body.z_texture_a, model.texture_latent_dim, rng)
        else:
            za = latent_or_sample(body.z_texture_a, model.texture_latent_dim, rng)
            zb = latent_or_sample(body.z_texture_b, model.texture_latent_dim, rng)
            z_fixed = latent_or_sample(body.z_mask_a, model.mask_latent_dim, rng)
        background = image_from_b64(body.image_b64, model.resolution)
        alphas = [k / (body.frames - 1) for k in range(body.frames)]
        frames = []
        lane()
        try:
            for alpha in alphas:
                z = LatentVector((1.0 - alpha) * za.values + alpha * zb.values)
                if body.axis == "mask":
                    result = run_stamp(model, background, tuple(body.bbox), z,
                                       z_fixed, noise_seed)
                else:
                    result = run_stamp(model, background, tuple(body.bbox),
                                       z_fixed, z, noise_seed)
                frames.append({"alpha": alpha,
                               "composite": image_to_b64(result.composite),
                               "mask": mask_to_b64(result.mask)})
        except InvalidBoxError as err:
            raise HTTPException(status_code=422, detail=str(err))
        finally:
            release()
        latents = {"axis": body.axis, "noise_seed": noise_seed,
                   "za": list(map(float, za.values)),
                   "zb": list(map(float, zb.values)),
                   "z_fixed": list(map(float, z_fixed.values))}
        session_id = app.state.sessions.record(
            "interpolate", body.model_dump(exclude={"image_b64"}), latents,
            {f"frame{k:03d}": f["composite"] for k, f in enumerate(frames)})
        return {"frames": frames, "alphas": alphas, "latents": latents,
                "session_id": session_id, "model_hash": model.checkpoint_hash}

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
