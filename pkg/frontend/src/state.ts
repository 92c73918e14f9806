import { hashB64Png } from "./api.js";
import { isValidBbox } from "./bbox.js";
import { sampleLatent, sampleNoiseSeed, type UniformSource } from "./latents.js";
import type {
  Axis,
  Bbox,
  EditorMode,
  EditorSession,
  GalleryEntry,
  InterpolateRequest,
  StampRequest,
  StampResponse,
} from "./types.js";

/** Editor state: background, active box, and a gallery of results stored as
 *  latents + content hashes (never pixels), so every entry replays exactly. */
export class EditorState {
  mode: EditorMode = "stamp";
  modelId: string | null = null;
  backgroundB64: string | null = null;
  private activeBbox: Bbox | null = null;
  gallery: GalleryEntry[] = [];

  get bbox(): Bbox | null {
    return this.activeBbox;
  }

  setBbox(box: Bbox | null): void {
    if (box !== null && !isValidBbox(box)) {
      throw new Error(`invalid bbox ${JSON.stringify(box)}`);
    }
    this.activeBbox = box;
  }

  setMode(mode: EditorMode): void {
    this.mode = mode;
  }

  setBackground(b64: string): void {
    this.backgroundB64 = b64;
  }

  /** Request for a fresh stamp at the active box; missing latents are left
   *  for the server to sample (it echoes them back). */
  buildStampRequest(latents?: {
    zMask?: number[];
    zTexture?: number[];
    noiseSeed?: number;
  }): StampRequest {
    if (!this.modelId) throw new Error("no model selected");
    if (!this.backgroundB64) throw new Error("no background loaded");
    if (!this.activeBbox) throw new Error("no bounding box drawn");
    return {
      model_id: this.modelId,
      image_b64: this.backgroundB64,
      bbox: [...this.activeBbox],
      z_mask: latents?.zMask ?? null,
      z_texture: latents?.zTexture ?? null,
      noise_seed: latents?.noiseSeed ?? null,
    };
  }

  /** Resample one axis of an existing entry: the other axis latent is pinned
   *  from the entry, the chosen axis is drawn fresh. */
  resampleRequest(
    axis: Axis,
    from: GalleryEntry,
    dims: { mask: number; texture: number },
    uniform: UniformSource = Math.random,
  ): StampRequest {
    const zMask =
      axis === "texture" ? [...from.latents.zMask] : sampleLatent(dims.mask, uniform);
    const zTexture =
      axis === "shape" ? [...from.latents.zTexture] : sampleLatent(dims.texture, uniform);
    const noiseSeed =
      axis === "shape" ? from.latents.noiseSeed : sampleNoiseSeed(uniform);
    return {
      model_id: from.modelId,
      image_b64: this.requireBackground(),
      bbox: [...from.bbox],
      z_mask: zMask,
      z_texture: zTexture,
      noise_seed: noiseSeed,
    };
  }

  /** Exact replay of a stored entry from its latents alone. */
  replayRequest(entry: GalleryEntry): StampRequest {
    return {
      model_id: entry.modelId,
      image_b64: this.requireBackground(),
      bbox: [...entry.bbox],
      z_mask: [...entry.latents.zMask],
      z_texture: [...entry.latents.zTexture],
      noise_seed: entry.latents.noiseSeed,
    };
  }

  canInterpolate(a: GalleryEntry, b: GalleryEntry): boolean {
    return a.modelId === b.modelId;
  }

  interpolationRequest(
    a: GalleryEntry,
    b: GalleryEntry,
    axis: "mask" | "texture",
    frames: number,
  ): InterpolateRequest {
    if (!this.canInterpolate(a, b)) {
      throw new Error("cannot interpolate across different models");
    }
    const base = {
      model_id: a.modelId,
      image_b64: this.requireBackground(),
      bbox: [...a.bbox],
      axis,
      frames,
      noise_seed: a.latents.noiseSeed,
    };
    if (axis === "mask") {
      return {
        ...base,
        z_mask_a: [...a.latents.zMask],
        z_mask_b: [...b.latents.zMask],
        z_texture_a: [...a.latents.zTexture],
      };
    }
    return {
      ...base,
      z_texture_a: [...a.latents.zTexture],
      z_texture_b: [...b.latents.zTexture],
      z_mask_a: [...a.latents.zMask],
    };
  }

  async addResult(bbox: Bbox, response: StampResponse): Promise<GalleryEntry> {
    const entry: GalleryEntry = {
      id: response.session_id,
      modelId: this.requireModel(),
      bbox: [...bbox] as Bbox,
      latents: {
        zMask: [...response.latents.z_mask],
        zTexture: [...response.latents.z_texture],
        noiseSeed: response.latents.noise_seed,
      },
      hashes: {
        mask: await hashB64Png(response.mask),
        texture: await hashB64Png(response.texture),
        composite: await hashB64Png(response.composite),
      },
      pinned: false,
    };
    this.gallery.push(entry);
    return entry;
  }

  togglePin(id: string): void {
    const entry = this.gallery.find((e) => e.id === id);
    if (entry) entry.pinned = !entry.pinned;
  }

  remove(id: string): void {
    this.gallery = this.gallery.filter((e) => e.id !== id || e.pinned);
  }

  serialize(): string {
    const session: EditorSession = {
      version: 1,
      mode: this.mode,
      modelId: this.modelId,
      backgroundB64: this.backgroundB64,
      bbox: this.activeBbox,
      gallery: this.gallery,
    };
    return JSON.stringify(session);
  }

  static deserialize(payload: string): EditorState {
    const session = JSON.parse(payload) as EditorSession;
    if (session.version !== 1) throw new Error("unknown session version");
    const state = new EditorState();
    state.mode = session.mode;
    state.modelId = session.modelId;
    state.backgroundB64 = session.backgroundB64;
    if (session.bbox !== null && !isValidBbox(session.bbox)) {
      throw new Error("serialized session has an invalid bbox");
    }
    state.activeBbox = session.bbox;
    state.gallery = session.gallery.map((e) => ({ ...e, bbox: [...e.bbox] as Bbox }));
    return state;
  }

  private requireBackground(): string {
    if (!this.backgroundB64) throw new Error("no background loaded");
    return this.backgroundB64;
  }

  private requireModel(): string {
    if (!this.modelId) throw new Error("no model selected");
    return this.modelId;
  }
}
