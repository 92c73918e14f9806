export type Bbox = [number, number, number, number]; // x1, y1, x2, y2 in [0, 1]

export type Axis = "shape" | "texture" | "both";

export type EditorMode = "stamp" | "retexture" | "insert";

export interface Latents {
  zMask: number[];
  zTexture: number[];
  noiseSeed: number;
}

export interface ResultHashes {
  mask: string;
  texture: string;
  composite: string;
}

export interface ModelInfo {
  model_id: string;
  label: string;
  checkpoint_hash: string;
  resolution: number;
  latent_dims: { mask: number; texture: number };
}

export interface StampRequest {
  model_id: string;
  image_b64: string;
  bbox: number[];
  z_mask?: number[] | null;
  z_texture?: number[] | null;
  noise_seed?: number | null;
}

export interface StampResponse {
  mask: string;
  texture: string;
  composite: string;
  latents: { z_mask: number[]; z_texture: number[]; noise_seed: number };
  session_id: string;
  model_hash: string;
}

export interface RetextureRequest {
  model_id: string;
  image_b64: string;
  mask_b64: string;
  z_texture?: number[] | null;
  noise_seed?: number | null;
}

export interface RetextureResponse {
  composite: string;
  latents: { z_texture: number[]; noise_seed: number };
  session_id: string;
  model_hash: string;
}

export interface InterpolateRequest {
  model_id: string;
  image_b64: string;
  bbox: number[];
  axis: "mask" | "texture";
  frames: number;
  z_mask_a?: number[] | null;
  z_mask_b?: number[] | null;
  z_texture_a?: number[] | null;
  z_texture_b?: number[] | null;
  noise_seed?: number | null;
}

export interface InterpolateFrame {
  alpha: number;
  composite: string;
  mask: string;
}

export interface InterpolateResponse {
  frames: InterpolateFrame[];
  alphas: number[];
  session_id: string;
  model_hash: string;
}

export interface GalleryEntry {
  id: string;
  modelId: string;
  bbox: Bbox;
  latents: Latents;
  hashes: ResultHashes;
  pinned: boolean;
}

export interface EditorSession {
  version: 1;
  mode: EditorMode;
  modelId: string | null;
  backgroundB64: string | null;
  bbox: Bbox | null;
  gallery: GalleryEntry[];
}
