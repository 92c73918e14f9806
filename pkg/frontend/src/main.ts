import { StampClient, ServiceError } from "./api.js";
import { dragToBbox } from "./bbox.js";
import { MaskBrush, b64ToImage, drawBackground, drawBboxOverlay, fileToSquareB64 } from "./canvas.js";
import { EditorState } from "./state.js";
import type { Axis, EditorMode, GalleryEntry, ModelInfo } from "./types.js";

const client = new StampClient("");
const state = new EditorState();

const canvas = document.getElementById("editor-canvas") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const modelSelect = document.getElementById("model-select") as HTMLSelectElement;
const fileInput = document.getElementById("background-input") as HTMLInputElement;
const galleryEl = document.getElementById("gallery")!;
const statusEl = document.getElementById("status")!;
const stripEl = document.getElementById("interp-strip")!;

let models: ModelInfo[] = [];
let brush: MaskBrush | null = null;
let backgroundImage: HTMLImageElement | null = null;
let selectedEntryId: string | null = null;
let dragStart: [number, number] | null = null;

function activeModel(): ModelInfo | null {
  return models.find((m) => m.model_id === state.modelId) ?? null;
}

function setStatus(text: string, isError = false): void {
  statusEl.textContent = text;
  statusEl.className = isError ? "error" : "";
}

function redraw(): void {
  if (backgroundImage) drawBackground(ctx, backgroundImage);
  if (state.mode === "stamp" && state.bbox) drawBboxOverlay(ctx, state.bbox);
  if (state.mode !== "stamp" && brush) brush.overlayOn(ctx);
}

async function refreshModels(): Promise<void> {
  try {
    models = await client.models();
  } catch (err) {
    setStatus(`service offline: ${String(err)} (retry with Reload Models)`, true);
    return;
  }
  modelSelect.innerHTML = "";
  for (const m of models) {
    const opt = document.createElement("option");
    opt.value = m.model_id;
    opt.textContent = `${m.label} (${m.resolution}px)`;
    modelSelect.appendChild(opt);
  }
  if (models.length > 0) {
    state.modelId = models[0].model_id;
    modelSelect.value = state.modelId;
  }
}

async function renderGallery(): Promise<void> {
  galleryEl.innerHTML = "";
  for (const entry of state.gallery) {
    const card = document.createElement("div");
    card.className = "card" + (entry.id === selectedEntryId ? " selected" : "")
      + (entry.pinned ? " pinned" : "");
    const img = document.createElement("img");
    img.width = 96;
    img.height = 96;
    img.title = entry.id.slice(0, 12);
    // thumbnails are refetched from latents, never stored
    replayThumbnail(entry, img);
    card.appendChild(img);
    const pin = document.createElement("button");
    pin.textContent = entry.pinned ? "unpin" : "pin";
    pin.onclick = () => {
      state.togglePin(entry.id);
      renderGallery();
    };
    card.appendChild(pin);
    img.onclick = () => {
      selectedEntryId = entry.id;
      renderGallery();
    };
    galleryEl.appendChild(card);
  }
}

async function replayThumbnail(entry: GalleryEntry, img: HTMLImageElement): Promise<void> {
  try {
    const res = await client.stamp(state.replayRequest(entry));
    img.src = `data:image/png;base64,${res.composite}`;
  } catch (err) {
    img.alt = "replay failed";
  }
}

async function generate(latents?: {
  zMask?: number[];
  zTexture?: number[];
  noiseSeed?: number;
}): Promise<void> {
  const model = activeModel();
  if (!model) return setStatus("no model loaded", true);
  try {
    setStatus("generating...");
    const req = state.buildStampRequest(latents);
    const res = await client.stamp(req);
    const entry = await state.addResult(state.bbox!, res);
    selectedEntryId = entry.id;
    setStatus(`ok (session ${res.session_id.slice(0, 12)})`);
    renderGallery();
  } catch (err) {
    if (err instanceof ServiceError) setStatus(`service error: ${err.message}`, true);
    else setStatus(String(err), true);
  }
}

async function resample(axis: Axis): Promise<void> {
  const model = activeModel();
  const entry = state.gallery.find((e) => e.id === selectedEntryId);
  if (!model || !entry) return setStatus("select a gallery entry first", true);
  try {
    const req = state.resampleRequest(axis, entry, {
      mask: model.latent_dims.mask,
      texture: model.latent_dims.texture,
    });
    const res = await client.stamp(req);
    const added = await state.addResult(entry.bbox, res);
    selectedEntryId = added.id;
    renderGallery();
    setStatus(`resampled ${axis}`);
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function interpolate(axis: "mask" | "texture", frames: number): Promise<void> {
  const picked = state.gallery.filter((e) => e.pinned);
  if (picked.length !== 2) return setStatus("pin exactly two entries", true);
  const [a, b] = picked;
  if (!state.canInterpolate(a, b)) {
    return setStatus("interpolation needs entries from one model", true);
  }
  try {
    const res = await client.interpolate(state.interpolationRequest(a, b, axis, frames));
    stripEl.innerHTML = "";
    for (const frame of res.frames) {
      const img = document.createElement("img");
      img.width = 72;
      img.height = 72;
      img.src = `data:image/png;base64,${frame.composite}`;
      img.title = `alpha=${frame.alpha.toFixed(3)}`;
      stripEl.appendChild(img);
    }
    setStatus(`interpolated ${axis}, ${frames} frames`);
  } catch (err) {
    setStatus(String(err), true);
  }
}

async function retexture(): Promise<void> {
  const model = activeModel();
  if (!model || !state.backgroundB64) return setStatus("load a background first", true);
  if (!brush || brush.isEmpty()) return setStatus("paint a mask first", true);
  try {
    const res = await client.retexture({
      model_id: model.model_id,
      image_b64: state.backgroundB64,
      mask_b64: brush.toMaskB64(),
    });
    const img = document.createElement("img");
    img.width = 96;
    img.height = 96;
    img.src = `data:image/png;base64,${res.composite}`;
    galleryEl.appendChild(img);
    setStatus(`retextured (session ${res.session_id.slice(0, 12)})`);
  } catch (err) {
    setStatus(String(err), true);
  }
}

// --- event wiring

canvas.addEventListener("pointerdown", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * canvas.width;
  const y = ((ev.clientY - rect.top) / rect.height) * canvas.height;
  if (state.mode === "stamp") {
    dragStart = [x, y];
  } else if (brush) {
    brush.paint(x / canvas.width, y / canvas.height, ev.shiftKey);
    redraw();
  }
});

canvas.addEventListener("pointermove", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * canvas.width;
  const y = ((ev.clientY - rect.top) / rect.height) * canvas.height;
  if (state.mode === "stamp" && dragStart) {
    redraw();
    const live = dragToBbox(dragStart[0], dragStart[1], x, y, canvas.width, canvas.height, 0);
    if (live) drawBboxOverlay(ctx, live);
  } else if (state.mode !== "stamp" && brush && ev.buttons === 1) {
    brush.paint(x / canvas.width, y / canvas.height, ev.shiftKey);
    redraw();
  }
});

canvas.addEventListener("pointerup", (ev) => {
  if (state.mode !== "stamp" || !dragStart) return;
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * canvas.width;
  const y = ((ev.clientY - rect.top) / rect.height) * canvas.height;
  const box = dragToBbox(dragStart[0], dragStart[1], x, y, canvas.width, canvas.height);
  dragStart = null;
  if (box === null) {
    setStatus("box too small, rejected");
    redraw();
    return;
  }
  state.setBbox(box);
  redraw();
});

fileInput.addEventListener("change", async () => {
  const model = activeModel();
  const file = fileInput.files?.[0];
  if (!file || !model) return;
  const b64 = await fileToSquareB64(file, model.resolution);
  state.setBackground(b64);
  backgroundImage = await b64ToImage(b64);
  brush = new MaskBrush(model.resolution);
  redraw();
});

modelSelect.addEventListener("change", () => {
  state.modelId = modelSelect.value;
});

for (const mode of ["stamp", "retexture", "insert"] as EditorMode[]) {
  document.getElementById(`mode-${mode}`)?.addEventListener("click", () => {
    state.setMode(mode);
    setStatus(`mode: ${mode}`);
    redraw();
  });
}

document.getElementById("btn-generate")?.addEventListener("click", () => generate());
document.getElementById("btn-resample-shape")?.addEventListener("click", () => resample("shape"));
document.getElementById("btn-resample-texture")?.addEventListener("click", () => resample("texture"));
document.getElementById("btn-resample-both")?.addEventListener("click", () => resample("both"));
document.getElementById("btn-retexture")?.addEventListener("click", () => retexture());
document.getElementById("btn-interp-mask")?.addEventListener("click", () => interpolate("mask", 9));
document.getElementById("btn-interp-texture")?.addEventListener("click", () => interpolate("texture", 9));
document.getElementById("btn-reload-models")?.addEventListener("click", () => refreshModels());

document.getElementById("btn-save-session")?.addEventListener("click", () => {
  const blob = new Blob([state.serialize()], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "stamp-session.json";
  a.click();
});

document.getElementById("session-input")?.addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const restored = EditorState.deserialize(await file.text());
  state.mode = restored.mode;
  state.modelId = restored.modelId;
  if (restored.backgroundB64) {
    state.setBackground(restored.backgroundB64);
    backgroundImage = await b64ToImage(restored.backgroundB64);
  }
  state.setBbox(restored.bbox);
  state.gallery = restored.gallery;
  redraw();
  renderGallery();
  setStatus(`session restored: ${state.gallery.length} entries`);
});

refreshModels();
