/** App entry: progressive cloud loading, toolbar wiring, and save flow. */

import { AnnotationApi, ApiError } from "./api.js";
import { LoadedCloud } from "./cloud.js";
import { pickNearestAlongRay } from "./picking.js";
import { AnnotationSession } from "./session.js";
import { CloudViewer, type DragRect } from "./viewer.js";

type Mode = "orbit" | "crop" | "calyx";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const api = new AnnotationApi("");
const status = el<HTMLDivElement>("status");
const fruitList = el<HTMLUListElement>("fruit-list");
const canvas = el<HTMLCanvasElement>("view");
const rubberBand = el<HTMLDivElement>("rubber-band");

let mode: Mode = "orbit";
let cloud: LoadedCloud;
let session: AnnotationSession;
let viewer: CloudViewer;

function setStatus(text: string, isError = false): void {
  status.textContent = text;
  status.className = isError ? "error" : "";
}

function refreshSidebar(): void {
  fruitList.innerHTML = "";
  for (const draft of session.listDrafts()) {
    const item = document.createElement("li");
    const active = draft.fruitId === session.activeFruitId;
    item.textContent =
      `${active ? "> " : ""}${draft.fruitId} (${draft.treeId}): ` +
      `${draft.selection.size} pts${draft.calyxIndex !== null ? ", calyx set" : ""}`;
    item.onclick = () => {
      session.activeFruitId = draft.fruitId;
      refreshView();
    };
    fruitList.appendChild(item);
  }
  el<HTMLSpanElement>("dirty-flag").textContent = session.dirty ? "unsaved changes" : "saved";
}

function refreshView(): void {
  const draft = session.activeFruitId ? session.getDraft(session.activeFruitId) : undefined;
  viewer.highlightSelection(draft ? new Set(draft.selection.indices()) : null);
  viewer.showCalyx(draft?.calyxPoint ?? null);
  refreshSidebar();
}

function setMode(next: Mode): void {
  mode = next;
  viewer.controls.enabled = next === "orbit";
  for (const name of ["orbit", "crop", "calyx"] as const) {
    el<HTMLButtonElement>(`mode-${name}`).classList.toggle("active", name === next);
  }
}

function wireToolbar(): void {
  el<HTMLButtonElement>("mode-orbit").onclick = () => setMode("orbit");
  el<HTMLButtonElement>("mode-crop").onclick = () => setMode("crop");
  el<HTMLButtonElement>("mode-calyx").onclick = () => setMode("calyx");

  el<HTMLButtonElement>("new-fruit").onclick = () => {
    const fruitId = prompt("fruit id (e.g. T01_F00)");
    if (!fruitId) return;
    const treeId = prompt("tree id (e.g. T01)") ?? "";
    try {
      session.startFruit(fruitId, treeId);
      setMode("crop");
      setStatus(`started ${fruitId}; crop it down from several viewpoints`);
    } catch (err) {
      setStatus(String(err), true);
    }
    refreshView();
  };

  el<HTMLButtonElement>("undo").onclick = () => {
    if (!session.activeFruitId) return;
    if (!session.undoCrop(session.activeFruitId)) setStatus("nothing to undo");
    refreshView();
  };

  el<HTMLButtonElement>("save").onclick = async () => {
    try {
      const n = await session.save(api);
      setStatus(`saved ${n} fruit(s); server round-trip verified`);
    } catch (err) {
      setStatus(err instanceof ApiError ? `save failed: ${err.detail}` : String(err), true);
    }
    refreshView();
  };
}

function wireCanvas(): void {
  let dragStart: { x: number; y: number } | null = null;

  canvas.addEventListener("pointerdown", (ev) => {
    if (mode !== "crop" || !session.activeFruitId) return;
    dragStart = { x: ev.clientX, y: ev.clientY };
    rubberBand.style.display = "block";
  });

  canvas.addEventListener("pointermove", (ev) => {
    if (mode !== "crop" || dragStart === null) return;
    const x = Math.min(dragStart.x, ev.clientX);
    const y = Math.min(dragStart.y, ev.clientY);
    Object.assign(rubberBand.style, {
      left: `${x}px`,
      top: `${y}px`,
      width: `${Math.abs(ev.clientX - dragStart.x)}px`,
      height: `${Math.abs(ev.clientY - dragStart.y)}px`,
    });
  });

  canvas.addEventListener("pointerup", (ev) => {
    if (mode === "crop" && dragStart !== null && session.activeFruitId) {
      rubberBand.style.display = "none";
      const rect: DragRect = { x0: dragStart.x, y0: dragStart.y, x1: ev.clientX, y1: ev.clientY };
      dragStart = null;
      if (Math.abs(rect.x1 - rect.x0) < 4 || Math.abs(rect.y1 - rect.y0) < 4) return;
      const draft = session.getDraft(session.activeFruitId)!;
      const box = viewer.cropBoxFromRect(rect, draft.selection.indices());
      if (box === null) return;
      const kept = session.cropSelect(session.activeFruitId, box);
      setStatus(`selection: ${kept} points (undo available)`);
      refreshView();
      return;
    }
    if (mode === "calyx" && session.activeFruitId) {
      const draft = session.getDraft(session.activeFruitId)!;
      const ray = viewer.rayThrough(ev.clientX, ev.clientY);
      const hit = pickNearestAlongRay(
        ray.origin,
        ray.direction,
        draft.selection.indices(),
        (full) => {
          const loaded = cloud.loadedIndexOf(full);
          return loaded === undefined ? undefined : cloud.position(loaded);
        },
        viewer.worldPerPixel(viewer.controls.getDistance(), 8),
      );
      if (hit === null) {
        setStatus("no selected point near that click; zoom in or crop first");
        return;
      }
      try {
        session.setCalyx(session.activeFruitId, hit.index);
        setStatus(`calyx set for ${session.activeFruitId}`);
      } catch (err) {
        setStatus(String(err), true);
      }
      refreshView();
    }
  });
}

async function loadScene(): Promise<void> {
  const meta = await api.getSceneMeta();
  if (meta.point_count === 0) {
    setStatus("no scene: the server has an empty point cloud", true);
    return;
  }
  session = new AnnotationSession(cloud, meta.min_fruit_points);
  viewer.fitView(meta.bounds.min, meta.bounds.max);
  let loaded = 0;
  for (let i = 0; i < meta.chunk_count; i++) {
    const chunk = await api.getPointsChunk(i);
    cloud.addChunk(chunk);
    loaded += chunk.count;
    viewer.syncCloud();
    setStatus(`loading points: ${loaded} / ${meta.point_count}`);
  }
  if (loaded !== meta.point_count) {
    throw new Error(`chunk count mismatch: got ${loaded}, server reported ${meta.point_count}`);
  }
  setStatus(`scene loaded: ${loaded} points in ${meta.chunk_count} chunks`);
  refreshView();
}

async function boot(): Promise<void> {
  cloud = new LoadedCloud();
  viewer = new CloudViewer(canvas, cloud);
  wireToolbar();
  wireCanvas();
  setMode("orbit");
  const retry = el<HTMLButtonElement>("retry");
  retry.onclick = () => {
    retry.style.display = "none";
    boot().catch(() => undefined);
  };
  try {
    await loadScene();
  } catch (err) {
    setStatus(`server unreachable or failed to load scene (${String(err)})`, true);
    retry.style.display = "inline-block";
  }
}

boot();
