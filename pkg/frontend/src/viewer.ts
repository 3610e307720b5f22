/** three.js viewer: renders the loaded cloud, highlights the active
 * selection and calyx, shows the crop rectangle while dragging, and converts
 * pointer events into pick rays. */

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";
import type { LoadedCloud } from "./cloud.js";
import type { OrientedCropBox } from "./selection.js";
import type { Vec3 } from "./types.js";

const BASE_DIM = 0.25; // unselected points keep a quarter of their color
const CALYX_COLOR = new THREE.Color(0.1, 0.6, 1.0);

export interface DragRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export class CloudViewer {
  readonly renderer: THREE.WebGLRenderer;
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  readonly controls: OrbitControls;
  private geometry = new THREE.BufferGeometry();
  private points: THREE.Points;
  private calyxMarker: THREE.Mesh;
  private uploaded = 0;

  constructor(private readonly canvas: HTMLCanvasElement, private readonly cloud: LoadedCloud) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(55, 1, 0.01, 500);
    this.camera.position.set(3, 3, 2);
    this.camera.up.set(0, 0, 1);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;

    const material = new THREE.PointsMaterial({ size: 0.012, vertexColors: true });
    this.points = new THREE.Points(this.geometry, material);
    this.points.frustumCulled = false;
    this.scene.add(this.points);

    this.calyxMarker = new THREE.Mesh(
      new THREE.SphereGeometry(0.01, 12, 12),
      new THREE.MeshBasicMaterial({ color: CALYX_COLOR }),
    );
    this.calyxMarker.visible = false;
    this.scene.add(this.calyxMarker);

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.resizeToDisplay();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  /** Re-upload buffers after new chunks arrived. */
  syncCloud(): void {
    if (this.cloud.count === this.uploaded) return;
    this.geometry.dispose();
    this.geometry = new THREE.BufferGeometry();
    this.geometry.setAttribute(
      "position",
      new THREE.Float32BufferAttribute(Float32Array.from(this.cloud.positions), 3),
    );
    this.geometry.setAttribute(
      "color",
      new THREE.Float32BufferAttribute(Float32Array.from(this.cloud.colors), 3),
    );
    this.points.geometry = this.geometry;
    this.uploaded = this.cloud.count;
  }

  fitView(min: Vec3, max: Vec3): void {
    const center = new THREE.Vector3(
      (min[0] + max[0]) / 2,
      (min[1] + max[1]) / 2,
      (min[2] + max[2]) / 2,
    );
    const size = Math.max(max[0] - min[0], max[1] - min[1], max[2] - min[2], 0.1);
    this.controls.target.copy(center);
    this.camera.position.copy(center).add(new THREE.Vector3(size, size, size * 0.6));
  }

  /** Dim everything outside the selection; null selection shows true colors. */
  highlightSelection(selected: Set<number> | null): void {
    const colorAttr = this.points.geometry.getAttribute("color") as THREE.BufferAttribute;
    if (!colorAttr) return;
    for (let i = 0; i < this.cloud.count; i++) {
      const keep = selected === null || selected.has(this.cloud.fullIndices[i]);
      const f = keep ? 1.0 : BASE_DIM;
      colorAttr.setXYZ(
        i,
        this.cloud.colors[i * 3] * f,
        this.cloud.colors[i * 3 + 1] * f,
        this.cloud.colors[i * 3 + 2] * f,
      );
    }
    colorAttr.needsUpdate = true;
  }

  showCalyx(position: Vec3 | null): void {
    if (position === null) {
      this.calyxMarker.visible = false;
    } else {
      this.calyxMarker.position.set(position[0], position[1], position[2]);
      this.calyxMarker.visible = true;
    }
  }

  /** Pick ray (origin, direction) through a client pixel. */
  rayThrough(clientX: number, clientY: number): { origin: Vec3; direction: Vec3 } {
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((clientX - rect.left) / rect.width) * 2 - 1,
      -(((clientY - rect.top) / rect.height) * 2 - 1),
    );
    const raycaster = new THREE.Raycaster();
    raycaster.setFromCamera(ndc, this.camera);
    const { origin, direction } = raycaster.ray;
    return {
      origin: [origin.x, origin.y, origin.z],
      direction: [direction.x, direction.y, direction.z],
    };
  }

  /** World distance covered by `px` pixels at distance `t` from the camera. */
  worldPerPixel(t: number, px: number): number {
    const rect = this.canvas.getBoundingClientRect();
    const viewHeight = 2 * t * Math.tan((this.camera.fov * Math.PI) / 360);
    return (px * viewHeight) / Math.max(rect.height, 1);
  }

  /**
   * Oriented crop box for a dragged screen rectangle: camera-aligned, sized
   * at the mid depth of the current selection and spanning its depth range.
   */
  cropBoxFromRect(rect: DragRect, selected: Iterable<number>): OrientedCropBox | null {
    const fwd = new THREE.Vector3();
    this.camera.getWorldDirection(fwd);
    const right = new THREE.Vector3().setFromMatrixColumn(this.camera.matrixWorld, 0).normalize();
    const up = new THREE.Vector3().setFromMatrixColumn(this.camera.matrixWorld, 1).normalize();
    const eye = this.camera.position;

    let tMin = Infinity;
    let tMax = -Infinity;
    for (const full of selected) {
      const loaded = this.cloud.loadedIndexOf(full);
      if (loaded === undefined) continue;
      const p = this.cloud.position(loaded);
      const t =
        (p[0] - eye.x) * fwd.x + (p[1] - eye.y) * fwd.y + (p[2] - eye.z) * fwd.z;
      tMin = Math.min(tMin, t);
      tMax = Math.max(tMax, t);
    }
    if (!isFinite(tMin) || tMax <= 0) return null;
    tMin = Math.max(tMin, 0.01);
    const tMid = (tMin + tMax) / 2;

    const a = this.rayThrough(rect.x0, rect.y0);
    const b = this.rayThrough(rect.x1, rect.y1);
    const atDepth = (ray: { origin: Vec3; direction: Vec3 }) => {
      const dirDotFwd =
        ray.direction[0] * fwd.x + ray.direction[1] * fwd.y + ray.direction[2] * fwd.z;
      const s = tMid / dirDotFwd;
      return new THREE.Vector3(
        ray.origin[0] + s * ray.direction[0],
        ray.origin[1] + s * ray.direction[1],
        ray.origin[2] + s * ray.direction[2],
      );
    };
    const pa = atDepth(a);
    const pb = atDepth(b);
    const centerWorld = pa.clone().add(pb).multiplyScalar(0.5);
    const diag = pb.clone().sub(pa);
    const halfW = Math.abs(diag.dot(right)) / 2;
    const halfH = Math.abs(diag.dot(up)) / 2;
    const halfD = (tMax - tMin) / 2 + 0.001;
    const depthCenter = eye
      .clone()
      .add(fwd.clone().multiplyScalar(tMid))
      .sub(centerWorld)
      .dot(fwd);
    centerWorld.add(fwd.clone().multiplyScalar(depthCenter));

    return {
      center: [centerWorld.x, centerWorld.y, centerWorld.z],
      halfExtents: [Math.max(halfW, 1e-6), Math.max(halfH, 1e-6), halfD],
      axes: [
        [right.x, right.y, right.z],
        [up.x, up.y, up.z],
        [fwd.x, fwd.y, fwd.z],
      ],
    };
  }

  private resizeToDisplay(): void {
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    const need =
      this.canvas.width !== Math.floor(w * devicePixelRatio) ||
      this.canvas.height !== Math.floor(h * devicePixelRatio);
    if (need && w > 0 && h > 0) {
      this.renderer.setSize(w, h, false);
      this.renderer.setPixelRatio(devicePixelRatio);
      this.camera.aspect = w / h;
      this.camera.updateProjectionMatrix();
    }
  }
}
