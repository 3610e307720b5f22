/** Annotation session state: fruit drafts, their selections, and saving.
 *
 * Invariants enforced here rather than in the UI layer: fruit ids are unique,
 * a calyx can only be set once the selection holds enough points, and every
 * mutation marks the session dirty until a successful save round-trips
 * through the server.
 */

import type { AnnotationApi } from "./api.js";
import type { LoadedCloud } from "./cloud.js";
import { SelectionState } from "./selection.js";
import type { Vec3 } from "./types.js";

export const DEFAULT_MIN_FRUIT_POINTS = 50;

export interface FruitDraft {
  fruitId: string;
  treeId: string;
  selection: SelectionState;
  /** full-cloud index of the picked calyx point, if chosen */
  calyxIndex: number | null;
  calyxPoint: Vec3 | null;
}

export interface DraftProblem {
  fruitId: string;
  field: "selection" | "calyx" | "tree_id";
  message: string;
}

export class AnnotationSession {
  private readonly drafts = new Map<string, FruitDraft>();
  private _dirty = false;
  activeFruitId: string | null = null;

  constructor(
    private readonly cloud: LoadedCloud,
    readonly minFruitPoints: number = DEFAULT_MIN_FRUIT_POINTS,
  ) {}

  get dirty(): boolean {
    return this._dirty;
  }

  listDrafts(): FruitDraft[] {
    return [...this.drafts.values()];
  }

  getDraft(fruitId: string): FruitDraft | undefined {
    return this.drafts.get(fruitId);
  }

  /** New draft starting from the whole loaded cloud. */
  startFruit(fruitId: string, treeId: string): FruitDraft {
    if (!fruitId || !treeId) throw new Error("fruit id and tree id are required");
    if (this.drafts.has(fruitId)) throw new Error(`fruit id ${fruitId} already exists`);
    const draft: FruitDraft = {
      fruitId,
      treeId,
      selection: new SelectionState(this.cloud.allFullIndices()),
      calyxIndex: null,
      calyxPoint: null,
    };
    this.drafts.set(fruitId, draft);
    this.activeFruitId = fruitId;
    this._dirty = true;
    return draft;
  }

  removeFruit(fruitId: string): void {
    if (this.drafts.delete(fruitId)) {
      if (this.activeFruitId === fruitId) this.activeFruitId = null;
      this._dirty = true;
    }
  }

  /** Intersect the active draft's selection with a crop box. */
  cropSelect(fruitId: string, box: Parameters<SelectionState["refine"]>[0]): number {
    const draft = this.require(fruitId);
    draft.selection.refine(box, (full) => {
      const loaded = this.cloud.loadedIndexOf(full);
      return loaded === undefined ? undefined : this.cloud.position(loaded);
    });
    this.dropCalyxIfRemoved(draft);
    this._dirty = true;
    return draft.selection.size;
  }

  undoCrop(fruitId: string): boolean {
    const draft = this.require(fruitId);
    const undone = draft.selection.undo();
    if (undone) {
      this._dirty = true;
      this.dropCalyxIfRemoved(draft);
    }
    return undone;
  }

  setCalyx(fruitId: string, fullIndex: number): void {
    const draft = this.require(fruitId);
    if (draft.selection.size < this.minFruitPoints) {
      throw new Error(
        `select at least ${this.minFruitPoints} points before picking the calyx ` +
          `(currently ${draft.selection.size})`,
      );
    }
    if (!draft.selection.has(fullIndex)) {
      throw new Error("calyx must be one of the selected points");
    }
    const loaded = this.cloud.loadedIndexOf(fullIndex);
    if (loaded === undefined) throw new Error("calyx point is not loaded");
    draft.calyxIndex = fullIndex;
    draft.calyxPoint = this.cloud.position(loaded);
    this._dirty = true;
  }

  /** Problems preventing a save, grouped per fruit with field names. */
  validate(): DraftProblem[] {
    const problems: DraftProblem[] = [];
    for (const draft of this.drafts.values()) {
      if (!draft.treeId) {
        problems.push({ fruitId: draft.fruitId, field: "tree_id", message: "missing tree id" });
      }
      if (draft.selection.size < this.minFruitPoints) {
        problems.push({
          fruitId: draft.fruitId,
          field: "selection",
          message: `only ${draft.selection.size} points selected, need ${this.minFruitPoints}`,
        });
      }
      if (draft.calyxIndex === null || draft.calyxPoint === null) {
        problems.push({ fruitId: draft.fruitId, field: "calyx", message: "calyx not picked" });
      }
    }
    return problems;
  }

  /**
   * Persist every draft through the API, then read each one back and verify
   * the stored selection matches what was sent. Throws on validation problems
   * or any round-trip mismatch; clears the dirty flag on success.
   */
  async save(api: AnnotationApi): Promise<number> {
    const problems = this.validate();
    if (problems.length > 0) {
      const first = problems[0];
      throw new Error(
        `${problems.length} problem(s); first: ${first.fruitId}.${first.field}: ${first.message}`,
      );
    }
    for (const draft of this.drafts.values()) {
      await api.upsertAnnotation({
        fruit_id: draft.fruitId,
        tree_id: draft.treeId,
        calyx: draft.calyxPoint as Vec3,
      });
      const indices = draft.selection.indices();
      await api.saveFruitPoints(draft.fruitId, indices);
      const stored = await api.getFruitPoints(draft.fruitId);
      if (stored.length !== indices.length || stored.some((v, i) => v !== indices[i])) {
        throw new Error(`round-trip mismatch for ${draft.fruitId}`);
      }
    }
    this._dirty = false;
    return this.drafts.size;
  }

  private dropCalyxIfRemoved(draft: FruitDraft): void {
    if (draft.calyxIndex !== null && !draft.selection.has(draft.calyxIndex)) {
      draft.calyxIndex = null;
      draft.calyxPoint = null;
    }
  }

  private require(fruitId: string): FruitDraft {
    const draft = this.drafts.get(fruitId);
    if (draft === undefined) throw new Error(`no draft for fruit ${fruitId}`);
    return draft;
  }
}
