/**
 * Single-image annotation view state.
 *
 * Pure functions over an immutable state object: the canvas layer renders
 * from `rows`, interactions return a new state, and `buildSubmission`
 * derives the wire payload by diffing rows against what the server sent.
 * Every interaction is gated by the task config, so the view can never
 * produce an operation the task does not allow.
 */
import {
  ACTIONS,
  TOOLS,
  submitSiaBodySchema,
  type Action,
  type LabelOption,
  type Lease,
  type LeasedSia,
  type SiaOperation,
  type SubmitSiaBody,
  type Tool,
} from "./schemas.js";

/** An interaction was attempted that the task config does not allow. */
export class DisallowedError extends Error {
  constructor(what: string) {
    super(what);
    this.name = "DisallowedError";
  }
}

// smallest drawable box extent; the backend rejects zero-size boxes
const MIN_EXTENT = 0.001;

export interface SiaRow {
  /** Local handle, stable across edits within this view. */
  rowId: string;
  /** Server-side annotation id; null for rows drawn in this session. */
  annoId: string | null;
  kind: Tool;
  coords: number[];
  labels: string[];
  /** Proposals render distinctly (dashed outline, score chip) from human rows. */
  origin: "proposal" | "human";
  score: number | null;
  /** What the server sent, for diffing. Null for locally drawn rows. */
  baseline: { coords: number[]; labels: string[] } | null;
}

export interface SiaViewState {
  readonly taskId: string;
  readonly lease: Lease;
  readonly item: { itemId: string; imageRef: string; iteration: number };
  readonly tools: readonly Tool[];
  readonly actions: readonly Action[];
  readonly labelOptions: readonly LabelOption[];
  readonly rows: readonly SiaRow[];
  /** Annotation ids the user deleted, in deletion order. */
  readonly deletedAnnoIds: readonly string[];
  readonly activeTool: Tool | null;
  readonly selected: string | null;
  readonly past: readonly SiaUndoFrame[];
}

interface SiaUndoFrame {
  rows: readonly SiaRow[];
  deletedAnnoIds: readonly string[];
  activeTool: Tool | null;
  selected: string | null;
}

export interface EnabledControls {
  tools: Tool[];
  actions: Action[];
}

function canonical<T extends string>(values: Iterable<T>, order: readonly T[]): T[] {
  const present = new Set(values);
  return order.filter((v) => present.has(v));
}

export function openSiaView(leased: LeasedSia): SiaViewState {
  const tools = canonical(leased.config.allowed_tools, TOOLS);
  const actions = canonical(leased.config.allowed_actions, ACTIONS);
  const rows: SiaRow[] = leased.item.proposals.map((p, i) => ({
    rowId: `p${i}`,
    annoId: p.anno_id,
    kind: p.kind,
    coords: [...p.coords],
    labels: [...p.labels],
    origin: p.source === "proposal" ? "proposal" : "human",
    score: p.score,
    baseline: { coords: [...p.coords], labels: [...p.labels] },
  }));
  return {
    taskId: leased.task_id,
    lease: leased.lease,
    item: {
      itemId: leased.item.item_id,
      imageRef: leased.item.image_ref,
      iteration: leased.item.iteration,
    },
    tools,
    actions,
    labelOptions: leased.labels,
    rows,
    deletedAnnoIds: [],
    activeTool: actions.includes("create") ? (tools[0] ?? null) : null,
    selected: null,
    past: [],
  };
}

/**
 * The controls the view may show. Drawing tools are only offered when the
 * task allows creating annotations; without "create" a tool has nothing to
 * act on, so a label-only task shows no drawing tools at all.
 */
export function enabledControls(state: SiaViewState): EnabledControls {
  return {
    tools: state.actions.includes("create") ? [...state.tools] : [],
    actions: [...state.actions],
  };
}

function requireAction(state: SiaViewState, action: Action): void {
  if (!state.actions.includes(action)) {
    throw new DisallowedError(`action ${action} is not allowed on task ${state.taskId}`);
  }
}

export function clampCoords(kind: Tool, coords: readonly number[]): number[] {
  const clamped = coords.map((v) => Math.min(1, Math.max(0, v)));
  if (kind === "bbox") {
    // [xc, yc, w, h]: keep the box drawable after clamping
    clamped[2] = Math.max(MIN_EXTENT, clamped[2] ?? MIN_EXTENT);
    clamped[3] = Math.max(MIN_EXTENT, clamped[3] ?? MIN_EXTENT);
  }
  return clamped;
}

function snapshot(state: SiaViewState): SiaUndoFrame {
  return {
    rows: state.rows.map((r) => ({ ...r, coords: [...r.coords], labels: [...r.labels] })),
    deletedAnnoIds: [...state.deletedAnnoIds],
    activeTool: state.activeTool,
    selected: state.selected,
  };
}

function push(state: SiaViewState, changes: Partial<SiaViewState>): SiaViewState {
  return { ...state, ...changes, past: [...state.past, snapshot(state)] };
}

export function selectTool(state: SiaViewState, tool: Tool): SiaViewState {
  requireAction(state, "create");
  if (!state.tools.includes(tool)) {
    throw new DisallowedError(`tool ${tool} is not allowed on task ${state.taskId}`);
  }
  return { ...state, activeTool: tool };
}

export function selectRow(state: SiaViewState, rowId: string | null): SiaViewState {
  if (rowId !== null && !state.rows.some((r) => r.rowId === rowId)) {
    throw new Error(`no row ${rowId} in this view`);
  }
  return { ...state, selected: rowId };
}

function rowById(state: SiaViewState, rowId: string): SiaRow {
  const row = state.rows.find((r) => r.rowId === rowId);
  if (!row) throw new Error(`no row ${rowId} in this view`);
  return row;
}

/** Draw a new shape with the given tool. Coordinates clamp to [0,1]. */
export function drawShape(state: SiaViewState, kind: Tool, coords: readonly number[]): SiaViewState {
  requireAction(state, "create");
  if (!state.tools.includes(kind)) {
    throw new DisallowedError(`tool ${kind} is not allowed on task ${state.taskId}`);
  }
  const row: SiaRow = {
    rowId: `h${state.rows.length}-${state.past.length}`,
    annoId: null,
    kind,
    coords: clampCoords(kind, coords),
    labels: [],
    origin: "human",
    score: null,
    baseline: null,
  };
  return push(state, { rows: [...state.rows, row], selected: row.rowId });
}

/** Move or reshape a row. Coordinates clamp to [0,1]. */
export function editGeometry(state: SiaViewState, rowId: string, coords: readonly number[]): SiaViewState {
  requireAction(state, "edit");
  const row = rowById(state, rowId);
  const next = { ...row, coords: clampCoords(row.kind, coords) };
  return push(state, { rows: state.rows.map((r) => (r.rowId === rowId ? next : r)) });
}

/** Replace the labels on a row. */
export function assignLabels(state: SiaViewState, rowId: string, labels: readonly string[]): SiaViewState {
  requireAction(state, "assign_label");
  const known = new Set(state.labelOptions.map((l) => l.label_id));
  const bad = labels.filter((l) => !known.has(l));
  if (bad.length > 0) {
    throw new DisallowedError(`labels ${bad.join(", ")} are outside this task's label set`);
  }
  const row = rowById(state, rowId);
  const next = { ...row, labels: [...labels] };
  return push(state, { rows: state.rows.map((r) => (r.rowId === rowId ? next : r)) });
}

/** Remove a row from the image. */
export function removeShape(state: SiaViewState, rowId: string): SiaViewState {
  requireAction(state, "delete");
  const row = rowById(state, rowId);
  return push(state, {
    rows: state.rows.filter((r) => r.rowId !== rowId),
    deletedAnnoIds: row.annoId === null ? state.deletedAnnoIds : [...state.deletedAnnoIds, row.annoId],
    selected: state.selected === rowId ? null : state.selected,
  });
}

/** Local history, independent of task permissions. */
export function undo(state: SiaViewState): SiaViewState {
  const frame = state.past[state.past.length - 1];
  if (!frame) return state;
  return {
    ...state,
    rows: frame.rows,
    deletedAnnoIds: frame.deletedAnnoIds,
    activeTool: frame.activeTool,
    selected: frame.selected,
    past: state.past.slice(0, -1),
  };
}

export function canUndo(state: SiaViewState): boolean {
  return state.past.length > 0;
}

function sameNumbers(a: readonly number[], b: readonly number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

function sameStrings(a: readonly string[], b: readonly string[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

/**
 * Diff the working set against what the server sent and emit one
 * operation per touched annotation. A single coalesced operation per
 * target is required: the server supersedes a row on first edit, so a
 * second operation against the same id would hit a stale row.
 */
export function buildSubmission(state: SiaViewState, idempotencyKey?: string): SubmitSiaBody {
  const operations: SiaOperation[] = [];
  for (const row of state.rows) {
    if (row.annoId === null) {
      operations.push({ op: "create", kind: row.kind, coords: [...row.coords], labels: [...row.labels] });
      continue;
    }
    const base = row.baseline;
    if (!base) continue;
    const coordsChanged = !sameNumbers(row.coords, base.coords);
    const labelsChanged = !sameStrings(row.labels, base.labels);
    if (coordsChanged) {
      operations.push(
        labelsChanged
          ? { op: "edit", anno_id: row.annoId, coords: [...row.coords], labels: [...row.labels] }
          : { op: "edit", anno_id: row.annoId, coords: [...row.coords] },
      );
    } else if (labelsChanged) {
      operations.push({ op: "assign_label", anno_id: row.annoId, labels: [...row.labels] });
    }
  }
  for (const annoId of state.deletedAnnoIds) {
    operations.push({ op: "delete", anno_id: annoId });
  }
  const body: SubmitSiaBody = { lease_id: state.lease.lease_id, operations };
  if (idempotencyKey !== undefined) body.idempotency_key = idempotencyKey;
  return submitSiaBodySchema.parse(body);
}
