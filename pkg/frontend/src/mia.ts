/**
 * Multi-image (cluster) review view state.
 *
 * A cluster arrives as a grid of member thumbnails with an optional
 * proposed label. The reviewer removes outliers and picks one label for
 * the remainder, or removes everything to reject the cluster outright.
 * The whole flow is keyboard-driven: arrows move the cursor, space
 * toggles removal, digit keys pick a label.
 */
import {
  reviewBodySchema,
  type Cluster,
  type LabelOption,
  type Lease,
  type LeasedCluster,
  type ReviewBody,
} from "./schemas.js";

export interface MiaMember {
  /** What goes into the review payload: anno_id or image_ref. */
  memberId: string;
  /** Image shown in the grid cell. */
  thumbRef: string;
  labels: string[];
}

export interface MiaViewState {
  readonly taskId: string;
  readonly lease: Lease;
  readonly clusterId: string;
  readonly memberKind: Cluster["member_kind"];
  readonly iteration: number;
  readonly members: readonly MiaMember[];
  readonly labelOptions: readonly LabelOption[];
  /** Member ids marked as outliers. */
  readonly removal: ReadonlySet<string>;
  /** Label to apply to the remaining members; null until chosen. */
  readonly candidate: string | null;
  /** Keyboard focus: index into members. */
  readonly cursor: number;
}

export function openMiaView(leased: LeasedCluster): MiaViewState {
  const members: MiaMember[] = leased.cluster.members.map((m) =>
    "anno_id" in m
      ? { memberId: m.anno_id, thumbRef: m.image_ref, labels: [...m.labels] }
      : { memberId: m.image_ref, thumbRef: m.image_ref, labels: [] },
  );
  const proposed = leased.cluster.proposed_label;
  return {
    taskId: leased.task_id,
    lease: leased.lease,
    clusterId: leased.cluster.cluster_id,
    memberKind: leased.cluster.member_kind,
    iteration: leased.cluster.iteration,
    members,
    labelOptions: leased.labels,
    removal: new Set(),
    // a proposed label pre-fills the choice when it is actually assignable
    candidate: proposed !== null && leased.labels.some((l) => l.label_id === proposed) ? proposed : null,
    cursor: 0,
  };
}

export function toggleRemoval(state: MiaViewState, memberId: string): MiaViewState {
  if (!state.members.some((m) => m.memberId === memberId)) {
    throw new Error(`${memberId} is not a member of cluster ${state.clusterId}`);
  }
  const removal = new Set(state.removal);
  if (removal.has(memberId)) {
    removal.delete(memberId);
  } else {
    removal.add(memberId);
  }
  return { ...state, removal };
}

export function chooseLabel(state: MiaViewState, labelId: string | null): MiaViewState {
  if (labelId !== null && !state.labelOptions.some((l) => l.label_id === labelId)) {
    throw new Error(`label ${labelId} is not assignable on task ${state.taskId}`);
  }
  return { ...state, candidate: labelId };
}

/**
 * A review is submittable in exactly two shapes: a label for a non-empty
 * remainder, or no label with every member removed (full rejection).
 * A label with nothing left to carry it is contradictory.
 */
export function canSubmit(state: MiaViewState): boolean {
  const allRemoved = state.removal.size === state.members.length;
  return state.candidate === null ? allRemoved : !allRemoved;
}

export function buildReview(state: MiaViewState): ReviewBody {
  if (!canSubmit(state)) {
    throw new Error("review needs a label, or every member removed to reject the cluster");
  }
  return reviewBodySchema.parse({
    lease_id: state.lease.lease_id,
    removed: state.members.filter((m) => state.removal.has(m.memberId)).map((m) => m.memberId),
    label: state.candidate,
  });
}

function moveCursor(state: MiaViewState, delta: number): MiaViewState {
  const last = state.members.length - 1;
  if (last < 0) return state;
  const cursor = Math.min(last, Math.max(0, state.cursor + delta));
  return { ...state, cursor };
}

/**
 * Keyboard map: arrows navigate the grid (`columns` cells per row),
 * space toggles removal under the cursor, digits 1-9 choose from the
 * label list, Escape clears the chosen label.
 */
export function handleKey(state: MiaViewState, key: string, columns = 1): MiaViewState {
  switch (key) {
    case "ArrowRight":
      return moveCursor(state, 1);
    case "ArrowLeft":
      return moveCursor(state, -1);
    case "ArrowDown":
      return moveCursor(state, columns);
    case "ArrowUp":
      return moveCursor(state, -columns);
    case " ": {
      const member = state.members[state.cursor];
      return member ? toggleRemoval(state, member.memberId) : state;
    }
    case "Escape":
      return chooseLabel(state, null);
    default: {
      if (/^[1-9]$/.test(key)) {
        const option = state.labelOptions[Number(key) - 1];
        return option ? chooseLabel(state, option.label_id) : state;
      }
      return state;
    }
  }
}
