/** Wire-shaped fixtures used across the suites. */
import type { Annotation, LeasedCluster, LeasedSia, InstanceDetail, EngineEvent } from "../src/schemas.js";

let annoCounter = 0;

export function annotation(overrides: Partial<Annotation> = {}): Annotation {
  annoCounter += 1;
  return {
    anno_id: `anno-${annoCounter.toString().padStart(4, "0")}`,
    image_ref: "col-1/img_001.jpg",
    kind: "bbox",
    coords: [0.5, 0.5, 0.2, 0.2],
    labels: [],
    source: "proposal",
    annotator: null,
    score: 0.8,
    iteration: 0,
    instance_id: "inst-1",
    producer_element: "detector",
    task_element: "annotate",
    predecessor_id: null,
    superseded: false,
    deleted: false,
    created_at: "2026-03-02T10:00:00+00:00",
    last_modified: "2026-03-02T10:00:00+00:00",
    ...overrides,
  };
}

export function resetAnnoCounter(): void {
  annoCounter = 0;
}

export const PERSON = { label_id: "person", name: "person" };
export const CAT = { label_id: "cat", name: "cat" };
export const DOG = { label_id: "dog", name: "dog" };

export function leasedSia(overrides: Partial<LeasedSia> = {}): LeasedSia {
  return {
    status: "leased",
    lease: {
      lease_id: "lease-0001",
      item_ref: "item-0001",
      annotator: "alice",
      expires_at: "2026-03-02T10:10:00+00:00",
    },
    task_id: "task-sia",
    interface: "sia",
    config: {
      allowed_tools: ["point", "line", "polygon", "bbox"],
      allowed_actions: ["create", "edit", "delete", "assign_label"],
    },
    labels: [PERSON, CAT, DOG],
    item: {
      item_id: "item-0001",
      image_ref: "col-1/img_001.jpg",
      iteration: 0,
      proposals: [],
    },
    ...overrides,
  };
}

/**
 * The canonical review fixture: a 20-member cluster where 19 boxes carry
 * the person label and one stray is a cat.
 */
export function personClusterWithOneCat(): LeasedCluster {
  const members: Annotation[] = [];
  for (let i = 0; i < 19; i++) {
    members.push(
      annotation({
        anno_id: `person-${i.toString().padStart(2, "0")}`,
        image_ref: `col-1/img_${i.toString().padStart(3, "0")}.jpg`,
        labels: ["person"],
      }),
    );
  }
  members.splice(
    7,
    0,
    annotation({ anno_id: "cat-01", image_ref: "col-1/img_977.jpg", labels: ["cat"] }),
  );
  return {
    status: "leased",
    lease: {
      lease_id: "lease-0002",
      item_ref: "cluster-0001",
      annotator: "alice",
      expires_at: "2026-03-02T10:10:00+00:00",
    },
    task_id: "task-mia",
    interface: "mia",
    config: { allowed_tools: [], allowed_actions: ["assign_label"] },
    labels: [PERSON, CAT, DOG],
    cluster: {
      cluster_id: "cluster-0001",
      member_kind: "annotation",
      members,
      proposed_label: null,
      iteration: 0,
    },
  };
}

export function instanceDetail(overrides: Partial<InstanceDetail> = {}): InstanceDetail {
  return {
    instance_id: "inst-1",
    template: "boxes-then-review",
    owner: "dana",
    created_at: "2026-03-02T09:00:00+00:00",
    elements: {
      images: { state: "finished", iteration: 0 },
      feed: { state: "finished", iteration: 0 },
      annotate: { state: "in_progress", iteration: 0 },
      again: {
        state: "pending",
        iteration: 0,
        loop: { current_iteration: 2, max_iteration: 3, break_flag: false },
      },
      out: { state: "pending", iteration: 0 },
    },
    all_finished: false,
    tasks: {
      "task-sia": {
        task_id: "task-sia",
        interface: "sia",
        round: 0,
        finished_items: 3,
        total_items: 10,
        per_annotator: { alice: 3 },
        accepting: true,
      },
    },
    exports: [{ export_id: "exp-1", name: "annotations.csv", kind: "csv", element_id: "out", bytes: 512 }],
    events: 17,
    ...overrides,
  };
}

export function erroredEvent(elementId: string, payload: string): EngineEvent {
  return {
    instance_id: "inst-1",
    element_id: elementId,
    kind: "errored",
    iteration: 0,
    timestamp: "2026-03-02T09:05:00+00:00",
    payload,
  };
}

/** Minimal Response-like object for stubbing fetch. */
export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
