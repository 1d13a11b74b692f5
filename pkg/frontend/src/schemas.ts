/**
 * Wire schemas for the annoflow HTTP API.
 *
 * Outbound request bodies are validated before they leave the client and
 * inbound responses are validated on arrival, so a contract drift fails
 * loudly in tests instead of silently corrupting view state.
 */
import { z } from "zod";

export const TOOLS = ["point", "line", "polygon", "bbox"] as const;
export const ACTIONS = ["create", "edit", "delete", "assign_label"] as const;

export type Tool = (typeof TOOLS)[number];
export type Action = (typeof ACTIONS)[number];

const toolSchema = z.enum(TOOLS);
const actionSchema = z.enum(ACTIONS);

// -- shared fragments -------------------------------------------------------

export const annotationSchema = z.object({
  anno_id: z.string(),
  image_ref: z.string(),
  kind: toolSchema,
  coords: z.array(z.number()),
  labels: z.array(z.string()),
  source: z.enum(["human", "proposal"]),
  annotator: z.string().nullable(),
  score: z.number().nullable(),
  iteration: z.number().int(),
  instance_id: z.string().nullable(),
  producer_element: z.string().nullable(),
  task_element: z.string().nullable(),
  predecessor_id: z.string().nullable(),
  superseded: z.boolean(),
  deleted: z.boolean(),
  created_at: z.string(),
  last_modified: z.string(),
});

export const leaseSchema = z.object({
  lease_id: z.string(),
  item_ref: z.string(),
  annotator: z.string(),
  expires_at: z.string(),
});

export const taskConfigSchema = z.object({
  allowed_tools: z.array(toolSchema),
  allowed_actions: z.array(actionSchema),
});

export const labelOptionSchema = z.object({
  label_id: z.string(),
  name: z.string(),
});

export const apiErrorSchema = z.object({
  code: z.string(),
  message: z.string(),
});

// -- task items -------------------------------------------------------------

export const siaItemSchema = z.object({
  item_id: z.string(),
  image_ref: z.string(),
  iteration: z.number().int(),
  proposals: z.array(annotationSchema),
});

export const clusterMemberSchema = z.union([
  annotationSchema,
  z.object({ image_ref: z.string() }),
]);

export const clusterSchema = z.object({
  cluster_id: z.string(),
  member_kind: z.enum(["annotation", "image"]),
  members: z.array(clusterMemberSchema),
  proposed_label: z.string().nullable(),
  iteration: z.number().int(),
});

const leasedBase = {
  status: z.literal("leased"),
  lease: leaseSchema,
  task_id: z.string(),
  config: taskConfigSchema,
  labels: z.array(labelOptionSchema),
};

export const leasedSiaSchema = z.object({
  ...leasedBase,
  interface: z.literal("sia"),
  item: siaItemSchema,
});

export const leasedClusterSchema = z.object({
  ...leasedBase,
  interface: z.literal("mia"),
  cluster: clusterSchema,
});

export const noneRemainingSchema = z.object({ status: z.literal("none_remaining") });

export const nextSiaResponseSchema = z.union([noneRemainingSchema, leasedSiaSchema]);
export const nextClusterResponseSchema = z.union([noneRemainingSchema, leasedClusterSchema]);

// -- submissions ------------------------------------------------------------

export const createOpSchema = z
  .object({
    op: z.literal("create"),
    kind: toolSchema,
    coords: z.array(z.number()),
    labels: z.array(z.string()),
  })
  .strict();

export const editOpSchema = z
  .object({
    op: z.literal("edit"),
    anno_id: z.string(),
    coords: z.array(z.number()).optional(),
    labels: z.array(z.string()).optional(),
  })
  .strict();

export const deleteOpSchema = z
  .object({
    op: z.literal("delete"),
    anno_id: z.string(),
  })
  .strict();

export const assignLabelOpSchema = z
  .object({
    op: z.literal("assign_label"),
    anno_id: z.string(),
    labels: z.array(z.string()),
  })
  .strict();

export const siaOperationSchema = z.discriminatedUnion("op", [
  createOpSchema,
  editOpSchema,
  deleteOpSchema,
  assignLabelOpSchema,
]);

export const submitSiaBodySchema = z
  .object({
    lease_id: z.string(),
    operations: z.array(siaOperationSchema),
    idempotency_key: z.string().optional(),
  })
  .strict();

export const submitSiaResultSchema = z.object({
  item_id: z.string(),
  image_ref: z.string(),
  created: z.array(z.string()),
  updated: z.array(z.string()),
  deleted: z.array(z.string()),
  round_complete: z.boolean(),
});

export const reviewBodySchema = z
  .object({
    lease_id: z.string(),
    removed: z.array(z.string()),
    label: z.string().nullable(),
  })
  .strict();

export const reviewResultSchema = z.object({
  cluster_id: z.string(),
  labeled: z.array(z.string()),
  removed: z.array(z.string()),
  label: z.string().nullable(),
  round_complete: z.boolean(),
});

// -- tasks and instances ----------------------------------------------------

export const taskProgressSchema = z.object({
  task_id: z.string(),
  interface: z.enum(["sia", "mia"]),
  round: z.number().int(),
  finished_items: z.number().int(),
  total_items: z.number().int(),
  per_annotator: z.record(z.string(), z.number().int()),
  accepting: z.boolean(),
});

export const taskDetailSchema = taskProgressSchema.extend({
  config: taskConfigSchema.extend({ proposal_source: z.string().nullable() }),
  assignees: z.array(z.string()),
  labels: z.array(labelOptionSchema),
});

export const elementStateSchema = z.enum(["pending", "in_progress", "finished", "error"]);

export const elementSnapshotSchema = z.object({
  state: elementStateSchema,
  iteration: z.number().int(),
  loop: z
    .object({
      current_iteration: z.number().int(),
      max_iteration: z.number().int().nullable(),
      break_flag: z.boolean(),
    })
    .optional(),
});

export const exportRecordSchema = z.object({
  export_id: z.string(),
  name: z.string(),
  kind: z.string(),
  element_id: z.string(),
  bytes: z.number().int(),
});

export const instanceDetailSchema = z.object({
  instance_id: z.string(),
  template: z.string(),
  owner: z.string(),
  created_at: z.string(),
  elements: z.record(z.string(), elementSnapshotSchema),
  all_finished: z.boolean(),
  tasks: z.record(z.string(), taskProgressSchema),
  exports: z.array(exportRecordSchema),
  events: z.number().int(),
});

export const engineEventSchema = z.object({
  instance_id: z.string(),
  element_id: z.string(),
  kind: z.enum(["activated", "started", "finished", "errored", "loop_iterated", "break_requested"]),
  iteration: z.number().int(),
  timestamp: z.string(),
  payload: z.string(),
});

export const eventListSchema = z.object({ events: z.array(engineEventSchema) });

export const violationSchema = z.object({
  code: z.string(),
  message: z.string(),
  elements: z.array(z.string()).optional(),
});

export const integrityReportSchema = z.object({ violations: z.array(violationSchema) });

export const pipelinesListSchema = z.object({
  templates: z.array(
    z.object({
      name: z.string(),
      description: z.string(),
      elements: z.number().int(),
      violations: z.number().int(),
    }),
  ),
  instances: z.array(
    z.object({
      instance_id: z.string(),
      template: z.string(),
      owner: z.string(),
    }),
  ),
});

export const taskListSchema = z.object({ tasks: z.array(taskProgressSchema) });

// -- label trees --------------------------------------------------------------

export const treeNodeSchema = z.object({
  label_id: z.string(),
  parent_id: z.string().nullable(),
  name: z.string(),
  description: z.string(),
  external_ref: z.string(),
});

export const treeDetailSchema = z.object({
  tree_id: z.string(),
  name: z.string(),
  root_id: z.string(),
  nodes: z.array(treeNodeSchema),
});

export const treeListSchema = z.object({
  trees: z.array(z.object({ tree_id: z.string(), name: z.string(), nodes: z.number().int() })),
});

// -- inferred types -----------------------------------------------------------

export type Annotation = z.infer<typeof annotationSchema>;
export type Lease = z.infer<typeof leaseSchema>;
export type TaskConfig = z.infer<typeof taskConfigSchema>;
export type LabelOption = z.infer<typeof labelOptionSchema>;
export type SiaItem = z.infer<typeof siaItemSchema>;
export type Cluster = z.infer<typeof clusterSchema>;
export type ClusterMember = z.infer<typeof clusterMemberSchema>;
export type LeasedSia = z.infer<typeof leasedSiaSchema>;
export type LeasedCluster = z.infer<typeof leasedClusterSchema>;
export type NextSiaResponse = z.infer<typeof nextSiaResponseSchema>;
export type NextClusterResponse = z.infer<typeof nextClusterResponseSchema>;
export type SiaOperation = z.infer<typeof siaOperationSchema>;
export type SubmitSiaBody = z.infer<typeof submitSiaBodySchema>;
export type SubmitSiaResult = z.infer<typeof submitSiaResultSchema>;
export type ReviewBody = z.infer<typeof reviewBodySchema>;
export type ReviewResult = z.infer<typeof reviewResultSchema>;
export type TaskProgress = z.infer<typeof taskProgressSchema>;
export type TaskDetail = z.infer<typeof taskDetailSchema>;
export type ElementSnapshot = z.infer<typeof elementSnapshotSchema>;
export type ExportRecord = z.infer<typeof exportRecordSchema>;
export type InstanceDetail = z.infer<typeof instanceDetailSchema>;
export type EngineEvent = z.infer<typeof engineEventSchema>;
export type TreeDetail = z.infer<typeof treeDetailSchema>;
