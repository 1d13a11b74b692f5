/**
 * Typed HTTP client for the annoflow API.
 *
 * Identity travels as headers on every call. Request bodies are schema
 * checked before sending and responses are schema checked on arrival;
 * server errors arrive as {code, message} and surface as ApiError with
 * the HTTP status attached.
 */
import { z } from "zod";

import {
  apiErrorSchema,
  eventListSchema,
  instanceDetailSchema,
  integrityReportSchema,
  nextClusterResponseSchema,
  nextSiaResponseSchema,
  pipelinesListSchema,
  reviewBodySchema,
  reviewResultSchema,
  submitSiaBodySchema,
  submitSiaResultSchema,
  taskDetailSchema,
  taskListSchema,
  treeDetailSchema,
  treeListSchema,
  type EngineEvent,
  type InstanceDetail,
  type NextClusterResponse,
  type NextSiaResponse,
  type ReviewBody,
  type ReviewResult,
  type SubmitSiaBody,
  type SubmitSiaResult,
  type TaskDetail,
  type TaskProgress,
  type TreeDetail,
} from "./schemas.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The server answered 2xx but the payload does not match the contract. */
export class ContractError extends Error {
  constructor(what: string, detail: string) {
    super(`${what}: ${detail}`);
    this.name = "ContractError";
  }
}

export interface SessionInfo {
  annotator: string;
  role?: "annotator" | "designer";
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AnnoflowClient {
  constructor(
    private readonly baseUrl: string,
    private readonly session: SessionInfo,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const headers: Record<string, string> = {
      "X-Annotator": this.session.annotator,
      "X-Role": this.session.role ?? "annotator",
    };
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      const raw = await response.json().catch(() => null);
      const parsed = apiErrorSchema.safeParse(raw);
      if (parsed.success) {
        throw new ApiError(response.status, parsed.data.code, parsed.data.message);
      }
      throw new ApiError(response.status, "error", `unexpected ${response.status} response`);
    }
    return response.json();
  }

  private check<T>(schema: z.ZodType<T>, data: unknown, what: string): T {
    const result = schema.safeParse(data);
    if (!result.success) {
      throw new ContractError(what, result.error.message);
    }
    return result.data;
  }

  // -- annotating -----------------------------------------------------------

  async nextItem(taskId: string): Promise<NextSiaResponse> {
    const data = await this.request("POST", `/tasks/${taskId}/next_item`);
    return this.check(nextSiaResponseSchema, data, "next_item response");
  }

  async submitSia(taskId: string, body: SubmitSiaBody): Promise<SubmitSiaResult> {
    const checked = submitSiaBodySchema.parse(body);
    const data = await this.request("POST", `/tasks/${taskId}/submit_sia`, checked);
    return this.check(submitSiaResultSchema, data, "submit_sia response");
  }

  async nextCluster(taskId: string): Promise<NextClusterResponse> {
    const data = await this.request("GET", `/tasks/${taskId}/clusters/next`);
    return this.check(nextClusterResponseSchema, data, "next cluster response");
  }

  async reviewCluster(clusterId: string, body: ReviewBody): Promise<ReviewResult> {
    const checked = reviewBodySchema.parse(body);
    const data = await this.request("POST", `/clusters/${clusterId}/review`, checked);
    return this.check(reviewResultSchema, data, "review response");
  }

  // -- tasks ------------------------------------------------------------------

  async listTasks(): Promise<TaskProgress[]> {
    const data = await this.request("GET", "/tasks");
    return this.check(taskListSchema, data, "task list").tasks;
  }

  async taskDetail(taskId: string): Promise<TaskDetail> {
    const data = await this.request("GET", `/tasks/${taskId}`);
    return this.check(taskDetailSchema, data, "task detail");
  }

  // -- pipelines ----------------------------------------------------------------

  async listPipelines(): Promise<z.infer<typeof pipelinesListSchema>> {
    const data = await this.request("GET", "/pipelines");
    return this.check(pipelinesListSchema, data, "pipeline list");
  }

  async registerPipeline(template: Record<string, unknown>): Promise<unknown> {
    return this.request("POST", "/pipelines", { template });
  }

  async instantiate(templateName: string, bindings: Record<string, Record<string, unknown>>): Promise<InstanceDetail> {
    const data = await this.request("POST", `/pipelines/${templateName}/instantiate`, { bindings });
    return this.check(instanceDetailSchema, data, "instantiate response");
  }

  async instanceDetail(instanceId: string): Promise<InstanceDetail> {
    const data = await this.request("GET", `/instances/${instanceId}`);
    return this.check(instanceDetailSchema, data, "instance detail");
  }

  async tick(instanceId: string): Promise<unknown> {
    return this.request("POST", `/instances/${instanceId}/tick`);
  }

  async instanceEvents(instanceId: string): Promise<{ events: EngineEvent[] }> {
    const data = await this.request("GET", `/instances/${instanceId}/events`);
    return this.check(eventListSchema, data, "event list");
  }

  async instanceIntegrity(instanceId: string): Promise<z.infer<typeof integrityReportSchema>> {
    const data = await this.request("GET", `/instances/${instanceId}/integrity`);
    return this.check(integrityReportSchema, data, "integrity report");
  }

  // -- label trees -----------------------------------------------------------------

  async listTrees(): Promise<z.infer<typeof treeListSchema>> {
    const data = await this.request("GET", "/label_trees");
    return this.check(treeListSchema, data, "tree list");
  }

  async treeDetail(treeId: string): Promise<TreeDetail> {
    const data = await this.request("GET", `/label_trees/${treeId}`);
    return this.check(treeDetailSchema, data, "tree detail");
  }

  async createTree(name: string, options: { rootName?: string; csv?: string } = {}): Promise<TreeDetail> {
    const body: Record<string, unknown> = { name };
    if (options.rootName !== undefined) body["root_name"] = options.rootName;
    if (options.csv !== undefined) body["csv"] = options.csv;
    const data = await this.request("POST", "/label_trees", body);
    return this.check(treeDetailSchema, data, "created tree");
  }

  async addNode(
    treeId: string,
    parentId: string,
    name: string,
    extras: { description?: string; externalRef?: string } = {},
  ): Promise<string> {
    const body: Record<string, unknown> = { parent_id: parentId, name };
    if (extras.description !== undefined) body["description"] = extras.description;
    if (extras.externalRef !== undefined) body["external_ref"] = extras.externalRef;
    const data = await this.request("POST", `/label_trees/${treeId}/nodes`, body);
    return this.check(z.object({ label_id: z.string() }), data, "added node").label_id;
  }

  async deleteNode(treeId: string, nodeId: string): Promise<string[]> {
    const data = await this.request("DELETE", `/label_trees/${treeId}/nodes/${nodeId}`);
    return this.check(z.object({ removed: z.array(z.string()) }), data, "deleted subtree").removed;
  }

  // -- file links --------------------------------------------------------------------

  exportUrl(exportId: string): string {
    return `${this.baseUrl}/exports/${exportId}`;
  }

  /** `ref` is "collection/relative-path" as carried on annotations and items. */
  mediaUrl(ref: string): string {
    return `${this.baseUrl}/media/${ref}`;
  }
}
