/**
 * Annotator session flows built on the client and the view-state modules.
 *
 * A session moves one work item at a time: fetch, annotate or review,
 * submit, repeat until the task reports nothing left. Submissions are
 * never optimistic (the view advances only on server ack) and only one
 * mutation may be in flight per session. An expired lease never loses
 * work silently: the session parks in "lease_lost" and asks for a
 * re-fetch.
 */
import { ApiError, type AnnoflowClient } from "./client.js";
import { buildSubmission, openSiaView, type SiaViewState } from "./sia.js";
import { buildReview, openMiaView, type MiaViewState } from "./mia.js";
import type { ReviewResult, SubmitSiaResult } from "./schemas.js";

export type SessionPhase = "idle" | "working" | "submitting" | "lease_lost" | "none_remaining";

export class MutationInFlightError extends Error {
  constructor() {
    super("a submission is already in flight for this session");
    this.name = "MutationInFlightError";
  }
}

export type SubmitOutcome<R> = { ok: true; result: R } | { ok: false; reason: "lease_lost" };

type SessionClient = Pick<AnnoflowClient, "nextItem" | "submitSia" | "nextCluster" | "reviewCluster">;

abstract class BaseSession<V, R> {
  phase: SessionPhase = "idle";
  view: V | null = null;
  /** Set when the lease expired; the UI should offer a re-fetch. */
  promptRefetch = false;
  lastResult: R | null = null;

  protected abstract fetchView(): Promise<V | null>;
  protected abstract send(view: V): Promise<R>;

  /** Lease the next work item, or learn that the task is drained. */
  async fetchNext(): Promise<SessionPhase> {
    if (this.phase === "submitting") throw new MutationInFlightError();
    this.promptRefetch = false;
    const view = await this.fetchView();
    this.view = view;
    this.phase = view === null ? "none_remaining" : "working";
    return this.phase;
  }

  /** Submit the current view and advance on ack only. */
  async submit(): Promise<SubmitOutcome<R>> {
    if (this.phase === "submitting") throw new MutationInFlightError();
    const view = this.view;
    if (this.phase !== "working" || view === null) {
      throw new Error(`nothing to submit in phase ${this.phase}`);
    }
    this.phase = "submitting";
    try {
      const result = await this.send(view);
      this.lastResult = result;
      this.view = null;
      this.phase = "idle";
      return { ok: true, result };
    } catch (error) {
      if (error instanceof ApiError && error.code === "lease_expired") {
        // keep the view so nothing the annotator did is lost silently
        this.phase = "lease_lost";
        this.promptRefetch = true;
        return { ok: false, reason: "lease_lost" };
      }
      this.phase = "working";
      throw error;
    }
  }
}

/** Drive a SIA task: lease an image, annotate it, submit, repeat. */
export class SiaSession extends BaseSession<SiaViewState, SubmitSiaResult> {
  constructor(
    private readonly client: SessionClient,
    readonly taskId: string,
  ) {
    super();
  }

  protected async fetchView(): Promise<SiaViewState | null> {
    const response = await this.client.nextItem(this.taskId);
    return response.status === "none_remaining" ? null : openSiaView(response);
  }

  protected send(view: SiaViewState): Promise<SubmitSiaResult> {
    return this.client.submitSia(this.taskId, buildSubmission(view));
  }

  /** Apply a view-state interaction, e.g. update(s => drawShape(s, "bbox", c)). */
  update(fn: (view: SiaViewState) => SiaViewState): SiaViewState {
    if (this.phase !== "working" || this.view === null) {
      throw new Error(`no active item in phase ${this.phase}`);
    }
    this.view = fn(this.view);
    return this.view;
  }
}

/** Drive a MIA task: lease a cluster, review it, submit, repeat. */
export class MiaSession extends BaseSession<MiaViewState, ReviewResult> {
  constructor(
    private readonly client: SessionClient,
    readonly taskId: string,
  ) {
    super();
  }

  protected async fetchView(): Promise<MiaViewState | null> {
    const response = await this.client.nextCluster(this.taskId);
    return response.status === "none_remaining" ? null : openMiaView(response);
  }

  protected send(view: MiaViewState): Promise<ReviewResult> {
    return this.client.reviewCluster(view.clusterId, buildReview(view));
  }

  update(fn: (view: MiaViewState) => MiaViewState): MiaViewState {
    if (this.phase !== "working" || this.view === null) {
      throw new Error(`no active cluster in phase ${this.phase}`);
    }
    this.view = fn(this.view);
    return this.view;
  }
}
