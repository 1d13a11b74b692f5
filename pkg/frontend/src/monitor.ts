/**
 * Pipeline instance monitor: turns instance detail into a paintable graph
 * view and keeps it fresh by polling. The rendered node states are a
 * direct mapping of the server response; nothing is inferred client-side.
 */
import type { EngineEvent, ElementSnapshot, ExportRecord, InstanceDetail, TaskProgress } from "./schemas.js";

export type NodeTone = "grey" | "blue" | "green" | "red";

const TONES: Record<ElementSnapshot["state"], NodeTone> = {
  pending: "grey",
  in_progress: "blue",
  finished: "green",
  error: "red",
};

export interface GraphNode {
  elementId: string;
  state: ElementSnapshot["state"];
  tone: NodeTone;
  iteration: number;
  /** Loop nodes show their current pass as a counter badge. */
  badge?: string;
  loop?: { current: number; max: number | null; breakFlag: boolean };
  /** Failure text from the most recent errored event, for red nodes. */
  diagnostics?: string;
}

export interface GraphView {
  instanceId: string;
  template: string;
  owner: string;
  allFinished: boolean;
  nodes: GraphNode[];
  tasks: TaskProgress[];
  /** Download links, relative to the API base. */
  exports: Array<ExportRecord & { path: string }>;
}

export function renderInstance(detail: InstanceDetail, events?: EngineEvent[]): GraphView {
  const lastErrorByElement = new Map<string, string>();
  for (const e of events ?? []) {
    if (e.kind === "errored") lastErrorByElement.set(e.element_id, e.payload);
  }
  const nodes: GraphNode[] = Object.entries(detail.elements).map(([elementId, snap]) => {
    const node: GraphNode = {
      elementId,
      state: snap.state,
      tone: TONES[snap.state],
      iteration: snap.iteration,
    };
    if (snap.loop) {
      node.loop = {
        current: snap.loop.current_iteration,
        max: snap.loop.max_iteration,
        breakFlag: snap.loop.break_flag,
      };
      node.badge = String(snap.loop.current_iteration);
    }
    const diagnostics = lastErrorByElement.get(elementId);
    if (snap.state === "error" && diagnostics !== undefined) {
      node.diagnostics = diagnostics;
    }
    return node;
  });
  return {
    instanceId: detail.instance_id,
    template: detail.template,
    owner: detail.owner,
    allFinished: detail.all_finished,
    nodes,
    tasks: Object.values(detail.tasks),
    exports: detail.exports.map((e) => ({ ...e, path: `/exports/${e.export_id}` })),
  };
}

export interface MonitorClient {
  instanceDetail(instanceId: string): Promise<InstanceDetail>;
  instanceEvents(instanceId: string): Promise<{ events: EngineEvent[] }>;
}

export interface MonitorOptions {
  onUpdate: (view: GraphView) => void;
  onError?: (error: unknown) => void;
  /** Poll period; the server offers no push channel. */
  intervalMs?: number;
}

export class InstanceMonitor {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly client: MonitorClient,
    private readonly instanceId: string,
    private readonly options: MonitorOptions,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.poll(), this.options.intervalMs ?? 2000);
    void this.poll();
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  /** One refresh cycle; skipped when the previous one is still pending. */
  async poll(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      const detail = await this.client.instanceDetail(this.instanceId);
      let events: EngineEvent[] | undefined;
      if (Object.values(detail.elements).some((e) => e.state === "error")) {
        events = (await this.client.instanceEvents(this.instanceId)).events;
      }
      this.options.onUpdate(renderInstance(detail, events));
    } catch (error) {
      this.options.onError?.(error);
    } finally {
      this.inFlight = false;
    }
  }
}
