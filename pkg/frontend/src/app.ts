/** View state and controller for the two-round annotation screens. */

import { AnnotationClient, ConflictError, NextPayload, Progress, SampleView } from "./api.js";

export type Status = "loading" | "ready" | "submitting" | "finished" | "error";

export interface ViewState {
  sessionId: string;
  round: number;
  annotatorId: string;
  sample: SampleView | null;
  progress: Progress;
  status: Status;
  message: string;
}

const ROUND1_KEYS: Readonly<Record<string, string>> = { a: "Accept", r: "Reject" };
const ROUND2_KEYS: Readonly<Record<string, string>> = { j: "Approve", k: "Disapprove" };

const JUDGE_FIELDS: readonly (keyof SampleView)[] = [
  "judge_decision",
  "judge_explanation",
  "round1_decision",
];

/** Round-1 payloads must stay blind to the judge; a leak is a hard error, not a render. */
export function leakedJudgeFields(payload: NextPayload): string[] {
  if (payload.round !== 1 || payload.sample === null) {
    return [];
  }
  const sample = payload.sample;
  return JUDGE_FIELDS.filter((field) => sample[field] !== undefined);
}

export class AnnotationApp {
  readonly state: ViewState;
  private readonly client: AnnotationClient;
  private readonly root: HTMLElement;

  constructor(client: AnnotationClient, sessionId: string, root: HTMLElement) {
    this.client = client;
    this.root = root;
    this.state = {
      sessionId,
      round: 0,
      annotatorId: "",
      sample: null,
      progress: { done: 0, total: 0 },
      status: "loading",
      message: "",
    };
  }

  async start(): Promise<void> {
    await this.refresh();
  }

  /** Pull the next undecided sample from the server; the server is the only cursor. */
  async refresh(): Promise<void> {
    this.state.status = "loading";
    this.renderInto();
    try {
      const payload = await this.client.fetchNext(this.state.sessionId);
      this.applyPayload(payload);
    } catch (error) {
      this.applyFailure(error);
    }
    this.renderInto();
  }

  private applyPayload(payload: NextPayload): void {
    const leaked = leakedJudgeFields(payload);
    if (leaked.length > 0) {
      this.state.status = "error";
      this.state.message = `round-1 payload leaked judge fields: ${leaked.join(", ")}`;
      return;
    }
    this.state.round = payload.round;
    this.state.annotatorId = payload.annotator_id;
    this.state.progress = payload.progress;
    this.state.sample = payload.sample;
    this.state.message = "";
    this.state.status = payload.finished ? "finished" : "ready";
  }

  private applyFailure(error: unknown): void {
    this.state.status = "error";
    this.state.message = error instanceof Error ? error.message : String(error);
  }

  /**
   * Submit a decision for the sample on screen, then advance to the next one.
   * Repeated triggers while a submission is in flight are dropped, and a
   * conflict means the decision already exists, so both paths converge on
   * resuming from the server's view of the session.
   */
  async decide(decision: string): Promise<void> {
    if (this.state.status !== "ready" || this.state.sample === null) {
      return;
    }
    const sampleId = this.state.sample.sample_id;
    this.state.status = "submitting";
    this.renderInto();
    try {
      await this.client.submitDecision(this.state.sessionId, sampleId, decision);
    } catch (error) {
      if (!(error instanceof ConflictError)) {
        this.applyFailure(error);
        this.renderInto();
        return;
      }
    }
    await this.refresh();
  }

  handleKey(key: string): void {
    const bindings = this.state.round === 2 ? ROUND2_KEYS : ROUND1_KEYS;
    const decision = bindings[key.toLowerCase()];
    if (decision !== undefined) {
      void this.decide(decision);
    }
  }

  private renderInto(): void {
    this.root.replaceChildren(this.render());
  }

  render(): HTMLElement {
    const container = element("div", "screen");
    container.append(this.renderHeader());
    switch (this.state.status) {
      case "loading":
        container.append(note("loading", "Loading..."));
        break;
      case "error":
        container.append(note("error", this.state.message));
        break;
      case "finished":
        container.append(
          note("finished", `Round ${this.state.round} complete. All samples are decided.`),
        );
        break;
      case "ready":
      case "submitting":
        if (this.state.sample !== null) {
          container.append(this.renderSample(this.state.sample));
          container.append(this.renderControls());
        }
        break;
    }
    return container;
  }

  private renderHeader(): HTMLElement {
    const header = element("header", "session-header");
    const title = element("h1", "session-title");
    title.textContent =
      this.state.round > 0 ? `Round ${this.state.round} review` : "Annotation session";
    header.append(title);

    const meta = element("p", "session-meta");
    meta.textContent = this.state.annotatorId
      ? `Session ${this.state.sessionId}, annotator ${this.state.annotatorId}`
      : `Session ${this.state.sessionId}`;
    header.append(meta);

    const { done, total } = this.state.progress;
    const counter = element("p", "progress-counter");
    counter.textContent = `${done} of ${total} decided`;
    header.append(counter);

    const bar = document.createElement("progress");
    bar.className = "progress-bar";
    bar.max = Math.max(total, 1);
    bar.value = done;
    header.append(bar);
    return header;
  }

  private renderSample(sample: SampleView): HTMLElement {
    const section = element("section", "sample");
    section.append(this.renderPanes(sample));
    if (this.state.round === 2) {
      section.append(this.renderJudgePanel(sample));
    }
    return section;
  }

  private renderPanes(sample: SampleView): HTMLElement {
    const panes = element("div", "panes");
    panes.append(
      pane("reference-pane", "Reference answer", sample.reference_answer),
      pane("response-pane", "Model response", sample.llm_response),
    );
    return panes;
  }

  private renderJudgePanel(sample: SampleView): HTMLElement {
    const panel = element("aside", "judge-panel");
    const heading = element("h2", "pane-title");
    heading.textContent = "Automatic judge";
    panel.append(heading);

    const verdict = element("p", "judge-verdict");
    verdict.textContent = `Judge decision: ${sample.judge_decision ?? ""}`;
    panel.append(verdict);

    const explanation = element("pre", "judge-explanation");
    explanation.textContent = sample.judge_explanation ?? "";
    panel.append(explanation);

    const earlier = element("p", "round1-recap");
    earlier.textContent = `Your round-1 decision: ${sample.round1_decision ?? ""}`;
    panel.append(earlier);
    return panel;
  }

  private renderControls(): HTMLElement {
    const controls = element("div", "controls");
    const disabled = this.state.status !== "ready";
    if (this.state.round === 2) {
      controls.append(
        this.decisionButton("Approve", "J", disabled),
        this.decisionButton("Disapprove", "K", disabled),
      );
    } else {
      controls.append(
        this.decisionButton("Accept", "A", disabled),
        this.decisionButton("Reject", "R", disabled),
      );
    }
    return controls;
  }

  private decisionButton(decision: string, key: string, disabled: boolean): HTMLButtonElement {
    const button = document.createElement("button");
    button.type = "button";
    button.className = `decision decision-${decision.toLowerCase()}`;
    button.dataset.decision = decision;
    button.disabled = disabled;
    button.textContent = `${decision} (${key})`;
    button.addEventListener("click", () => {
      void this.decide(decision);
    });
    return button;
  }
}

function element(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}

function note(kind: string, text: string): HTMLElement {
  const node = element("p", `note note-${kind}`);
  node.textContent = text;
  return node;
}

function pane(className: string, title: string, body: string): HTMLElement {
  const section = element("section", `pane ${className}`);
  const heading = element("h2", "pane-title");
  heading.textContent = title;
  const text = element("pre", "pane-body");
  text.textContent = body;
  section.append(heading, text);
  return section;
}
