/**
 * Annotator flow: label every item of an injected task (probes are
 * indistinguishable in the payload by construction), submit in batches, and
 * surface the gamified score movement after each batch.
 */

import { ApiClient, newToken, ScoreAck, TaskItemView, TaskManifest } from "./api.js";

export interface AnnotationPresenter {
  /** Presents one cell image and resolves with the chosen class. */
  present(item: TaskItemView, classes: string[], index: number, total: number): Promise<string>;
  /** Called after each batch ack so a score panel can update live. */
  scoreUpdated?(ack: ScoreAck): void;
}

export class AnnotationRunner {
  private batchTokens = new Map<number, string>();

  constructor(
    private api: ApiClient,
    private manifest: TaskManifest,
    private batchSize = 10,
  ) {}

  /** Labels all items in batches; returns the final score acknowledgement. */
  async run(presenter: AnnotationPresenter): Promise<ScoreAck> {
    const { items, classes, task_id } = this.manifest;
    let lastAck: ScoreAck | null = null;
    for (let start = 0; start < items.length; start += this.batchSize) {
      const batch = items.slice(start, start + this.batchSize);
      const labels: Record<string, string> = {};
      for (let i = 0; i < batch.length; i++) {
        const choice = await presenter.present(
          batch[i],
          classes,
          start + i,
          items.length,
        );
        if (!classes.includes(choice)) {
          throw new Error(`unknown class ${choice}`);
        }
        labels[batch[i].id] = choice;
      }
      const batchIndex = Math.floor(start / this.batchSize);
      let token = this.batchTokens.get(batchIndex);
      if (!token) {
        token = newToken();
        this.batchTokens.set(batchIndex, token);
      }
      lastAck = await this.api.submitAnnotations(task_id, labels, token);
      presenter.scoreUpdated?.(lastAck);
    }
    if (!lastAck) throw new Error("task had no items");
    return lastAck;
  }
}
