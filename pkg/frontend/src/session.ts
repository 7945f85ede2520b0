/**
 * Participant flow state machine, UI-agnostic: the server owns all session
 * state, so the runner just loops "fetch next trial -> present -> submit".
 * Reloading a page mid-session resumes at the first unanswered trial
 * because nothing of the progress lives on the client.
 */

import { ApiClient, newToken, Progress, SubmitAck, TrialView } from "./api.js";

export type PairAnswer = "left" | "right";
export type SingleAnswer = "real" | "fake";

export interface TrialPresenter {
  /** Presents a trial and resolves with the participant's answer. */
  present(trial: TrialView, progress: Progress): Promise<PairAnswer | SingleAnswer>;
  /** Called after the final trial is acknowledged. */
  completed?(progress: Progress): void;
}

export class SessionRunner {
  /** One token per trial id: retries reuse it, so a double submission of
   * the same trial can only ever record once. */
  private tokens = new Map<string, string>();

  constructor(
    private api: ApiClient,
    private sessionId: string,
  ) {}

  tokenFor(trialId: string): string {
    let token = this.tokens.get(trialId);
    if (!token) {
      token = newToken();
      this.tokens.set(trialId, token);
    }
    return token;
  }

  async submit(trialId: string, answer: string): Promise<SubmitAck> {
    return this.api.submitResponse(
      this.sessionId,
      trialId,
      answer,
      this.tokenFor(trialId),
    );
  }

  /** Drive the session to completion; resumes wherever the server says. */
  async run(presenter: TrialPresenter): Promise<Progress> {
    for (;;) {
      const next = await this.api.nextTrial(this.sessionId);
      if (next.done || next.trial === null) {
        presenter.completed?.(next.progress);
        return next.progress;
      }
      const trial = next.trial;
      const answer = await presenter.present(trial, next.progress);
      const valid =
        trial.kind === "pair"
          ? answer === "left" || answer === "right"
          : answer === "real" || answer === "fake";
      if (!valid) {
        throw new Error(`answer ${answer} does not fit a ${trial.kind} trial`);
      }
      await this.submit(trial.trial_id, answer);
    }
  }
}
