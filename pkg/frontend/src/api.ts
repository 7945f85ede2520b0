/**
 * Typed client for the cytoprobe HTTP+JSON API. All mutating calls attach a
 * generated idempotency token so network retries (or double-clicks that get
 * past the UI) can never record twice. Every incoming JSON body passes the
 * zero-knowledge guard before use.
 */

import { assertZeroKnowledge } from "./zk.js";

export interface Progress {
  answered: number;
  total: number;
  state: "created" | "in_progress" | "completed";
}

export interface PairTrialView {
  trial_id: string;
  kind: "pair";
  images: { left: string; right: string };
}

export interface SingleTrialView {
  trial_id: string;
  kind: "single";
  image: string;
}

export type TrialView = PairTrialView | SingleTrialView;

export interface NextTrialResponse {
  done: boolean;
  trial: TrialView | null;
  progress: Progress;
}

export interface SubmitAck {
  recorded: boolean;
  trial_id: string;
  answered: number;
  total: number;
  state: string;
}

export interface TaskItemView {
  id: string;
  image: string;
}

export interface TaskManifest {
  task_id: string;
  items: TaskItemView[];
  classes: string[];
}

export interface ScoreAck {
  task_id: string;
  annotator: string;
  points_delta: number;
  high_score: number;
  streak: number;
  reliability: number;
}

export interface LeaderboardRow {
  rank: number;
  annotator: string;
  high_score: number;
  reliability: number;
  probes_seen: number;
}

export interface AnnotatorScoreView {
  annotator: string;
  high_score: number;
  streak: number;
  reliability: number;
  probes_seen: number;
  probes_correct: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

let tokenCounter = 0;

export function newToken(): string {
  tokenCounter += 1;
  return `tok-${Date.now().toString(36)}-${tokenCounter}-${Math.random()
    .toString(36)
    .slice(2, 10)}`;
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(
        response.status,
        (body as { code?: string }).code ?? "error",
        (body as { message?: string }).message ?? response.statusText,
      );
    }
    assertZeroKnowledge(body);
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  createStudy(seed: number): Promise<{ study_id: string }> {
    return this.post("/studies", { seed });
  }

  startSession(
    studyId: string,
    participant: string,
    background?: string,
  ): Promise<{ session_id: string }> {
    return this.post(`/studies/${studyId}/sessions`, { participant, background });
  }

  nextTrial(sessionId: string): Promise<NextTrialResponse> {
    return this.request(`/sessions/${sessionId}/next`);
  }

  submitResponse(
    sessionId: string,
    trialId: string,
    answer: string,
    token: string,
  ): Promise<SubmitAck> {
    return this.post(`/sessions/${sessionId}/responses`, {
      trial_id: trialId,
      answer,
      token,
    });
  }

  issueTask(
    annotator: string,
    probeFraction = 0.5,
    realCount = 10,
  ): Promise<TaskManifest> {
    return this.post("/tasks", {
      annotator,
      probe_fraction: probeFraction,
      real_count: realCount,
    });
  }

  taskManifest(taskId: string): Promise<TaskManifest> {
    return this.request(`/tasks/${taskId}`);
  }

  submitAnnotations(
    taskId: string,
    labels: Record<string, string>,
    token: string,
  ): Promise<ScoreAck> {
    return this.post(`/tasks/${taskId}/annotations`, { labels, token });
  }

  leaderboard(): Promise<LeaderboardRow[]> {
    return this.request("/leaderboard");
  }

  annotatorScore(annotator: string): Promise<AnnotatorScoreView> {
    return this.request(`/annotators/${annotator}/score`);
  }

  /** Raw stimulus bytes (binary PPM). */
  async imageBytes(url: string): Promise<Uint8Array> {
    const response = await this.fetchImpl(this.baseUrl + url);
    if (!response.ok) {
      throw new ApiError(response.status, "image", `failed to fetch ${url}`);
    }
    return new Uint8Array(await response.arrayBuffer());
  }
}
