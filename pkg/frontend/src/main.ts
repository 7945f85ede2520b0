/**
 * DOM shell: hash-routed views for participants (#study), annotators
 * (#annotate) and the leaderboard (#leaderboard). All state lives on the
 * server; this file only wires clicks to the runners.
 */

import { AnnotationRunner } from "./annotate.js";
import { ApiClient, Progress, ScoreAck, TaskItemView, TrialView } from "./api.js";
import { refreshLeaderboard } from "./leaderboard.js";
import { decodePpm, drawToCanvas, integerScale } from "./ppm.js";
import { PairAnswer, SessionRunner, SingleAnswer } from "./session.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(tag: string, cls?: string, text?: string): T {
  const node = document.createElement(tag) as T;
  if (cls) node.className = cls;
  if (text) node.textContent = text;
  return node;
}

function clearMain(): HTMLElement {
  const main = document.getElementById("main")!;
  main.innerHTML = "";
  return main;
}

async function paintStimulus(url: string, canvas: HTMLCanvasElement): Promise<void> {
  const image = decodePpm(await api.imageBytes(url));
  const scale = integerScale(image.width, 256);
  drawToCanvas(image, canvas, scale);
}

/** Resolves with the participant's single committed answer; buttons disarm
 * after the first click so a trial can never be answered twice from the UI. */
function askOnce<T extends string>(
  container: HTMLElement,
  choices: Array<[label: string, value: T]>,
): Promise<T> {
  return new Promise((resolve) => {
    const bar = el<HTMLDivElement>("div", "answer-bar");
    const buttons: HTMLButtonElement[] = [];
    for (const [label, value] of choices) {
      const button = el<HTMLButtonElement>("button", "answer", label);
      button.addEventListener("click", () => {
        buttons.forEach((b) => (b.disabled = true));
        resolve(value);
      });
      buttons.push(button);
      bar.appendChild(button);
    }
    container.appendChild(bar);
  });
}

function progressLine(progress: Progress): string {
  return `answered ${progress.answered} of ${progress.total}`;
}

// ---------------------------------------------------------------------------
// participant view

async function studyView(): Promise<void> {
  const main = clearMain();
  const form = el<HTMLDivElement>("div", "setup");
  const studyInput = el<HTMLInputElement>("input");
  studyInput.placeholder = "study id (blank: new study)";
  const nameInput = el<HTMLInputElement>("input");
  nameInput.placeholder = "participant pseudonym";
  const backgroundSelect = el<HTMLSelectElement>("select");
  for (const bg of ["", "computer science", "medical engineering", "other"]) {
    const opt = el<HTMLOptionElement>("option", undefined, bg || "background (optional)");
    opt.value = bg;
    backgroundSelect.appendChild(opt);
  }
  const start = el<HTMLButtonElement>("button", undefined, "start session");
  form.append(studyInput, nameInput, backgroundSelect, start);
  main.appendChild(form);

  start.addEventListener("click", async () => {
    const participant = nameInput.value.trim();
    if (!participant) {
      alert("a pseudonym is required");
      return;
    }
    let studyId = studyInput.value.trim();
    if (!studyId) {
      studyId = (await api.createStudy(Math.floor(Math.random() * 1e9))).study_id;
    }
    const { session_id } = await api.startSession(
      studyId,
      participant,
      backgroundSelect.value || undefined,
    );
    main.innerHTML = "";
    const status = el<HTMLParagraphElement>("p", "status");
    const stage = el<HTMLDivElement>("div", "stage");
    main.append(status, stage);

    const runner = new SessionRunner(api, session_id);
    const summary = await runner.run({
      present: async (trial: TrialView, progress: Progress) => {
        stage.innerHTML = "";
        status.textContent = `${progressLine(progress)} — session ${session_id}`;
        if (trial.kind === "pair") {
          const caption = el<HTMLParagraphElement>(
            "p",
            "prompt",
            "One of these two cells is synthetic. Click the fake one.",
          );
          const pair = el<HTMLDivElement>("div", "pair");
          const left = el<HTMLCanvasElement>("canvas", "stimulus");
          const right = el<HTMLCanvasElement>("canvas", "stimulus");
          pair.append(left, right);
          stage.append(caption, pair);
          await Promise.all([
            paintStimulus(trial.images.left, left),
            paintStimulus(trial.images.right, right),
          ]);
          return askOnce<PairAnswer>(stage, [
            ["left is fake", "left"],
            ["right is fake", "right"],
          ]);
        }
        const caption = el<HTMLParagraphElement>(
          "p",
          "prompt",
          "Is this cell image real or fake?",
        );
        const canvas = el<HTMLCanvasElement>("canvas", "stimulus");
        stage.append(caption, canvas);
        await paintStimulus(trial.image, canvas);
        return askOnce<SingleAnswer>(stage, [
          ["real", "real"],
          ["fake", "fake"],
        ]);
      },
      completed: (progress: Progress) => {
        stage.innerHTML = "";
        status.textContent = "";
        stage.appendChild(
          el<HTMLHeadingElement>(
            "h2",
            undefined,
            `Session complete — ${progress.answered} of ${progress.total} trials answered. Thank you!`,
          ),
        );
      },
    });
    console.log("session finished:", summary.state);
  });
}

// ---------------------------------------------------------------------------
// annotator view

async function annotateView(): Promise<void> {
  const main = clearMain();
  const form = el<HTMLDivElement>("div", "setup");
  const nameInput = el<HTMLInputElement>("input");
  nameInput.placeholder = "annotator id";
  const start = el<HTMLButtonElement>("button", undefined, "start task");
  form.append(nameInput, start);
  main.appendChild(form);

  start.addEventListener("click", async () => {
    const annotator = nameInput.value.trim();
    if (!annotator) {
      alert("an annotator id is required");
      return;
    }
    const manifest = await api.issueTask(annotator);
    main.innerHTML = "";
    const panel = el<HTMLDivElement>("div", "score-panel");
    const scoreLine = el<HTMLParagraphElement>("p", "score", "score: 0");
    const boardTable = el<HTMLTableElement>("table", "leaderboard");
    panel.append(scoreLine, boardTable);
    const stage = el<HTMLDivElement>("div", "stage");
    main.append(stage, panel);
    await refreshLeaderboard(api, boardTable);

    const runner = new AnnotationRunner(api, manifest);
    const finalAck = await runner.run({
      present: async (item: TaskItemView, classes: string[], index, total) => {
        stage.innerHTML = "";
        stage.appendChild(
          el<HTMLParagraphElement>("p", "prompt", `Cell ${index + 1} of ${total}: which type is it?`),
        );
        const canvas = el<HTMLCanvasElement>("canvas", "stimulus");
        stage.appendChild(canvas);
        await paintStimulus(item.image, canvas);
        return askOnce<string>(
          stage,
          classes.map((c) => [c, c]),
        );
      },
      scoreUpdated: async (ack: ScoreAck) => {
        scoreLine.textContent =
          `score: ${ack.high_score} (+${ack.points_delta})  ` +
          `streak: ${ack.streak}  reliability: ${ack.reliability.toFixed(3)}`;
        await refreshLeaderboard(api, boardTable);
      },
    });
    stage.innerHTML = "";
    stage.appendChild(
      el<HTMLHeadingElement>("h2", undefined, `Task done — final score ${finalAck.high_score}.`),
    );
  });
}

async function leaderboardView(): Promise<void> {
  const main = clearMain();
  const table = el<HTMLTableElement>("table", "leaderboard");
  main.appendChild(table);
  await refreshLeaderboard(api, table);
}

// ---------------------------------------------------------------------------

const routes: Record<string, () => Promise<void>> = {
  "#study": studyView,
  "#annotate": annotateView,
  "#leaderboard": leaderboardView,
};

function route(): void {
  const view = routes[window.location.hash] ?? studyView;
  void view();
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", route);
