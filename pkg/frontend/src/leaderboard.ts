/** Leaderboard panel: a straight render of the server's ordering. */

import { ApiClient, LeaderboardRow } from "./api.js";

export function renderLeaderboard(rows: LeaderboardRow[], table: HTMLTableElement): void {
  table.innerHTML = "";
  const head = table.createTHead().insertRow();
  for (const label of ["#", "annotator", "score", "reliability", "probes"]) {
    const cell = document.createElement("th");
    cell.textContent = label;
    head.appendChild(cell);
  }
  const body = table.createTBody();
  for (const row of rows) {
    const tr = body.insertRow();
    tr.insertCell().textContent = String(row.rank);
    tr.insertCell().textContent = row.annotator;
    tr.insertCell().textContent = String(row.high_score);
    tr.insertCell().textContent = row.reliability.toFixed(3);
    tr.insertCell().textContent = String(row.probes_seen);
  }
}

export async function refreshLeaderboard(
  api: ApiClient,
  table: HTMLTableElement,
): Promise<void> {
  renderLeaderboard(await api.leaderboard(), table);
}
