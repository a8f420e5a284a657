/**
 * Browser wiring: fetch -> view models -> rendered strings -> DOM, plus
 * event handling for case selection, decision submission (optimistic, with
 * rollback on conflict), clock stepping, and the A/B/C study-mode toggle.
 */

import { ApiError, ReviewApi } from "./api.js";
import type { CaseStatus, CaseSummary } from "./api.js";
import {
  renderBanner,
  renderClock,
  renderDecisionForm,
  renderDemographics,
  renderEvidence,
  renderQueue,
  renderTimeline,
} from "./render.js";
import {
  buildCaseView,
  buildQueueRow,
  buildTimelineView,
  emptyDecision,
  toDecisionRequest,
  type DecisionFormState,
  type DisplayMode,
} from "./viewmodel.js";

const params = new URLSearchParams(window.location.search);
const api = new ReviewApi(params.get("api") ?? "http://127.0.0.1:8230");

interface UiState {
  mode: DisplayMode;
  filter: CaseStatus | undefined;
  cases: CaseSummary[];
  selected: string | null;
  decision: DecisionFormState;
  banner: string | null;
}

const state: UiState = {
  mode: (params.get("mode") as DisplayMode) || "C",
  filter: undefined,
  cases: [],
  selected: null,
  decision: { ...emptyDecision },
  banner: null,
};

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshClock(): Promise<void> {
  const clock = await api.clock();
  el("clock").innerHTML = renderClock(clock.week, clock.date, clock.end_week);
}

async function refreshQueue(): Promise<void> {
  const page = await api.listCases(state.filter);
  state.cases = page.cases;
  const rows = page.cases.map((c) => buildQueueRow(c, state.mode));
  el("queue").innerHTML = renderQueue(rows, state.selected);
}

async function refreshCase(): Promise<void> {
  if (!state.selected) {
    el("case").innerHTML = `<p class="hint">Select a case from the queue.</p>`;
    return;
  }
  const [payload, timeline] = await Promise.all([
    api.evidence(state.selected),
    api.timeline(state.selected),
  ]);
  const view = buildCaseView(payload, state.mode);
  el("case").innerHTML =
    renderDemographics(view) +
    `<div class="panel-right">` +
    `<h3>pregnancy probability</h3>` +
    renderTimeline(buildTimelineView(timeline)) +
    `<h3>evidence</h3>` +
    (state.mode === "C" ? renderEvidence(view.evidence) : `<p class="hint">hidden in mode ${state.mode}</p>`) +
    `<h3>decision</h3>` +
    renderDecisionForm(state.decision, payload.status) +
    `</div>`;
}

function showBanner(message: string | null): void {
  state.banner = message;
  el("banner").innerHTML = renderBanner(message);
}

async function refreshAll(): Promise<void> {
  try {
    await refreshClock();
    await refreshQueue();
    await refreshCase();
    showBanner(null);
  } catch (err) {
    showBanner(err instanceof Error ? err.message : String(err));
  }
}

async function submitDecision(): Promise<void> {
  if (!state.selected) return;
  const patient = state.selected;
  const body = toDecisionRequest(state.decision);
  // optimistic: mark reviewed locally, roll back to server truth on conflict
  const index = state.cases.findIndex((c) => c.patient_id === patient);
  if (index >= 0) state.cases[index] = { ...state.cases[index]!, status: "reviewed" };
  el("queue").innerHTML = renderQueue(
    state.cases.map((c) => buildQueueRow(c, state.mode)),
    state.selected,
  );
  try {
    await api.submitDecision(patient, body);
    state.decision = { ...emptyDecision };
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      showBanner("Decision already recorded for this case; showing the stored state.");
    } else {
      showBanner(err instanceof Error ? err.message : String(err));
    }
  }
  await refreshQueue();
  await refreshCase();
}

function wireEvents(): void {
  el("queue").addEventListener("click", (event) => {
    const row = (event.target as HTMLElement).closest<HTMLElement>("[data-patient]");
    if (!row) return;
    state.selected = row.dataset.patient ?? null;
    state.decision = { ...emptyDecision };
    void refreshAll();
  });

  el("clock").addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest<HTMLElement>("[data-step]");
    if (!button) return;
    const weeks = Number(button.dataset.step);
    void api.advanceClock(weeks).then(refreshAll);
  });

  el("banner").addEventListener("click", (event) => {
    if ((event.target as HTMLElement).closest("[data-retry]")) void refreshAll();
  });

  el("mode").addEventListener("change", (event) => {
    state.mode = (event.target as HTMLSelectElement).value as DisplayMode;
    void refreshAll();
  });

  el("filter").addEventListener("change", (event) => {
    const value = (event.target as HTMLSelectElement).value;
    state.filter = value === "all" ? undefined : (value as CaseStatus);
    void refreshQueue();
  });

  el("case").addEventListener("change", (event) => {
    const target = event.target as HTMLInputElement;
    if (target.name === "call") state.decision.call = target.value === "yes";
    if (target.name === "complication") {
      state.decision.complication = target.value as DecisionFormState["complication"];
    }
    if (target.name === "note") state.decision.note = target.value;
    void refreshCase();
  });

  el("case").addEventListener("submit", (event) => {
    event.preventDefault();
    void submitDecision();
  });
}

wireEvents();
void refreshAll();
