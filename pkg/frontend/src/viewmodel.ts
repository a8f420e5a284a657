/**
 * Pure view-model builders. Everything shown on screen is derived here from
 * API payloads and nothing else, so the bindings are snapshot-testable
 * without a DOM. The study display modes gate what the reviewer sees:
 *
 *   A - no model output at all (control)
 *   B - model prediction only
 *   C - prediction plus code-level evidence
 */

import type {
  CaseSummary,
  Complication,
  DecisionRequest,
  EvidenceItem,
  EvidencePayload,
  Timeline,
} from "./api.js";

export type DisplayMode = "A" | "B" | "C";

export interface QueueRowView {
  patientId: string;
  status: string;
  surfacedAt: number;
  age: number;
  race: string;
  predictionBadge: string | null; // null when the mode hides predictions
  probability: number | null;
}

export interface EvidenceView {
  label: string;
  weight: number;
  polarity: "risk_increasing" | "risk_decreasing";
  source: string;
  color: string;
  intensity: number; // 0..1, scaled by |weight| within the list
}

export interface HistoryBadges {
  db: boolean;
  ht: boolean;
}

export interface CaseView {
  patientId: string;
  demographics: { age: number; sex: string; race: string };
  badges: HistoryBadges;
  prediction: {
    predicted: Complication;
    probability: number;
    pNone: number;
    pGht: number;
    pGdb: number;
  } | null;
  evidence: EvidenceView[];
}

export interface TimelinePointView {
  week: number;
  asOf: string;
  value: number;
  call: boolean;
  anchor: string;
}

export interface TimelineView {
  points: TimelinePointView[];
  clockWeek: number;
  startWeek: number | null;
  endWeek: number | null;
  maxWeek: number;
}

export function predictedProbability(p: CaseSummary["prediction"]): number {
  switch (p.predicted) {
    case "GHT":
      return p.p_ght;
    case "GDB":
      return p.p_gdb;
    default:
      return p.p_none;
  }
}

export function buildQueueRow(summary: CaseSummary, mode: DisplayMode): QueueRowView {
  const showPrediction = mode !== "A";
  return {
    patientId: summary.patient_id,
    status: summary.status,
    surfacedAt: summary.surfaced_at,
    age: summary.demographics.age,
    race: summary.demographics.race,
    predictionBadge: showPrediction ? summary.prediction.predicted : null,
    probability: showPrediction ? predictedProbability(summary.prediction) : null,
  };
}

/** Red for risk-increasing evidence, green for risk-decreasing; intensity
 * scales with |weight| relative to the largest weight in the list. */
export function buildEvidenceViews(items: EvidenceItem[]): EvidenceView[] {
  const maxAbs = items.reduce((m, item) => Math.max(m, Math.abs(item.weight)), 0);
  return items.map((item) => {
    const intensity = maxAbs > 0 ? Math.abs(item.weight) / maxAbs : 0;
    return {
      label: item.feature_name || String(item.concept_id ?? ""),
      weight: item.weight,
      polarity: item.polarity,
      source: item.source,
      color: item.polarity === "risk_increasing" ? "red" : "green",
      intensity,
    };
  });
}

export function buildCaseView(
  payload: EvidencePayload,
  mode: DisplayMode,
  history: HistoryBadges | null = null,
): CaseView {
  const group = payload.prediction.history_group;
  const badges: HistoryBadges = history ?? {
    db: group === "db_only" || group === "db_and_ht",
    ht: group === "ht_only" || group === "db_and_ht",
  };
  return {
    patientId: payload.patient_id,
    demographics: {
      age: payload.demographics.age,
      sex: payload.demographics.sex,
      race: payload.demographics.race,
    },
    badges,
    prediction:
      mode === "A"
        ? null
        : {
            predicted: payload.prediction.predicted,
            probability: predictedProbability(payload.prediction),
            pNone: payload.prediction.p_none,
            pGht: payload.prediction.p_ght,
            pGdb: payload.prediction.p_gdb,
          },
    evidence: mode === "C" ? buildEvidenceViews(payload.evidence) : [],
  };
}

export function buildTimelineView(timeline: Timeline): TimelineView {
  const points = timeline.weeks.map((w) => ({
    week: w.week,
    asOf: w.as_of,
    value: w.q_smooth,
    call: w.y_hat === 1,
    anchor: w.anchor_hit,
  }));
  // the server already truncates at the clock; clamp defensively so a stale
  // cache can never draw past it
  const visible = points.filter((p) => p.week <= timeline.clock_week);
  return {
    points: visible,
    clockWeek: timeline.clock_week,
    startWeek: timeline.inferred_start_week,
    endWeek: timeline.inferred_end_week,
    maxWeek: visible.length ? visible[visible.length - 1]!.week : 0,
  };
}

export interface DecisionFormState {
  call: boolean | null;
  complication: Complication;
  note: string;
}

export const emptyDecision: DecisionFormState = {
  call: null,
  complication: "none",
  note: "",
};

/** Submit stays disabled until the call question is answered. */
export function canSubmit(state: DecisionFormState): boolean {
  return state.call !== null;
}

export function toDecisionRequest(state: DecisionFormState): DecisionRequest {
  if (!canSubmit(state)) {
    throw new Error("decision form incomplete: answer the call question first");
  }
  return {
    call: state.call as boolean,
    predicted_complication: state.complication,
    note: state.note,
  };
}
