import type { CaseSummary, EvidencePayload, Timeline } from "../src/api.js";

export const caseSummary: CaseSummary = {
  patient_id: "P00015",
  status: "pending",
  surfaced_at: 60,
  demographics: { patient_id: "P00015", age: 33, sex: "female", race: "white" },
  prediction: {
    p_none: 0.21,
    p_ght: 0.63,
    p_gdb: 0.16,
    predicted: "GHT",
    history_group: "ht_only",
  },
  start_source: "anchor",
};

export const evidencePayload: EvidencePayload = {
  patient_id: "P00015",
  surfaced_at: 60,
  status: "pending",
  demographics: { patient_id: "P00015", age: 33, sex: "female", race: "white" },
  prediction: {
    p_none: 0.21,
    p_ght: 0.63,
    p_gdb: 0.16,
    predicted: "GHT",
    history_group: "ht_only",
  },
  evidence: [
    {
      concept_id: 6002,
      feature_name: "6002@730d",
      window: 730,
      weight: 0.9,
      polarity: "risk_increasing",
      source: "group",
    },
    {
      concept_id: 1117,
      feature_name: "1117@10000d",
      window: 10000,
      weight: -0.1,
      polarity: "risk_decreasing",
      source: "group",
    },
    {
      concept_id: 5101,
      feature_name: "5101",
      window: null,
      weight: 0,
      polarity: "risk_increasing",
      source: "anchor",
    },
  ],
};

export const timeline: Timeline = {
  patient_id: "P00015",
  clock_week: 10,
  weeks: Array.from({ length: 11 }, (_, week) => ({
    week,
    as_of: `2020-0${1 + Math.floor(week / 5)}-0${1 + (week % 5)}`,
    f: week >= 6 ? 0.9 : 0.05,
    q_smooth: week >= 6 ? 0.8 - 0.01 * (10 - week) : 0.05,
    y_hat: week >= 7 ? 1 : 0,
    anchor_hit: week === 9 ? "start_code" : "none",
  })),
  inferred_start_week: 8,
  inferred_end_week: null,
};
