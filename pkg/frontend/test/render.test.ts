import { describe, expect, it } from "vitest";

import {
  renderDecisionForm,
  renderDemographics,
  renderEvidence,
  renderQueue,
  renderTimeline,
} from "../src/render.js";
import {
  buildCaseView,
  buildEvidenceViews,
  buildQueueRow,
  buildTimelineView,
  emptyDecision,
} from "../src/viewmodel.js";
import { caseSummary, evidencePayload, timeline } from "./fixtures.js";

describe("queue rendering", () => {
  it("snapshots the full binding", () => {
    const html = renderQueue([buildQueueRow(caseSummary, "C")], "P00015");
    expect(html).toMatchSnapshot();
    expect(html).toContain("P00015");
    expect(html).toContain("wk 60");
    expect(html).toContain("GHT 63%");
  });

  it("omits the badge cell in mode A", () => {
    const html = renderQueue([buildQueueRow(caseSummary, "A")], null);
    expect(html).not.toContain("badge-ght");
    expect(html).not.toContain("63%");
  });
});

describe("evidence rendering", () => {
  it("renders intensities that differ visibly between weights", () => {
    const html = renderEvidence(buildEvidenceViews(evidencePayload.evidence));
    expect(html).toMatchSnapshot();
    // weight 0.9 -> full alpha; weight 0.1 -> much lighter
    expect(html).toContain("rgba(200, 32, 32, 1.000)");
    expect(html).toContain("rgba(24, 140, 60, 0.333)");
  });

  it("escapes labels", () => {
    const html = renderEvidence([
      {
        label: "<script>x</script>",
        weight: 1,
        polarity: "risk_increasing",
        source: "group",
        color: "red",
        intensity: 1,
      },
    ]);
    expect(html).not.toContain("<script>");
  });
});

describe("demographics panel", () => {
  it("shows badges and class probabilities", () => {
    const html = renderDemographics(buildCaseView(evidencePayload, "C"));
    expect(html).toMatchSnapshot();
    expect(html).toContain("HT history");
    expect(html).not.toContain("DB history");
    expect(html).toContain("GHT");
    expect(html).toContain("63.0%");
  });

  it("hides the model block in mode A", () => {
    const html = renderDemographics(buildCaseView(evidencePayload, "A"));
    expect(html).not.toContain("model:");
  });
});

describe("timeline rendering", () => {
  it("annotates the svg with the clock bound", () => {
    const svg = renderTimeline(buildTimelineView(timeline));
    expect(svg).toMatchSnapshot();
    expect(svg).toContain('data-clock-week="10"');
    expect(svg).toContain('data-max-week="10"');
    expect(svg).toContain("start-line");
    expect(svg).toContain("anchor-start_code");
  });

  it("renders an empty svg when there are no points", () => {
    const svg = renderTimeline(buildTimelineView({ ...timeline, weeks: [] }));
    expect(svg).toContain("<svg");
    expect(svg).not.toContain("path");
  });
});

describe("decision form rendering", () => {
  it("disables submit until the call is answered", () => {
    expect(renderDecisionForm(emptyDecision, "pending")).toContain("disabled");
    expect(
      renderDecisionForm({ ...emptyDecision, call: false }, "pending"),
    ).not.toContain("disabled");
  });

  it("collapses to a notice once reviewed", () => {
    expect(renderDecisionForm(emptyDecision, "reviewed")).toContain("Decision recorded");
  });
});
