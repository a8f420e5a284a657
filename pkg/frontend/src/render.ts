/**
 * HTML/SVG string renderers over the view models. Pure string builders so
 * snapshots pin the exact bindings; src/main.ts mounts the strings into the
 * page and wires events.
 */

import type {
  CaseView,
  DecisionFormState,
  EvidenceView,
  QueueRowView,
  TimelineView,
} from "./viewmodel.js";
import { canSubmit } from "./viewmodel.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderQueue(rows: QueueRowView[], selected: string | null): string {
  const body = rows
    .map((row) => {
      const badge =
        row.predictionBadge === null
          ? ""
          : `<span class="badge badge-${row.predictionBadge.toLowerCase()}">` +
            `${esc(row.predictionBadge)} ${(100 * (row.probability ?? 0)).toFixed(0)}%</span>`;
      const cls = [
        "queue-row",
        row.status === "reviewed" ? "reviewed" : "pending",
        row.patientId === selected ? "selected" : "",
      ]
        .filter(Boolean)
        .join(" ");
      return (
        `<tr class="${cls}" data-patient="${esc(row.patientId)}">` +
        `<td>${esc(row.patientId)}</td>` +
        `<td>wk ${row.surfacedAt}</td>` +
        `<td>${row.age}</td>` +
        `<td>${esc(row.race)}</td>` +
        `<td>${badge}</td>` +
        `<td>${esc(row.status)}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="queue"><thead><tr>` +
    `<th>patient</th><th>surfaced</th><th>age</th><th>race</th>` +
    `<th>prediction</th><th>status</th></tr></thead><tbody>${body}</tbody></table>`
  );
}

function evidenceColor(item: EvidenceView): string {
  // intensity scales opacity between a visible floor and full strength
  const alpha = (0.25 + 0.75 * item.intensity).toFixed(3);
  return item.color === "red"
    ? `rgba(200, 32, 32, ${alpha})`
    : `rgba(24, 140, 60, ${alpha})`;
}

export function renderEvidence(items: EvidenceView[]): string {
  if (!items.length) {
    return `<p class="evidence-empty">No evidence to display.</p>`;
  }
  const rows = items
    .map(
      (item) =>
        `<li class="evidence-item ${item.polarity}" ` +
        `style="background:${evidenceColor(item)}" ` +
        `title="weight ${item.weight.toFixed(4)} (${esc(item.source)})">` +
        `${esc(item.label)} <span class="weight">${item.weight >= 0 ? "+" : ""}` +
        `${item.weight.toFixed(3)}</span></li>`,
    )
    .join("");
  return `<ul class="evidence">${rows}</ul>`;
}

export function renderDemographics(view: CaseView): string {
  const badges =
    (view.badges.db ? `<span class="history-badge">DB history</span>` : "") +
    (view.badges.ht ? `<span class="history-badge">HT history</span>` : "");
  const prediction = view.prediction
    ? `<div class="prediction">model: <strong>${esc(view.prediction.predicted)}</strong> ` +
      `(${(100 * view.prediction.probability).toFixed(1)}%)` +
      `<div class="proba-bar">none ${(100 * view.prediction.pNone).toFixed(1)}% | ` +
      `GHT ${(100 * view.prediction.pGht).toFixed(1)}% | ` +
      `GDB ${(100 * view.prediction.pGdb).toFixed(1)}%</div></div>`
    : "";
  return (
    `<div class="panel-left">` +
    `<h2>${esc(view.patientId)}</h2>` +
    `<dl><dt>age</dt><dd>${view.demographics.age}</dd>` +
    `<dt>sex</dt><dd>${esc(view.demographics.sex)}</dd>` +
    `<dt>race</dt><dd>${esc(view.demographics.race)}</dd></dl>` +
    `<div class="badges">${badges}</div>` +
    prediction +
    `</div>`
  );
}

export function renderTimeline(view: TimelineView, width = 560, height = 160): string {
  if (!view.points.length) {
    return `<svg class="timeline" width="${width}" height="${height}"></svg>`;
  }
  const pad = 24;
  const plotW = width - 2 * pad;
  const plotH = height - 2 * pad;
  const n = view.points.length;
  const x = (week: number) => pad + (n === 1 ? 0 : (week / Math.max(view.maxWeek, 1)) * plotW);
  const y = (v: number) => height - pad - v * plotH;
  const path = view.points
    .map((p, i) => `${i === 0 ? "M" : "L"}${x(p.week).toFixed(1)},${y(p.value).toFixed(1)}`)
    .join(" ");
  const anchors = view.points
    .filter((p) => p.anchor !== "none")
    .map(
      (p) =>
        `<circle cx="${x(p.week).toFixed(1)}" cy="${y(p.value).toFixed(1)}" r="3" ` +
        `class="anchor-${p.anchor}"/>`,
    )
    .join("");
  const start =
    view.startWeek !== null && view.startWeek <= view.maxWeek
      ? `<line x1="${x(view.startWeek).toFixed(1)}" y1="${pad}" ` +
        `x2="${x(view.startWeek).toFixed(1)}" y2="${height - pad}" class="start-line"/>`
      : "";
  return (
    `<svg class="timeline" width="${width}" height="${height}" ` +
    `data-clock-week="${view.clockWeek}" data-max-week="${view.maxWeek}">` +
    `<path d="${path}" fill="none" stroke="#355" stroke-width="1.5"/>` +
    anchors +
    start +
    `</svg>`
  );
}

export function renderDecisionForm(state: DecisionFormState, status: string): string {
  if (status === "reviewed") {
    return `<div class="decision-done">Decision recorded.</div>`;
  }
  const disabled = canSubmit(state) ? "" : " disabled";
  const checked = (v: boolean) => (state.call === v ? " checked" : "");
  const sel = (v: string) => (state.complication === v ? " selected" : "");
  return (
    `<form class="decision">` +
    `<fieldset><legend>Call this patient?</legend>` +
    `<label><input type="radio" name="call" value="yes"${checked(true)}/> yes</label>` +
    `<label><input type="radio" name="call" value="no"${checked(false)}/> no</label>` +
    `</fieldset>` +
    `<label>expected complication ` +
    `<select name="complication">` +
    `<option value="none"${sel("none")}>none</option>` +
    `<option value="GHT"${sel("GHT")}>GHT</option>` +
    `<option value="GDB"${sel("GDB")}>GDB</option>` +
    `</select></label>` +
    `<label>note <input type="text" name="note" value="${esc(state.note)}"/></label>` +
    `<button type="submit"${disabled}>submit</button>` +
    `</form>`
  );
}

export function renderClock(week: number, date: string, endWeek: number): string {
  return (
    `<div class="clock">simulation week <strong>${week}</strong> (${esc(date)}) ` +
    `<button data-step="1">+1 wk</button>` +
    `<button data-step="4">+4 wk</button>` +
    `<span class="clock-end">horizon ${endWeek}</span></div>`
  );
}

export function renderBanner(message: string | null): string {
  if (!message) return "";
  return `<div class="banner" role="alert">${esc(message)} <button data-retry>retry</button></div>`;
}
