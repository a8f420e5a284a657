"""Hybrid pregnancy identification: anchor override, model score, smoothing,
thresholding, confirmation, and episode start/end inference.

The weekly pipeline per patient is causal by construction: the outputs at
week t depend only on events dated at or before that week's as-of date.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from pathlib import Path

from .features import (
    FeatureSpec,
    FeatureVocabulary,
    PatientFeatureIndex,
    extract_many,
)
from .glm import LinearModel, predict_proba_matrix
from .features import DesignMatrix
from .records import PatientRecord


class AnchorHit(str, Enum):
    NONE = "none"
    START_CODE = "start_code"
    END_CODE = "end_code"


class InferenceSource(str, Enum):
    ANCHOR = "anchor"
    MODEL = "model"


@dataclass(frozen=True)
class HapiConfig:
    ema_window: int = 5
    ema_decay: float = 1.0 / 3.0
    threshold: float = 0.5
    confirm_steps: int = 2
    nurse_filter: bool = False
    delta_days: int = 30

    def __post_init__(self):
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")
        if self.ema_window < 1:
            raise ValueError("ema_window must be >= 1")
        if self.confirm_steps < 1:
            raise ValueError("confirm_steps must be >= 1")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must be in [0, 1]")


@dataclass(frozen=True)
class TimelinePrediction:
    patient_id: str
    as_of: tuple[date, ...]
    raw: tuple[float, ...]
    smoothed: tuple[float, ...]
    calls: tuple[int, ...]
    anchor_hits: tuple[AnchorHit, ...]

    def __post_init__(self):
        n = len(self.as_of)
        if not (len(self.raw) == len(self.smoothed) == len(self.calls) == len(self.anchor_hits) == n):
            raise ValueError("timeline series lengths differ")


@dataclass(frozen=True)
class EpisodeInference:
    patient_id: str
    start_week: int | None = None
    end_week: int | None = None
    start_source: InferenceSource | None = None
    end_source: InferenceSource | None = None

    def __post_init__(self):
        if self.end_week is not None:
            if self.start_week is None or self.start_week > self.end_week:
                raise ValueError("an inferred end requires an earlier inferred start")


def anchor_state(
    record: PatientRecord,
    as_of: date,
    start_concepts: frozenset[int],
    end_concepts: frozenset[int],
) -> AnchorHit:
    """Anchor override state from history up to as_of.

    A start code with no later end code forces pregnant; an end code at or
    after the last start code forces not-pregnant; neither defers to the
    model.
    """
    last_start: date | None = None
    last_end: date | None = None
    for ev in record.events:
        if ev.date > as_of:
            break
        if ev.concept_id in start_concepts:
            if last_start is None or ev.date > last_start:
                last_start = ev.date
        if ev.concept_id in end_concepts:
            if last_end is None or ev.date > last_end:
                last_end = ev.date
    if last_start is not None and (last_end is None or last_end < last_start):
        return AnchorHit.START_CODE
    if last_end is not None:
        return AnchorHit.END_CODE
    return AnchorHit.NONE


def ema_smooth(series: list[float], window: int = 5, decay: float = 1.0 / 3.0) -> list[float]:
    """Normalized truncated exponential moving average.

    q[t] = sum_{k=0..min(t, window-1)} decay^k * f[t-k], divided by the same
    truncated weight sum, so a constant series maps to itself.
    """
    if not series:
        raise ValueError("cannot smooth an empty series")
    kernel = [decay**k for k in range(window)]
    out = []
    for t in range(len(series)):
        depth = min(t + 1, window)
        num = sum(kernel[k] * series[t - k] for k in range(depth))
        den = sum(kernel[:depth])
        out.append(num / den)
    return out


def infer_episode(
    smoothed: list[float],
    calls: list[int],
    anchor_hits: list[AnchorHit],
    config: HapiConfig,
    patient_id: str = "",
    true_start_week: int | None = None,
) -> EpisodeInference:
    """Infer start/end week indices from the smoothed series and anchors.

    A model start is confirmed at the first t with a positive call and
    confirm_steps consecutive strict increases of the smoothed score ahead
    of it; the start is placed at t + confirm_steps. Ends mirror this with
    negative calls and strict decreases, only after a start. The final
    start/end take the earlier of the code-based and model-based values.
    With nurse filtering enabled (simulation only), model starts that fire
    before one month past the true start defer to the code-based start.
    """
    n = len(smoothed)
    c = config.confirm_steps

    anchor_start = next(
        (t for t, h in enumerate(anchor_hits) if h == AnchorHit.START_CODE), None
    )

    model_start: int | None = None
    for t in range(n - c):
        if calls[t] == 1 and all(smoothed[t + k] < smoothed[t + k + 1] for k in range(c)):
            model_start = t + c
            break

    if (
        config.nurse_filter
        and model_start is not None
        and true_start_week is not None
        and model_start < true_start_week + int(round(config.delta_days / 7))
    ):
        model_start = anchor_start

    start: int | None = None
    start_source: InferenceSource | None = None
    if anchor_start is not None or model_start is not None:
        candidates = [
            (wk, src)
            for wk, src in (
                (anchor_start, InferenceSource.ANCHOR),
                (model_start, InferenceSource.MODEL),
            )
            if wk is not None
        ]
        start, start_source = min(candidates, key=lambda ws: (ws[0], ws[1].value))

    end: int | None = None
    end_source: InferenceSource | None = None
    if start is not None:
        anchor_end = next(
            (
                t
                for t, h in enumerate(anchor_hits)
                if h == AnchorHit.END_CODE and t >= start
            ),
            None,
        )
        model_end: int | None = None
        for t in range(start, n - c):
            if calls[t] == 0 and all(
                smoothed[t + k] > smoothed[t + k + 1] for k in range(c)
            ):
                model_end = t + c
                break
        candidates = [
            (wk, src)
            for wk, src in (
                (anchor_end, InferenceSource.ANCHOR),
                (model_end, InferenceSource.MODEL),
            )
            if wk is not None and wk >= start
        ]
        if candidates:
            end, end_source = min(candidates, key=lambda ws: (ws[0], ws[1].value))

    return EpisodeInference(
        patient_id=patient_id,
        start_week=start,
        end_week=end,
        start_source=start_source,
        end_source=end_source,
    )


def weekly_grid(record: PatientRecord) -> list[date]:
    """Weekly as-of dates spanning the record's history."""
    if not record.events:
        return []
    out = []
    d = record.first_event_date
    stop = record.last_event_date
    while d <= stop:
        out.append(d)
        d += timedelta(days=7)
    return out


def run_patient(
    record: PatientRecord,
    model: LinearModel,
    vocab: FeatureVocabulary,
    spec: FeatureSpec,
    start_concepts: frozenset[int],
    end_concepts: frozenset[int],
    config: HapiConfig,
    grid: list[date] | None = None,
    true_start_week: int | None = None,
) -> tuple[TimelinePrediction, EpisodeInference]:
    """Score one patient's weekly timeline and infer episode bounds.

    The model must have been trained with the anchors excluded from its
    feature set; anchor concepts are excluded again here so the score
    pathway never sees them.
    """
    if grid is None:
        grid = weekly_grid(record)
    if not grid:
        return (
            TimelinePrediction(record.patient_id, (), (), (), (), ()),
            EpisodeInference(patient_id=record.patient_id),
        )

    hits = [anchor_state(record, d, start_concepts, end_concepts) for d in grid]

    exclude = frozenset(start_concepts | end_concepts)
    index = PatientFeatureIndex(record)
    examples = extract_many(record, grid, spec, vocab, exclude, index=index)
    matrix = DesignMatrix(examples, model.n_columns, model.vocab_fingerprint)
    probs = predict_proba_matrix(model, matrix)[:, -1]

    raw = []
    for hit, p in zip(hits, probs.tolist()):
        if hit == AnchorHit.START_CODE:
            raw.append(1.0)
        elif hit == AnchorHit.END_CODE:
            raw.append(0.0)
        else:
            raw.append(float(p))

    smoothed = ema_smooth(raw, config.ema_window, config.ema_decay)
    calls = [1 if q >= config.threshold else 0 for q in smoothed]
    inference = infer_episode(
        smoothed, calls, hits, config, record.patient_id, true_start_week
    )
    timeline = TimelinePrediction(
        patient_id=record.patient_id,
        as_of=tuple(grid),
        raw=tuple(raw),
        smoothed=tuple(smoothed),
        calls=tuple(calls),
        anchor_hits=tuple(hits),
    )
    return timeline, inference


def write_timeline(timeline: TimelinePrediction, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["week", "as_of", "f", "q_smooth", "y_hat", "anchor_hit"])
        for week, (as_of, f, q, y, hit) in enumerate(
            zip(timeline.as_of, timeline.raw, timeline.smoothed, timeline.calls, timeline.anchor_hits)
        ):
            writer.writerow([week, as_of.isoformat(), repr(f), repr(q), y, hit.value])


def write_inferences(inferences: list[EpisodeInference], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "pred_start", "pred_end", "start_source", "end_source"])
        for inf in sorted(inferences, key=lambda i: i.patient_id):
            writer.writerow(
                [
                    inf.patient_id,
                    "" if inf.start_week is None else inf.start_week,
                    "" if inf.end_week is None else inf.end_week,
                    "" if inf.start_source is None else inf.start_source.value,
                    "" if inf.end_source is None else inf.end_source.value,
                ]
            )
