"""Complication-risk prediction and code-level evidence extraction.

Predictions always come from the global model. Evidence comes from the
model trained on the patient's prior-history partition, restricted to the
feature columns actually active in the scored example, with any
complication-target codes found in the history prepended.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path

import numpy as np

from .features import DesignMatrix, FeatureVocabulary, SparseExample
from .glm import FingerprintError, GlmConfig, LinearModel, SingleClassError, fit, predict_proba
from .records import PatientRecord
from .vocab import CodeRoleConfig, RiskLabel


class HistoryGroup(str, Enum):
    NO_HISTORY = "no_history"
    DB_ONLY = "db_only"
    HT_ONLY = "ht_only"
    DB_AND_HT = "db_and_ht"


class Polarity(str, Enum):
    RISK_INCREASING = "risk_increasing"
    RISK_DECREASING = "risk_decreasing"


class EvidenceSource(str, Enum):
    GLOBAL = "global"
    GROUP = "group"
    ANCHOR = "anchor"  # complication-target code seen in the history


def classify_history(
    record: PatientRecord,
    t_start: date,
    db_codes: frozenset[int],
    ht_codes: frozenset[int],
) -> HistoryGroup:
    """Prior-history partition from codes strictly before the episode start."""
    if not db_codes or not ht_codes:
        raise ValueError("history code sets must be nonempty")
    has_db = has_ht = False
    for ev in record.events:
        if ev.date >= t_start:
            break
        if ev.concept_id in db_codes:
            has_db = True
        if ev.concept_id in ht_codes:
            has_ht = True
    if has_db and has_ht:
        return HistoryGroup.DB_AND_HT
    if has_db:
        return HistoryGroup.DB_ONLY
    if has_ht:
        return HistoryGroup.HT_ONLY
    return HistoryGroup.NO_HISTORY


@dataclass(frozen=True)
class RiskPrediction:
    patient_id: str
    as_of: date
    probabilities: tuple[float, float, float]  # none, GHT, GDB
    predicted: RiskLabel
    history_group: HistoryGroup

    def __post_init__(self):
        if abs(sum(self.probabilities) - 1.0) > 1e-6:
            raise ValueError("probabilities must sum to 1")


@dataclass(frozen=True)
class EvidenceItem:
    concept_id: int | None
    window: int | None
    weight: float
    polarity: Polarity
    source: EvidenceSource
    feature_name: str = ""


@dataclass
class GroupModels:
    """Per-history-group models; groups that could not be trained fall back
    to the global model and are recorded."""

    models: dict[HistoryGroup, LinearModel]
    fallbacks: list[HistoryGroup] = field(default_factory=list)

    def for_group(self, group: HistoryGroup) -> LinearModel:
        return self.models[group]


def train_group_models(
    partitions: dict[HistoryGroup, DesignMatrix],
    config: GlmConfig,
    global_model: LinearModel,
) -> GroupModels:
    """Train one model per history partition, falling back to the global
    model when a partition is empty or single-class."""
    models: dict[HistoryGroup, LinearModel] = {}
    fallbacks: list[HistoryGroup] = []
    for group in HistoryGroup:
        matrix = partitions.get(group)
        if matrix is None or not matrix.examples:
            models[group] = global_model
            fallbacks.append(group)
            continue
        if matrix.vocab_fingerprint != global_model.vocab_fingerprint:
            raise FingerprintError(
                f"partition {group.value} built under vocabulary "
                f"{matrix.vocab_fingerprint}, global model under "
                f"{global_model.vocab_fingerprint}"
            )
        try:
            models[group] = fit(matrix, config)
        except SingleClassError:
            models[group] = global_model
            fallbacks.append(group)
    return GroupModels(models=models, fallbacks=fallbacks)


def _class_index(model: LinearModel, label: RiskLabel) -> int:
    idx = model.classes.index(int(label))
    if model.is_binary:
        return 0  # binary models store one weight vector
    return idx


def predict_with_evidence(
    record: PatientRecord,
    example: SparseExample,
    global_model: LinearModel,
    groups: GroupModels,
    vocab: FeatureVocabulary,
    roles: CodeRoleConfig,
    db_codes: frozenset[int],
    ht_codes: frozenset[int],
    t_start: date,
    k: int = 10,
) -> tuple[RiskPrediction, list[EvidenceItem]]:
    """Global-model risk prediction plus group-model evidence.

    Evidence items reference only columns active in the scored example; the
    weight shown is the group model's weight toward the predicted class.
    Positive weight toward a complication reads risk-increasing; polarity is
    inverted for a no-complication prediction so the red/green semantics are
    stable. Complication-target codes present in the history are always
    prepended.
    """
    probs = predict_proba(global_model, example, vocab.fingerprint)
    predicted = RiskLabel(int(global_model.classes[int(np.argmax(probs))]))
    group = classify_history(record, t_start, db_codes, ht_codes)
    group_model = groups.for_group(group)
    source = (
        EvidenceSource.GLOBAL if group_model is global_model else EvidenceSource.GROUP
    )

    if int(predicted) in group_model.classes:
        wdict = group_model.weights[_class_index(group_model, predicted)]
    else:
        wdict = {}  # partition model never saw the predicted class
    invert = predicted == RiskLabel.NONE

    def polarity_of(weight: float) -> Polarity:
        positive = weight > 0.0
        if invert:
            positive = not positive
        return Polarity.RISK_INCREASING if positive else Polarity.RISK_DECREASING

    # complication-target codes in history come first, with their best
    # active column weight when one exists
    target_concepts = roles.complication_concepts
    seen_targets = sorted(
        {
            ev.concept_id
            for ev in record.events
            if ev.concept_id in target_concepts and ev.date <= example.as_of
        }
    )
    active_cols = set(c for c, v in zip(example.columns, example.values) if v != 0.0)
    prepended: list[EvidenceItem] = []
    used_columns: set[int] = set()
    for concept in seen_targets:
        best: tuple[float, int, int] | None = None  # |w|, col, window
        for col in active_cols:
            cid, window = vocab.column_concept(col)
            if cid != concept:
                continue
            w = wdict.get(col, 0.0)
            if best is None or abs(w) > best[0]:
                best = (abs(w), col, window)
        if best is not None and best[0] > 0.0:
            _, col, window = best
            w = wdict[col]
            used_columns.add(col)
            prepended.append(
                EvidenceItem(concept, window, w, polarity_of(w), EvidenceSource.ANCHOR,
                             vocab.column_name(col))
            )
        else:
            prepended.append(
                EvidenceItem(concept, None, 0.0, Polarity.RISK_INCREASING,
                             EvidenceSource.ANCHOR, str(concept))
            )

    scored = []
    for col in active_cols:
        if col in used_columns:
            continue
        w = wdict.get(col, 0.0)
        if w != 0.0:
            scored.append((abs(w), -col, col, w))
    scored.sort(reverse=True)
    items: list[EvidenceItem] = []
    for _, _, col, w in scored[:k]:
        concept, window = vocab.column_concept(col)
        items.append(
            EvidenceItem(concept, window, w, polarity_of(w), source, vocab.column_name(col))
        )

    prediction = RiskPrediction(
        patient_id=record.patient_id,
        as_of=example.as_of,
        probabilities=tuple(float(p) for p in probs),
        predicted=predicted,
        history_group=group,
    )
    return prediction, prepended + items


def write_risk_predictions(preds: list[RiskPrediction], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["patient_id", "as_of", "p_none", "p_ght", "p_gdb", "pred", "history_group"]
        )
        for p in preds:
            writer.writerow(
                [
                    p.patient_id,
                    p.as_of.isoformat(),
                    repr(p.probabilities[0]),
                    repr(p.probabilities[1]),
                    repr(p.probabilities[2]),
                    int(p.predicted),
                    p.history_group.value,
                ]
            )


def write_evidence(
    rows: list[tuple[str, date, list[EvidenceItem]]], path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["patient_id", "as_of", "rank", "concept_id", "window", "weight", "polarity", "source"]
        )
        for pid, as_of, items in rows:
            for rank, item in enumerate(items):
                writer.writerow(
                    [
                        pid,
                        as_of.isoformat(),
                        rank,
                        "" if item.concept_id is None else item.concept_id,
                        "" if item.window is None else item.window,
                        repr(item.weight),
                        item.polarity.value,
                        item.source.value,
                    ]
                )
