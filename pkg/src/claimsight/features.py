"""Windowed binary feature extraction and sampling schedules.

Temporal features are binary indicators over backward windows: column
(concept, w) is set iff an event with that concept occurs in the half-open
interval (as_of - w, as_of], so same-day events count. Extraction is causal:
events after as_of never contribute.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

import numpy as np

from .episodes import PregnancyEpisode
from .records import PatientRecord, Race, Sex
from .vocab import Domain, RiskLabel, Vocabulary

IDENTIFICATION_WINDOWS = (5, 10)
COMPLICATION_WINDOWS = (30, 180, 365, 730, 10000)

# the five temporal claim categories that become windowed features
TEMPORAL_DOMAINS = (
    Domain.CONDITION,
    Domain.DRUG,
    Domain.PROCEDURE,
    Domain.SPECIALTY,
    Domain.LAB,
)

DEFAULT_NONTEMPORAL = (
    "age",
    "sex_female",
    "sex_male",
    "race_white",
    "race_black",
    "race_other",
    "race_unreported",
    "demo_slot_1",
    "demo_slot_2",
    "demo_slot_3",
    "demo_slot_4",
    "demo_slot_5",
)


class VocabularyStateError(RuntimeError):
    """Raised when extraction is attempted against an unfrozen vocabulary."""


@dataclass(frozen=True)
class FeatureSpec:
    windows_days: tuple[int, ...] = IDENTIFICATION_WINDOWS
    domains: tuple[Domain, ...] | None = None  # None admits every domain
    nontemporal: tuple[str, ...] = DEFAULT_NONTEMPORAL
    # reserved demographic slots get constant values from deployment config
    slot_values: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if list(self.windows_days) != sorted(set(self.windows_days)):
            raise ValueError("windows must be strictly increasing")
        if len(self.nontemporal) != 12:
            raise ValueError(f"expected 12 nontemporal features, got {len(self.nontemporal)}")

    def admits(self, concept_id: int, vocabulary: Vocabulary | None) -> bool:
        if self.domains is None:
            return True
        if vocabulary is None:
            raise ValueError("a domain filter requires the concept vocabulary")
        concept = vocabulary.get(concept_id)
        return concept is not None and concept.domain in self.domains


class FeatureVocabulary:
    """Frozen bijection from features onto [0, total_columns).

    Nontemporal features occupy the first indices in spec order; windowed
    (concept, window) pairs follow, ordered by concept then window. The age
    scaling range is learned when the vocabulary is frozen.
    """

    def __init__(
        self,
        nontemporal: tuple[str, ...],
        pairs: list[tuple[int, int]],
        age_min: float,
        age_max: float,
        frozen: bool = True,
    ):
        self.nontemporal_index = {name: i for i, name in enumerate(nontemporal)}
        base = len(nontemporal)
        self.windowed_index = {pair: base + i for i, pair in enumerate(sorted(pairs))}
        self.total_columns = base + len(self.windowed_index)
        self.age_min = float(age_min)
        self.age_max = float(age_max)
        self.frozen = frozen
        self._names: list[str] | None = None
        self._pairs_by_index: list[tuple[int | None, int | None]] | None = None

    @property
    def nontemporal_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.nontemporal_index, key=self.nontemporal_index.get))

    def column_name(self, idx: int) -> str:
        if self._names is None:
            names = [""] * self.total_columns
            for name, i in self.nontemporal_index.items():
                names[i] = name
            for (concept, window), i in self.windowed_index.items():
                names[i] = f"{concept}@{window}d"
            self._names = names
        return self._names[idx]

    def column_concept(self, idx: int) -> tuple[int | None, int | None]:
        """(concept_id, window) of a column; (None, None) for nontemporal."""
        if self._pairs_by_index is None:
            pairs: list[tuple[int | None, int | None]] = [(None, None)] * self.total_columns
            for pair, i in self.windowed_index.items():
                pairs[i] = pair
            self._pairs_by_index = pairs
        return self._pairs_by_index[idx]

    def scale_age(self, age: float) -> float:
        span = self.age_max - self.age_min
        if span <= 0:
            return 0.0
        return min(max((age - self.age_min) / span, 0.0), 1.0)

    def serialize(self) -> str:
        lines = [
            "#feature-vocabulary v1",
            f"total_columns={self.total_columns}",
            f"age_min={self.age_min!r}",
            f"age_max={self.age_max!r}",
        ]
        for name, i in sorted(self.nontemporal_index.items(), key=lambda kv: kv[1]):
            lines.append(f"nontemporal,{name},{i}")
        for (concept, window), i in sorted(self.windowed_index.items(), key=lambda kv: kv[1]):
            lines.append(f"windowed,{concept},{window},{i}")
        return "\n".join(lines) + "\n"

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureVocabulary":
        text = Path(path).read_text()
        lines = text.strip().splitlines()
        if not lines or lines[0] != "#feature-vocabulary v1":
            raise ValueError(f"{path} is not a feature vocabulary file")
        meta = {}
        nontemporal: list[tuple[str, int]] = []
        pairs: list[tuple[int, int]] = []
        for line in lines[1:]:
            if "=" in line and "," not in line:
                key, val = line.split("=", 1)
                meta[key] = val
            elif line.startswith("nontemporal,"):
                _, name, idx = line.split(",")
                nontemporal.append((name, int(idx)))
            elif line.startswith("windowed,"):
                _, concept, window, _idx = line.split(",")
                pairs.append((int(concept), int(window)))
        nontemporal.sort(key=lambda kv: kv[1])
        vocab = cls(
            tuple(name for name, _ in nontemporal),
            pairs,
            float(meta["age_min"]),
            float(meta["age_max"]),
        )
        if vocab.total_columns != int(meta["total_columns"]):
            raise ValueError(f"{path}: column count mismatch")
        return vocab


@dataclass(frozen=True)
class SparseExample:
    """One windowed-feature row; indices strictly increasing, values nonzero.

    Unsorted (column, value) input is normalized on construction, so nothing
    downstream can depend on storage order.
    """

    patient_id: str
    as_of: date
    columns: tuple[int, ...]
    values: tuple[float, ...]
    label: int | None = None

    def __post_init__(self):
        if len(self.columns) != len(self.values):
            raise ValueError("columns and values length mismatch")
        if any(b <= a for a, b in zip(self.columns, self.columns[1:])):
            pairs = sorted(zip(self.columns, self.values))
            object.__setattr__(self, "columns", tuple(c for c, _ in pairs))
            object.__setattr__(self, "values", tuple(v for _, v in pairs))
        for a, b in zip(self.columns, self.columns[1:]):
            if b <= a:
                raise ValueError("sparse indices must be strictly increasing")


@dataclass
class DesignMatrix:
    examples: list[SparseExample]
    n_columns: int
    vocab_fingerprint: str

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([ex.label for ex in self.examples], dtype=np.int64)


def _exact_age(record: PatientRecord, as_of: date) -> float:
    return (as_of - record.birth_date).days / 365.25


def _nontemporal_entries(
    record: PatientRecord, as_of: date, spec: FeatureSpec, vocab: FeatureVocabulary
) -> list[tuple[int, float]]:
    slot_values = dict(spec.slot_values)
    out = []
    for name, idx in vocab.nontemporal_index.items():
        if name == "age":
            v = vocab.scale_age(_exact_age(record, as_of))
        elif name == "sex_female":
            v = 1.0 if record.sex == Sex.FEMALE else 0.0
        elif name == "sex_male":
            v = 1.0 if record.sex == Sex.MALE else 0.0
        elif name.startswith("race_"):
            v = 1.0 if record.race == Race(name[5:]) else 0.0
        else:
            v = float(slot_values.get(name, 0.0))
        if v != 0.0:
            out.append((idx, v))
    return out


class PatientFeatureIndex:
    """Per-patient concept -> sorted event-date index for fast extraction."""

    def __init__(self, record: PatientRecord):
        self.record = record
        grouped: dict[int, list[int]] = {}
        for ev in record.events:
            grouped.setdefault(ev.concept_id, []).append(ev.date.toordinal())
        self.by_concept = {c: np.asarray(d, dtype=np.int64) for c, d in sorted(grouped.items())}


def extract_many(
    record: PatientRecord,
    as_ofs: list[date],
    spec: FeatureSpec,
    vocab: FeatureVocabulary,
    exclude: frozenset[int] = frozenset(),
    labels: list[int | None] | None = None,
    index: PatientFeatureIndex | None = None,
    vocabulary: Vocabulary | None = None,
) -> list[SparseExample]:
    """Extract one SparseExample per as_of date, sharing the event index."""
    if not vocab.frozen:
        raise VocabularyStateError("feature vocabulary is not frozen")
    if labels is None:
        labels = [None] * len(as_ofs)
    if index is None:
        index = PatientFeatureIndex(record)

    ords = np.asarray([d.toordinal() for d in as_ofs], dtype=np.int64)
    cols: list[list[int]] = [[] for _ in as_ofs]
    vals: list[list[float]] = [[] for _ in as_ofs]

    for i, as_of in enumerate(as_ofs):
        for idx, v in _nontemporal_entries(record, as_of, spec, vocab):
            cols[i].append(idx)
            vals[i].append(v)

    for concept, dates in index.by_concept.items():
        if concept in exclude or not spec.admits(concept, vocabulary):
            continue
        concept_cols = [
            (w, vocab.windowed_index.get((concept, w))) for w in spec.windows_days
        ]
        if all(c is None for _, c in concept_cols):
            continue
        pos = np.searchsorted(dates, ords, side="right")
        has = pos > 0
        gaps = np.where(has, ords - dates[np.maximum(pos - 1, 0)], np.iinfo(np.int64).max)
        for w, col in concept_cols:
            if col is None:
                continue
            for i in np.nonzero(gaps < w)[0]:
                cols[int(i)].append(col)
                vals[int(i)].append(1.0)

    out = []
    for i, as_of in enumerate(as_ofs):
        order = sorted(range(len(cols[i])), key=lambda j: cols[i][j])
        out.append(
            SparseExample(
                patient_id=record.patient_id,
                as_of=as_of,
                columns=tuple(cols[i][j] for j in order),
                values=tuple(vals[i][j] for j in order),
                label=labels[i],
            )
        )
    return out


def extract_features(
    record: PatientRecord,
    as_of: date,
    spec: FeatureSpec,
    vocab: FeatureVocabulary,
    exclude: frozenset[int] = frozenset(),
    label: int | None = None,
    vocabulary: Vocabulary | None = None,
) -> SparseExample:
    """Extract the windowed + nontemporal features for one (patient, as_of)."""
    return extract_many(record, [as_of], spec, vocab, exclude, [label],
                        vocabulary=vocabulary)[0]


def freeze_vocabulary(
    observations: Iterable[tuple[PatientRecord, date]],
    spec: FeatureSpec,
    exclude: frozenset[int] = frozenset(),
    vocabulary: Vocabulary | None = None,
) -> FeatureVocabulary:
    """Build the frozen column vocabulary from training observations.

    Every (concept, window) pair active at least once in training gets a
    column; ordering is deterministic (concept then window). Excluded
    concepts never receive a column, so they can never produce a feature
    downstream either. The age scaling range is learned here.
    """
    pairs: set[tuple[int, int]] = set()
    age_min, age_max = np.inf, -np.inf
    max_w = max(spec.windows_days)
    for record, as_of in observations:
        age = _exact_age(record, as_of)
        age_min = min(age_min, age)
        age_max = max(age_max, age)
        for ev in record.events:
            if ev.concept_id in exclude or not spec.admits(ev.concept_id, vocabulary):
                continue
            gap = (as_of - ev.date).days
            if gap < 0 or gap >= max_w:
                continue
            for w in spec.windows_days:
                if gap < w:
                    pairs.add((ev.concept_id, w))
    if not np.isfinite(age_min):
        age_min, age_max = 0.0, 0.0
    return FeatureVocabulary(spec.nontemporal, sorted(pairs), age_min, age_max)


WEEK = timedelta(days=7)
GRID_MARGIN_DAYS = 140  # 20 weeks on either side of the episode
NEVER_PREGNANT_POINTS = 80


def sample_identification_grid(
    record: PatientRecord, episode: PregnancyEpisode | None
) -> tuple[list[tuple[date, int]], bool]:
    """Weekly (as_of, label) points for the identification dataset.

    Pregnant patients get weekly points from 20 weeks before the labeled
    start through 20 weeks after the end, labeled 1 inside [t_start, t_end].
    Never-pregnant patients get 80 weekly points centered on their history
    midpoint, all labeled 0; histories shorter than the grid are clamped and
    flagged.
    """
    if episode is not None:
        points = []
        d = episode.t_start - timedelta(days=GRID_MARGIN_DAYS)
        stop = episode.t_end + timedelta(days=GRID_MARGIN_DAYS)
        while d <= stop:
            label = 1 if episode.t_start <= d <= episode.t_end else 0
            points.append((d, label))
            d += WEEK
        return points, False

    if not record.events:
        return [], True
    first, last = record.first_event_date, record.last_event_date
    mid = first + timedelta(days=(last - first).days // 2)
    start = mid - timedelta(days=7 * NEVER_PREGNANT_POINTS // 2)
    points = []
    clamped = False
    for k in range(NEVER_PREGNANT_POINTS):
        d = start + k * WEEK
        if d < first or d > last:
            clamped = True
            continue
        points.append((d, 0))
    return points, clamped


def episode_seed(base_seed: int, patient_id: str) -> int:
    """Stable per-patient sub-seed, independent of iteration order."""
    return (base_seed * 1_000_003 + zlib.crc32(patient_id.encode())) % (2**32)


def sample_complication_cutoffs(
    episode: PregnancyEpisode,
    label: RiskLabel,
    n: int = 10,
    seed: int = 0,
) -> list[tuple[date, RiskLabel]]:
    """n cutoff dates i.i.d.-uniform on [t_start - 90d, t_end], sorted.

    Every cutoff carries the episode-level risk label. Deterministic under
    seed.
    """
    rng = np.random.default_rng(seed)
    lo = episode.t_start - timedelta(days=90)
    span = (episode.t_end - lo).days
    offsets = sorted(rng.uniform(0.0, span, size=n).tolist())
    return [(lo + timedelta(days=int(np.floor(o))), label) for o in offsets]


def write_design_matrix(matrix: DesignMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("#design-matrix v1\n")
        fh.write(f"columns={matrix.n_columns}\n")
        fh.write(f"vocabulary={matrix.vocab_fingerprint}\n")
        fh.write("patient_id,as_of,label,features\n")
        for ex in matrix.examples:
            feats = " ".join(f"{c}:{v!r}" for c, v in zip(ex.columns, ex.values))
            label = "" if ex.label is None else str(ex.label)
            fh.write(f"{ex.patient_id},{ex.as_of.isoformat()},{label},{feats}\n")


def read_design_matrix(path: str | Path) -> DesignMatrix:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != "#design-matrix v1":
            raise ValueError(f"{path} is not a design-matrix file")
        n_columns = int(fh.readline().strip().split("=", 1)[1])
        fingerprint = fh.readline().strip().split("=", 1)[1]
        fh.readline()  # column header
        examples = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            pid, as_of, label, feats = line.split(",", 3)
            columns, values = [], []
            for tok in feats.split():
                c, v = tok.split(":")
                columns.append(int(c))
                values.append(float(v))
            examples.append(
                SparseExample(
                    patient_id=pid,
                    as_of=date.fromisoformat(as_of),
                    columns=tuple(columns),
                    values=tuple(values),
                    label=int(label) if label else None,
                )
            )
    return DesignMatrix(examples, n_columns, fingerprint)
