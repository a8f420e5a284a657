from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from claimsight.episodes import PregnancyEpisode, StartProvenance
from claimsight.features import (
    COMPLICATION_WINDOWS,
    DesignMatrix,
    FeatureSpec,
    FeatureVocabulary,
    SparseExample,
    VocabularyStateError,
    episode_seed,
    extract_features,
    freeze_vocabulary,
    read_design_matrix,
    sample_complication_cutoffs,
    sample_identification_grid,
    write_design_matrix,
)
from claimsight.records import Race, Sex
from claimsight.vocab import EpisodeOutcome, RiskLabel

from .conftest import make_record

AS_OF = date(2020, 6, 15)


def episode(start: date, days: int) -> PregnancyEpisode:
    return PregnancyEpisode(
        "p", start, start + timedelta(days=days), EpisodeOutcome.LIVE_BIRTH,
        StartProvenance.FIRST_START_CODE,
    )


@pytest.fixture
def rec():
    return make_record(
        "p",
        [(101, AS_OF - timedelta(days=3)), (202, AS_OF - timedelta(days=7))],
        birth=date(1990, 1, 1),
        sex=Sex.FEMALE,
        race=Race.BLACK,
    )


@pytest.fixture
def vocab(rec):
    return freeze_vocabulary([(rec, AS_OF)], FeatureSpec())


def windowed_cols(ex: SparseExample, vocab: FeatureVocabulary) -> list[tuple[int, int]]:
    return [vocab.column_concept(c) for c in ex.columns if c >= len(vocab.nontemporal_index)]


def test_event_inside_both_windows(rec, vocab):
    ex = extract_features(rec, AS_OF, FeatureSpec(), vocab)
    pairs = windowed_cols(ex, vocab)
    assert (101, 5) in pairs and (101, 10) in pairs


def test_event_inside_larger_window_only(rec, vocab):
    pairs = windowed_cols(extract_features(rec, AS_OF, FeatureSpec(), vocab), vocab)
    assert (202, 10) in pairs and (202, 5) not in pairs


def test_excluded_concept_never_set(rec):
    vocab = freeze_vocabulary([(rec, AS_OF)], FeatureSpec(), exclude=frozenset({101}))
    assert all(c != 101 for c, _ in vocab.windowed_index)
    ex = extract_features(rec, AS_OF, FeatureSpec(), vocab, exclude=frozenset({101}))
    assert all(c != 101 for c, _ in windowed_cols(ex, vocab))


def test_window_monotonicity(rec, vocab):
    # if the 5-day column is set, the 10-day column is set too
    for shift in range(0, 12):
        ex = extract_features(rec, AS_OF + timedelta(days=shift), FeatureSpec(), vocab)
        pairs = set(windowed_cols(ex, vocab))
        for concept in (101, 202):
            if (concept, 5) in pairs:
                assert (concept, 10) in pairs


def test_causality_future_events_ignored(vocab):
    past_only = make_record("p", [(101, AS_OF - timedelta(days=3))], race=Race.BLACK,
                            birth=date(1990, 1, 1))
    with_future = make_record(
        "p",
        [(101, AS_OF - timedelta(days=3)), (202, AS_OF + timedelta(days=30))],
        race=Race.BLACK, birth=date(1990, 1, 1),
    )
    a = extract_features(past_only, AS_OF, FeatureSpec(), vocab)
    b = extract_features(with_future, AS_OF, FeatureSpec(), vocab)
    assert a.columns == b.columns and a.values == b.values


def test_nontemporal_always_present(rec, vocab):
    ex = extract_features(rec, AS_OF, FeatureSpec(), vocab)
    names = {vocab.column_name(c) for c in ex.columns}
    assert "sex_female" in names and "race_black" in names
    assert "sex_male" not in names  # zero-valued entries stay sparse


def test_age_scaling(rec):
    young = make_record("p", [(101, AS_OF)], birth=date(2000, 6, 15))
    old = make_record("p", [(101, AS_OF)], birth=date(1980, 6, 15))
    vocab = freeze_vocabulary([(young, AS_OF), (old, AS_OF)], FeatureSpec())
    age_col = vocab.nontemporal_index["age"]

    def age_value(r):
        ex = extract_features(r, AS_OF, FeatureSpec(), vocab)
        return dict(zip(ex.columns, ex.values)).get(age_col, 0.0)

    assert age_value(young) == 0.0
    assert age_value(old) == 1.0
    mid = make_record("p", [(101, AS_OF)], birth=date(1990, 6, 15))
    assert 0.4 < age_value(mid) < 0.6


def test_vocabulary_counting_and_determinism(rec):
    spec = FeatureSpec()
    # the second observation puts concept 202 inside the 5-day window too,
    # so both concepts contribute both windows
    obs = [(rec, AS_OF), (rec, AS_OF - timedelta(days=4))]
    v1 = freeze_vocabulary(obs, spec)
    v2 = freeze_vocabulary(obs, spec)
    # 2 concepts x 2 windows + 12 nontemporal
    assert v1.total_columns == 16
    assert v1.fingerprint == v2.fingerprint
    assert v1.windowed_index == v2.windowed_index


def test_only_observed_pairs_get_columns(rec):
    # concept 202 is 7 days back: its 5-day window is never active
    v = freeze_vocabulary([(rec, AS_OF)], FeatureSpec())
    assert (202, 5) not in v.windowed_index
    assert v.total_columns == 15


def test_unseen_concept_contributes_nothing(rec, vocab):
    other = make_record("p", [(999, AS_OF - timedelta(days=1))], birth=date(1990, 1, 1),
                        race=Race.BLACK)
    ex = extract_features(other, AS_OF, FeatureSpec(), vocab)
    assert windowed_cols(ex, vocab) == []
    assert vocab.total_columns == 15  # frozen: no new columns


def test_unfrozen_vocab_errors(rec, vocab):
    vocab.frozen = False
    with pytest.raises(VocabularyStateError):
        extract_features(rec, AS_OF, FeatureSpec(), vocab)
    vocab.frozen = True


def test_vocab_save_load_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = FeatureVocabulary.load(path)
    assert loaded.fingerprint == vocab.fingerprint
    assert loaded.windowed_index == vocab.windowed_index
    assert loaded.age_min == vocab.age_min


# --- sampling schedules ---------------------------------------------------

def test_identification_grid_40_weeks():
    # a 40-week gestation spans days 0..279 inclusive
    ep = episode(date(2020, 3, 2), 279)
    pts, clamped = sample_identification_grid(None, ep)
    assert len(pts) == 80
    assert sum(l for _, l in pts) == 40
    assert not clamped
    assert pts[0][0] == ep.t_start - timedelta(days=140)
    # enumeration oracle: weekly from t_start-140 while <= t_end+140
    d = ep.t_start - timedelta(days=140)
    expected = []
    while d <= ep.t_end + timedelta(days=140):
        expected.append((d, 1 if ep.t_start <= d <= ep.t_end else 0))
        d += timedelta(days=7)
    assert pts == expected


def test_identification_grid_30_weeks():
    ep = episode(date(2020, 3, 2), 209)
    pts, _ = sample_identification_grid(None, ep)
    assert len(pts) == 70
    assert sum(l for _, l in pts) == 30


def test_never_pregnant_grid_centered():
    events = [(101, date(2018, 1, 1) + timedelta(days=7 * i)) for i in range(200)]
    rec = make_record("n", events)
    pts, clamped = sample_identification_grid(rec, None)
    assert len(pts) == 80
    assert not clamped
    assert all(l == 0 for _, l in pts)
    mid = date(2018, 1, 1) + timedelta(days=(events[-1][1] - events[0][1]).days // 2)
    center = pts[0][0] + (pts[-1][0] - pts[0][0]) / 2
    assert abs((center - mid).days) <= 7


def test_never_pregnant_short_history_clamped():
    events = [(101, date(2020, 1, 1)), (101, date(2020, 6, 1))]
    rec = make_record("n", events)
    pts, clamped = sample_identification_grid(rec, None)
    assert clamped
    assert all(events[0][1] <= d <= events[1][1] for d, _ in pts)


def test_cutoffs_inside_support_and_deterministic():
    ep = episode(date(2020, 1, 10), 270)
    cuts = sample_complication_cutoffs(ep, RiskLabel.GHT, n=10, seed=4)
    assert len(cuts) == 10
    lo = ep.t_start - timedelta(days=90)
    assert all(lo <= d <= ep.t_end for d, _ in cuts)
    assert [d for d, _ in cuts] == sorted(d for d, _ in cuts)
    assert all(label == RiskLabel.GHT for _, label in cuts)
    again = sample_complication_cutoffs(ep, RiskLabel.GHT, n=10, seed=4)
    assert cuts == again
    other = sample_complication_cutoffs(ep, RiskLabel.GHT, n=10, seed=5)
    assert cuts != other


def test_cutoff_quartiles_match_uniform():
    # Monte-Carlo check of the uniform CDF over many episodes
    rng = np.random.default_rng(0)
    positions = []
    for i in range(1000):
        start = date(2019, 1, 1) + timedelta(days=int(rng.integers(0, 300)))
        ep = episode(start, int(rng.integers(200, 295)))
        span = (ep.t_end - (ep.t_start - timedelta(days=90))).days
        for d, _ in sample_complication_cutoffs(ep, RiskLabel.NONE, n=10, seed=i):
            positions.append((d - (ep.t_start - timedelta(days=90))).days / span)
    q = np.quantile(positions, [0.25, 0.5, 0.75])
    assert np.allclose(q, [0.25, 0.5, 0.75], atol=0.02)


def test_episode_seed_stable():
    assert episode_seed(7, "P00001") == episode_seed(7, "P00001")
    assert episode_seed(7, "P00001") != episode_seed(8, "P00001")
    assert episode_seed(7, "P00001") != episode_seed(7, "P00002")


# --- sparse rows and matrix io ---------------------------------------------

def test_sparse_example_normalizes_order():
    a = SparseExample("p", AS_OF, (3, 1, 7), (1.0, 0.5, 2.0))
    assert a.columns == (1, 3, 7)
    assert a.values == (0.5, 1.0, 2.0)
    with pytest.raises(ValueError):
        SparseExample("p", AS_OF, (1, 1), (1.0, 1.0))


def test_design_matrix_round_trip(tmp_path, rec, vocab):
    ex1 = extract_features(rec, AS_OF, FeatureSpec(), vocab, label=1)
    ex2 = extract_features(rec, AS_OF + timedelta(days=14), FeatureSpec(), vocab, label=0)
    matrix = DesignMatrix([ex1, ex2], vocab.total_columns, vocab.fingerprint)
    path = tmp_path / "m.dm"
    write_design_matrix(matrix, path)
    loaded = read_design_matrix(path)
    assert loaded.n_columns == matrix.n_columns
    assert loaded.vocab_fingerprint == vocab.fingerprint
    assert loaded.examples == matrix.examples
    # byte-stable rewrite
    path2 = tmp_path / "m2.dm"
    write_design_matrix(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_complication_windows_constant():
    assert COMPLICATION_WINDOWS == (30, 180, 365, 730, 10000)


def test_domain_filter_excludes_other_domains():
    from claimsight.features import TEMPORAL_DOMAINS
    from claimsight.vocab import ConceptCode, Domain, Vocabulary

    vocabulary = Vocabulary(
        [
            ConceptCode(101, Domain.CONDITION, "kept"),
            ConceptCode(501, Domain.OBSERVATION, "filtered"),
        ]
    )
    rec = make_record(
        "p",
        [(101, AS_OF - timedelta(days=2)), (501, AS_OF - timedelta(days=2))],
        birth=date(1990, 1, 1),
    )
    spec = FeatureSpec(domains=TEMPORAL_DOMAINS)
    vocab = freeze_vocabulary([(rec, AS_OF)], spec, vocabulary=vocabulary)
    concepts = {c for c, _ in vocab.windowed_index}
    assert concepts == {101}
    ex = extract_features(rec, AS_OF, spec, vocab, vocabulary=vocabulary)
    assert all(vocab.column_concept(c)[0] != 501 for c in ex.columns)
    # declaring a filter without the vocabulary is a usage error
    with pytest.raises(ValueError, match="vocabulary"):
        freeze_vocabulary([(rec, AS_OF)], spec)
