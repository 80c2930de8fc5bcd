from datetime import date, datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asthma_risk.cohort import (
    AccrualWindow,
    Encounter,
    Setting,
    apply_exclusions,
    cheo_rule,
    label_outcomes,
    naive_all_positive,
    naive_f1,
    random_baseline,
    select_index_visits,
)
from asthma_risk.metrics import confusion, prf1
from asthma_risk.schema import MISSING, PatientRecord

WINDOW = AccrualWindow(date(2017, 2, 1), date(2019, 2, 28))
T0 = datetime(2018, 1, 1, 10)


def enc(pid, day, setting=Setting.ED, **kw):
    return Encounter(pid, T0 + timedelta(days=day), setting, **kw)


def test_index_is_first_in_window_visit():
    es = [
        enc("A", -400, asthma_dx=True),  # before the window
        enc("A", 10, asthma_dx=True),
        enc("A", 40, asthma_dx=True),
        enc("B", 5, Setting.RESPIROLOGY_CLINIC),
        enc("C", 5, asthma_dx=True),
        enc("C", 40, asthma_dx=True),
    ]
    idx = select_index_visits(es, WINDOW)
    assert idx["A"].timestamp == T0 + timedelta(days=10)
    assert "B" not in idx
    assert idx["C"].timestamp == T0 + timedelta(days=5)


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(6))))
def test_index_selection_is_order_invariant(perm):
    es = [enc("A", d, asthma_dx=True) for d in (30, 5, 90)] + [enc("B", d, asthma_dx=True) for d in (7, 3, 60)]
    shuffled = [es[i] for i in perm]
    assert select_index_visits(shuffled, WINDOW) == select_index_visits(es, WINDOW)


def test_exclusions():
    same_day = enc("A", 0, asthma_dx=True, admitted_same_day=True)
    b_idx = enc("B", 0, asthma_dx=True)
    c_idx = enc("C", 0, asthma_dx=True)
    es = [same_day, b_idx, enc("B", 2, Setting.ASTHMA_EDUCATION), c_idx,
          enc("C", -100, Setting.RESPIROLOGY_CLINIC)]
    kept = apply_exclusions({"A": same_day, "B": b_idx, "C": c_idx}, es)
    assert set(kept) == {"B"}


def test_outcome_labels_and_contamination():
    idx = enc("A", 0, asthma_dx=True)
    lab = label_outcomes(idx, [idx, enc("A", 200, asthma_dx=True)])
    assert (lab.ed_revisit, lab.admission) == (True, False)
    es = [idx, enc("A", 90, Setting.RESPIROLOGY_CLINIC)]
    on = label_outcomes(idx, es, contamination=True)
    off = label_outcomes(idx, es, contamination=False)
    assert on.ed_revisit and on.admission and on.contaminated_by_program
    assert not off.ed_revisit and not off.admission


def test_horizon_is_half_open():
    idx = enc("A", 0, asthma_dx=True)
    same = enc("A", 0, asthma_dx=True, admitted_same_day=False)
    edge = enc("A", 365, Setting.INPATIENT, asthma_dx=True)
    late = enc("A", 366, asthma_dx=True)
    lab = label_outcomes(idx, [idx, same, edge, late])
    assert lab.admission and not lab.ed_revisit
    with pytest.raises(ValueError):
        label_outcomes(idx, [idx], horizon_days=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 400), st.sampled_from(list(Setting)), st.booleans()), max_size=8))
def test_contaminated_labels_are_superset(visits):
    idx = enc("A", 0, asthma_dx=True)
    es = [idx] + [enc("A", d, s, asthma_dx=a) for d, s, a in visits]
    on = label_outcomes(idx, es, contamination=True)
    off = label_outcomes(idx, es, contamination=False)
    assert on.ed_revisit >= off.ed_revisit and on.admission >= off.admission


def test_pram_range_enforced():
    with pytest.raises(ValueError):
        enc("A", 0, pram_at_triage=13)


def cheo(prior, pram, ocs):
    return cheo_rule(PatientRecord("x", None, {
        "IsAsthmaEDVisitWithinOneYearPreIndex": prior,
        "PRAM_FirstReading_Index": pram,
        "OCS_index_total_count": ocs,
    }))


def test_cheo_rule_cases():
    assert cheo(True, 4.0, 0.0)
    assert not cheo(False, 10.0, 1.0)
    assert cheo(True, 2.0, 1.0)
    assert not cheo(True, MISSING, 0.0)
    assert cheo(True, MISSING, 2.0)
    assert cheo(True, 3.0, MISSING)


@pytest.mark.parametrize("pos,n,expected", [(352, 1237, 704 / 1589), (795, 2716, 1590 / 3511),
                                            (220, 1237, 440 / 1457)])
def test_naive_f1_closed_form(pos, n, expected):
    labels = np.r_[np.ones(pos), np.zeros(n - pos)]
    _, _, f1 = prf1(confusion(naive_all_positive(n), labels, 0.5))
    assert f1 == pytest.approx(expected, abs=1e-12)
    assert naive_f1(pos / n) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 500), st.integers(1, 500))
def test_naive_prf1_property(pos, neg):
    labels = np.r_[np.ones(pos), np.zeros(neg)]
    p, r, f = prf1(confusion(naive_all_positive(pos + neg), labels, 0.5))
    prev = pos / (pos + neg)
    assert p == pytest.approx(prev, abs=1e-12) and r == 1.0
    assert f == pytest.approx(2 * prev / (1 + prev), abs=1e-12)


def test_naive_requires_patients():
    with pytest.raises(ValueError):
        naive_all_positive(0)


def test_random_baseline():
    a = random_baseline(1000, 0.5, 3)
    assert np.array_equal(a, random_baseline(1000, 0.5, 3))
    assert np.array_equal(random_baseline(50, 1.0, 0), naive_all_positive(50))
    with pytest.raises(ValueError):
        random_baseline(10, 1.5, 0)


def test_random_baseline_converges_to_prevalence():
    rng = np.random.default_rng(0)
    labels = (rng.random(5000) < 0.30).astype(int)
    stats = np.array([prf1(confusion(random_baseline(5000, 0.30, s), labels, 0.5)) for s in range(100, 140)])
    assert np.all(np.abs(stats.mean(0) - [labels.mean(), 0.30, 0.30]) < 0.01)
