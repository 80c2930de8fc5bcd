"""Index-visit selection, exclusions, one-year outcome labels and the
reference baselines (the CHEO best-practice alert, all-positive, random)."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import MISSING, PatientRecord

PRIOR_ED_FEATURE = "IsAsthmaEDVisitWithinOneYearPreIndex"
PRAM_FEATURE = "PRAM_FirstReading_Index"
OCS_FEATURE = "OCS_index_total_count"
PRAM_ALERT_LEVEL = 3


class Setting(str, enum.Enum):
    ED = "ED"
    INPATIENT = "Inpatient"
    RESPIROLOGY_CLINIC = "RespirologyClinic"
    ASTHMA_EDUCATION = "AsthmaEducation"


PROGRAM_SETTINGS = (Setting.RESPIROLOGY_CLINIC, Setting.ASTHMA_EDUCATION)


@dataclass(frozen=True)
class Encounter:
    patient_id: str
    timestamp: datetime
    setting: Setting
    asthma_dx: bool = False
    non_asthma_resp_dx: bool = False
    pram_at_triage: int | None = None
    received_systemic_ocs: bool = False
    admitted_same_day: bool = False

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting(self.setting))
        if self.pram_at_triage is not None and not 0 <= self.pram_at_triage <= 12:
            raise ValueError(f"PRAM must lie in [0, 12], got {self.pram_at_triage}")


@dataclass(frozen=True)
class AccrualWindow:
    accrual_start: date
    accrual_end: date
    outcome_horizon_days: int = 365

    def __post_init__(self):
        if not self.accrual_start < self.accrual_end:
            raise ValueError("accrual_start must precede accrual_end")
        if self.outcome_horizon_days <= 0:
            raise ValueError("outcome horizon must be positive")

    def contains(self, ts: datetime) -> bool:
        d = ts.date() if isinstance(ts, datetime) else ts
        return self.accrual_start <= d <= self.accrual_end


@dataclass(frozen=True)
class OutcomeLabel:
    ed_revisit: bool
    admission: bool
    contaminated_by_program: bool = False


def _by_patient(encounters: Iterable[Encounter]) -> dict[str, list[Encounter]]:
    groups: dict[str, list[Encounter]] = {}
    for e in encounters:
        groups.setdefault(e.patient_id, []).append(e)
    for lst in groups.values():
        # full-key sort keeps the result independent of input order
        lst.sort(key=lambda e: (e.timestamp, e.setting.value, e.asthma_dx, e.admitted_same_day))
    return groups


def select_index_visits(
    encounters: Iterable[Encounter], window: AccrualWindow
) -> dict[str, Encounter]:
    """First in-window asthma ED visit per patient.

    Earlier out-of-window ED visits are not index candidates; they stay in the
    encounter history for predictor construction.
    """
    index = {}
    for pid, lst in _by_patient(encounters).items():
        for e in lst:
            if e.setting is Setting.ED and e.asthma_dx and window.contains(e.timestamp):
                index[pid] = e
                break
    return index


def apply_exclusions(
    index_map: Mapping[str, Encounter], encounters: Iterable[Encounter]
) -> dict[str, Encounter]:
    history = _by_patient(encounters)
    kept = {}
    for pid, idx in index_map.items():
        if idx.admitted_same_day:
            continue
        prior_program = any(
            e.setting in PROGRAM_SETTINGS and e.timestamp < idx.timestamp
            for e in history.get(pid, ())
        )
        if not prior_program:
            kept[pid] = idx
    return kept


def label_outcomes(
    index: Encounter,
    encounters: Iterable[Encounter],
    horizon_days: int = 365,
    contamination: bool = True,
) -> OutcomeLabel:
    """Outcomes in the half-open window (index, index + horizon]."""
    if horizon_days <= 0:
        raise ValueError("horizon must be positive")
    end = index.timestamp + timedelta(days=horizon_days)
    ed = admission = program = False
    for e in encounters:
        if e.patient_id != index.patient_id or e is index:
            continue
        if not index.timestamp < e.timestamp <= end:
            continue
        if e.setting is Setting.ED and e.asthma_dx:
            ed = True
        elif e.setting is Setting.INPATIENT and e.asthma_dx:
            admission = True
        elif e.setting in PROGRAM_SETTINGS:
            program = True
    if contamination and program:
        ed = admission = True
    return OutcomeLabel(ed_revisit=ed, admission=admission, contaminated_by_program=program)


def cheo_rule(record: PatientRecord) -> bool:
    """Prior asthma ED visit within 12 months AND (PRAM >= 3 at triage OR
    systemic corticosteroids at this visit). Missing PRAM never fires the
    PRAM clause; missing OCS count never fires the steroid clause."""
    prior = record.values.get(PRIOR_ED_FEATURE, MISSING)
    if prior is MISSING or not prior:
        return False
    pram = record.values.get(PRAM_FEATURE, MISSING)
    ocs = record.values.get(OCS_FEATURE, MISSING)
    pram_clause = pram is not MISSING and float(pram) >= PRAM_ALERT_LEVEL
    ocs_clause = ocs is not MISSING and float(ocs) > 0
    return pram_clause or ocs_clause


def cheo_predictions(records: Sequence[PatientRecord]) -> np.ndarray:
    return np.array([cheo_rule(r) for r in records], dtype=int)


def naive_all_positive(n: int) -> np.ndarray:
    if n <= 0:
        raise ValueError("naive baseline needs at least one patient")
    return np.ones(n, dtype=int)


def naive_f1(prevalence: float) -> float:
    """F1 of the all-positive rule: 2p / (1 + p)."""
    return 2 * prevalence / (1 + prevalence) if prevalence > 0 else 0.0


def random_baseline(n: int, positive_prob: float, seed) -> np.ndarray:
    if not 0.0 <= positive_prob <= 1.0 or math.isnan(positive_prob):
        raise ValueError(f"positive_prob must lie in [0, 1], got {positive_prob}")
    rng = np.random.default_rng(seed)
    return (rng.random(n) < positive_prob).astype(int)
