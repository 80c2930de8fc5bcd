"""Typed feature space for index-visit patient records.

Values are stored as plain Python objects: ``bool`` for Boolean features,
``str`` for Categorical labels, ``float`` for Continuous measurements and the
:data:`MISSING` sentinel for absent data. NaN is never stored; it only appears
in the numeric matrices produced by :meth:`FeatureSchema.encode`.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np


class FeatureKind(str, enum.Enum):
    BOOLEAN = "Boolean"
    CATEGORICAL = "Categorical"
    CONTINUOUS = "Continuous"


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(value) -> bool:
    return value is MISSING


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind
    categories: tuple[str, ...] = ()
    unit_note: str = ""
    boolean_missing_as_false: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.name:
            raise ValueError("feature name must be non-empty")
        if self.kind is FeatureKind.CATEGORICAL:
            if not self.categories:
                raise ValueError(f"{self.name}: categorical feature needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"{self.name}: duplicate category labels")
        elif self.categories:
            raise ValueError(f"{self.name}: only categorical features carry categories")

    def check(self, value) -> str | None:
        """Return a reason string if ``value`` is illegal for this feature."""
        if value is MISSING:
            return None
        if self.kind is FeatureKind.BOOLEAN:
            if not isinstance(value, (bool, np.bool_)):
                return f"expected Boolean flag, got {value!r}"
        elif self.kind is FeatureKind.CATEGORICAL:
            if not isinstance(value, str):
                return f"expected category label, got {value!r}"
            if value not in self.categories:
                return f"unknown category {value!r}"
        else:
            if isinstance(value, (bool, np.bool_)) or not isinstance(
                value, (int, float, np.integer, np.floating)
            ):
                return f"expected number, got {value!r}"
            if not math.isfinite(float(value)):
                return f"non-finite number {value!r}"
        return None


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    index_timestamp: datetime | None
    values: Mapping[str, object] = field(default_factory=dict)

    def __getitem__(self, name: str):
        return self.values[name]

    def replace_values(self, values: Mapping[str, object]) -> "PatientRecord":
        return PatientRecord(self.patient_id, self.index_timestamp, dict(values))


@dataclass(frozen=True)
class FeatureSchema:
    specs: tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dupes}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def spec(self, name: str) -> FeatureSpec:
        return self.specs[self._index[name]]

    def index(self, name: str) -> int:
        return self._index[name]

    def fingerprint(self) -> str:
        """Hash of the ordered (name, kind) sequence.

        Category sets are excluded so that a cohort with category drift can
        still be scored by a model; unseen labels encode as missing.
        """
        h = hashlib.sha256()
        for s in self.specs:
            h.update(f"{s.name}\t{s.kind.value}\n".encode())
        return h.hexdigest()[:16]

    def subset(self, names: Iterable[str]) -> "FeatureSchema":
        """Restrict to ``names``, keeping this schema's order."""
        wanted = set(names)
        unknown = wanted - set(self._index)
        if unknown:
            raise KeyError(f"features not in schema: {sorted(unknown)}")
        return FeatureSchema(tuple(s for s in self.specs if s.name in wanted))

    def categorical_mask(self) -> np.ndarray:
        return np.array([s.kind is FeatureKind.CATEGORICAL for s in self.specs], dtype=bool)

    def encode(self, records: Sequence[PatientRecord]) -> np.ndarray:
        """Numeric matrix view: flags as 0/1, categories as their list index,
        NaN for missing or for category labels this schema does not know."""
        X = np.full((len(records), len(self.specs)), np.nan)
        lookups = [
            {c: float(k) for k, c in enumerate(s.categories)}
            if s.kind is FeatureKind.CATEGORICAL
            else None
            for s in self.specs
        ]
        for i, rec in enumerate(records):
            vals = rec.values
            for j, s in enumerate(self.specs):
                v = vals.get(s.name, MISSING)
                if v is MISSING:
                    continue
                lk = lookups[j]
                if lk is not None:
                    X[i, j] = lk.get(v, np.nan)
                else:
                    X[i, j] = float(v)
        return X

    def decode_row(self, row: np.ndarray) -> dict[str, object]:
        out = {}
        for s, x in zip(self.specs, row):
            if np.isnan(x):
                out[s.name] = MISSING
            elif s.kind is FeatureKind.BOOLEAN:
                out[s.name] = bool(x)
            elif s.kind is FeatureKind.CATEGORICAL:
                out[s.name] = s.categories[int(x)]
            else:
                out[s.name] = float(x)
        return out


def validate_record(schema: FeatureSchema, record: PatientRecord) -> list[tuple[str, str]]:
    """List ``(feature, reason)`` violations; empty when the record is legal."""
    violations = []
    for s in schema.specs:
        if s.name not in record.values:
            violations.append((s.name, "no value (use MISSING for absent data)"))
            continue
        reason = s.check(record.values[s.name])
        if reason is not None:
            violations.append((s.name, reason))
    extra = set(record.values) - set(schema.names)
    for name in sorted(extra):
        violations.append((name, "feature not in schema"))
    return violations


def normalize_record(schema: FeatureSchema, record: PatientRecord) -> PatientRecord:
    """Fill absent features with MISSING, then set missing Booleans to False
    when their spec has ``boolean_missing_as_false``. Idempotent."""
    values = {}
    for s in schema.specs:
        v = record.values.get(s.name, MISSING)
        if s.kind is FeatureKind.BOOLEAN:
            if v is MISSING and s.boolean_missing_as_false:
                v = False
            elif v is not MISSING:
                v = bool(v)
        elif s.kind is FeatureKind.CONTINUOUS and v is not MISSING:
            v = float(v)
        values[s.name] = v
    return record.replace_values(values)


def missingness_profile(
    schema: FeatureSchema, records: Sequence[PatientRecord]
) -> dict[str, float]:
    if not records:
        raise ValueError("empty cohort")
    n = len(records)
    return {
        s.name: sum(1 for r in records if r.values.get(s.name, MISSING) is MISSING) / n
        for s in schema.specs
    }
