"""Cohort files, schema manifests and the seeded synthetic cohort generator.

A manifest row carries one feature's marginal distribution (true rate for
Boolean features, category probabilities for Categorical ones, mean and
median for Continuous ones) plus its missing rate. The generator samples
every feature independently from those marginals and draws the outcome from a
planted logistic risk whose Bayes-optimal score is known exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cohort import AccrualWindow
from .schema import (
    MISSING,
    FeatureKind,
    FeatureSchema,
    FeatureSpec,
    PatientRecord,
    normalize_record,
)

MANIFEST_COLUMNS = (
    "name",
    "kind",
    "categories",
    "missing_rate",
    "true_rate",
    "mean",
    "median",
    "category_probs",
)
ID_COLUMNS = ("patient_id", "index_timestamp")
LABEL_COLUMNS = ("patient_id", "label", "label_uncontaminated")
BUILTIN_MANIFESTS = {"pre_covid": "pre_covid.csv", "post_covid": "post_covid.csv"}
PRE_COVID_WINDOW = AccrualWindow(date(2017, 2, 1), date(2019, 2, 28))
POST_COVID_WINDOW = AccrualWindow(date(2022, 7, 1), date(2023, 4, 30))


class CohortFormatError(ValueError):
    """Malformed cohort, label or manifest file. Message carries coordinates."""


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestRow:
    name: str
    kind: FeatureKind
    categories: tuple[str, ...] = ()
    missing_rate: float = 0.0
    true_rate: float | None = None
    mean: float | None = None
    median: float | None = None
    category_probs: tuple[float, ...] = ()

    def fill_value(self) -> float:
        """Mean for Continuous, mode for Boolean and Categorical (as a code)."""
        if self.kind is FeatureKind.CONTINUOUS:
            return float(self.mean)
        if self.kind is FeatureKind.BOOLEAN:
            return 1.0 if (self.true_rate or 0.0) >= 0.5 else 0.0
        return float(int(np.argmax(self.category_probs)))


@dataclass(frozen=True)
class SchemaManifest:
    rows: tuple[ManifestRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        for r in self.rows:
            _check_row(r)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rows]

    def row(self, name: str) -> ManifestRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            tuple(FeatureSpec(r.name, r.kind, r.categories) for r in self.rows)
        )


def _check_row(r: ManifestRow) -> None:
    where = f"manifest feature {r.name!r}"
    if not 0.0 <= r.missing_rate <= 1.0:
        raise CohortFormatError(f"{where}: missing_rate outside [0, 1]")
    if r.kind is FeatureKind.BOOLEAN:
        if r.true_rate is None or not 0.0 <= r.true_rate <= 1.0:
            raise CohortFormatError(f"{where}: Boolean needs true_rate in [0, 1]")
    elif r.kind is FeatureKind.CATEGORICAL:
        if len(r.category_probs) != len(r.categories):
            raise CohortFormatError(f"{where}: one probability per category required")
        if any(p < 0 for p in r.category_probs) or abs(sum(r.category_probs) - 1) > 1e-9:
            raise CohortFormatError(f"{where}: category_probs must be >= 0 and sum to 1")
        for c in r.categories:
            # serialized text uses ", " as the fragment separator
            if ", " in c or "\n" in c:
                raise CohortFormatError(f"{where}: category label {c!r} contains a separator")
    else:
        if r.mean is None or r.median is None:
            raise CohortFormatError(f"{where}: Continuous needs mean and median")
        if not (math.isfinite(r.mean) and math.isfinite(r.median)):
            raise CohortFormatError(f"{where}: non-finite mean/median")


def _opt_float(cell: str, where: str) -> float | None:
    if cell.strip() == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise CohortFormatError(f"{where}: unparseable number {cell!r}") from None


def read_manifest(source: str | Path) -> SchemaManifest:
    """Read a manifest CSV. ``source`` may be a path or a built-in name
    (``pre_covid`` / ``post_covid``)."""
    if str(source) in BUILTIN_MANIFESTS:
        text = (
            resources.files("asthma_risk.manifests")
            .joinpath(BUILTIN_MANIFESTS[str(source)])
            .read_text(encoding="utf-8")
        )
    else:
        text = Path(source).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != MANIFEST_COLUMNS:
        raise CohortFormatError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(MANIFEST_COLUMNS):
            raise CohortFormatError(f"manifest line {lineno}: expected 8 cells, got {len(cells)}")
        name, kind, cats, miss, true_rate, mean, median, probs = cells
        where = f"manifest line {lineno}"
        try:
            kind = FeatureKind(kind)
        except ValueError:
            raise CohortFormatError(f"{where}: unknown kind {kind!r}") from None
        categories = tuple(cats.split("|")) if cats else ()
        prob_vals = tuple(float(p) for p in probs.split("|")) if probs else ()
        rows.append(
            ManifestRow(
                name=name,
                kind=kind,
                categories=categories,
                missing_rate=_opt_float(miss, where) or 0.0,
                true_rate=_opt_float(true_rate, where),
                mean=_opt_float(mean, where),
                median=_opt_float(median, where),
                category_probs=prob_vals,
            )
        )
    return SchemaManifest(tuple(rows))


def write_manifest(manifest: SchemaManifest, path: str | Path) -> None:
    def num(x):
        return "" if x is None else repr(float(x))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            w.writerow(
                [
                    r.name,
                    r.kind.value,
                    "|".join(r.categories),
                    num(r.missing_rate),
                    num(r.true_rate),
                    num(r.mean),
                    num(r.median),
                    "|".join(repr(float(p)) for p in r.category_probs),
                ]
            )


# --------------------------------------------------------------------------
# cohorts


@dataclass
class Cohort:
    """Records plus outcome labels.

    ``labels`` count asthma-program contact as a positive outcome;
    ``labels_uncontaminated`` only count true revisits/admissions and are used
    to score the CHEO rule. When the latter is absent it equals ``labels``.
    """

    schema: FeatureSchema
    records: list[PatientRecord]
    labels: np.ndarray | None = None
    labels_uncontaminated: np.ndarray | None = None
    _X: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if len(self.labels) != len(self.records):
                raise ValueError("labels and records differ in length")
        if self.labels_uncontaminated is None:
            self.labels_uncontaminated = self.labels
        else:
            self.labels_uncontaminated = np.asarray(self.labels_uncontaminated, dtype=int)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = self.schema.encode(self.records)
        return self._X

    @property
    def y(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("cohort is unlabeled")
        return self.labels

    @property
    def prevalence(self) -> float:
        return float(np.mean(self.y))

    def take(self, idx: Sequence[int]) -> "Cohort":
        idx = np.asarray(idx, dtype=int)
        sub = Cohort(
            self.schema,
            [self.records[i] for i in idx],
            None if self.labels is None else self.labels[idx],
            None if self.labels_uncontaminated is None else self.labels_uncontaminated[idx],
        )
        if self._X is not None:
            sub._X = self._X[idx]
        return sub

    def restrict(self, names) -> "Cohort":
        """Same patients, schema cut down to ``names`` (schema order kept)."""
        schema = self.schema.subset(names)
        records = [
            r.replace_values({n: r.values[n] for n in schema.names}) for r in self.records
        ]
        sub = Cohort(schema, records, self.labels, self.labels_uncontaminated)
        if self._X is not None:
            sub._X = self._X[:, [self.schema.index(n) for n in schema.names]]
        return sub


def _format_value(spec: FeatureSpec, v) -> str:
    if v is MISSING:
        return ""
    if spec.kind is FeatureKind.BOOLEAN:
        return "True" if v else "False"
    if spec.kind is FeatureKind.CATEGORICAL:
        return v
    return repr(float(v))


_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def _parse_value(spec: FeatureSpec, cell: str, where: str):
    if cell == "":
        return MISSING
    if spec.kind is FeatureKind.BOOLEAN:
        low = cell.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise CohortFormatError(f"{where}: unparseable Boolean {cell!r}")
    if spec.kind is FeatureKind.CATEGORICAL:
        if cell not in spec.categories:
            raise CohortFormatError(f"{where}: unknown category {cell!r}")
        return cell
    try:
        x = float(cell)
    except ValueError:
        raise CohortFormatError(f"{where}: unparseable number {cell!r}") from None
    if not math.isfinite(x):
        raise CohortFormatError(f"{where}: non-finite number {cell!r}")
    return x


def save_cohort(schema: FeatureSchema, records: Sequence[PatientRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ID_COLUMNS) + schema.names)
        for r in records:
            ts = "" if r.index_timestamp is None else r.index_timestamp.isoformat()
            w.writerow(
                [r.patient_id, ts]
                + [_format_value(s, r.values.get(s.name, MISSING)) for s in schema.specs]
            )


def load_cohort(data_path, manifest_path) -> tuple[FeatureSchema, list[PatientRecord]]:
    schema = read_manifest(manifest_path).schema()
    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = list(ID_COLUMNS) + schema.names
        if header != expected:
            got = header or []
            for col, (a, b) in enumerate(zip(got + [""] * len(expected), expected), start=1):
                if a != b:
                    raise CohortFormatError(
                        f"{data_path}: header column {col} is {a!r}, manifest expects {b!r}"
                    )
            raise CohortFormatError(f"{data_path}: header has extra columns")
        records = []
        for row_no, cells in enumerate(reader, start=2):
            if len(cells) != len(expected):
                raise CohortFormatError(
                    f"{data_path} row {row_no}: expected {len(expected)} cells, got {len(cells)}"
                )
            ts = datetime.fromisoformat(cells[1]) if cells[1] else None
            values = {}
            for col, (spec, cell) in enumerate(zip(schema.specs, cells[2:]), start=3):
                where = f"{data_path} row {row_no} column {col} ({spec.name})"
                values[spec.name] = _parse_value(spec, cell, where)
            records.append(normalize_record(schema, PatientRecord(cells[0], ts, values)))
    return schema, records


def save_labels(cohort: Cohort, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for r, a, b in zip(cohort.records, cohort.labels, cohort.labels_uncontaminated):
            w.writerow([r.patient_id, int(a), int(b)])


def load_labels(path, records: Sequence[PatientRecord]) -> tuple[np.ndarray, np.ndarray]:
    by_id = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:2]) != LABEL_COLUMNS[:2]:
            raise CohortFormatError(f"{path}: header must start with patient_id,label")
        for row_no, cells in enumerate(reader, start=2):
            try:
                a = int(cells[1])
                b = int(cells[2]) if len(cells) > 2 and cells[2] != "" else a
            except (ValueError, IndexError):
                raise CohortFormatError(f"{path} row {row_no}: labels must be 0/1") from None
            if a not in (0, 1) or b not in (0, 1):
                raise CohortFormatError(f"{path} row {row_no}: labels must be 0/1")
            by_id[cells[0]] = (a, b)
    try:
        pairs = [by_id[r.patient_id] for r in records]
    except KeyError as exc:
        raise CohortFormatError(f"{path}: no label for patient {exc.args[0]}") from None
    arr = np.array(pairs, dtype=int).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def read_cohort(data_path, manifest_path, labels_path=None) -> Cohort:
    schema, records = load_cohort(data_path, manifest_path)
    if labels_path is None:
        return Cohort(schema, records)
    y, y_clean = load_labels(labels_path, records)
    return Cohort(schema, records, y, y_clean)


# --------------------------------------------------------------------------
# planted risk and generation


@dataclass(frozen=True)
class PlantedRisk:
    """Logistic risk sigma(w . x~ + bias) over the encoded feature values.

    Categorical features contribute through their category index. ``fill``
    holds the mean/mode used for missing values; :meth:`bind` fills it from
    a manifest.
    """

    weights: Mapping[str, float]
    bias: float
    fill: Mapping[str, float] = field(default_factory=dict)

    def bind(self, manifest: SchemaManifest) -> "PlantedRisk":
        fill = {r.name: r.fill_value() for r in manifest.rows}
        fill.update(self.fill)
        return replace(self, fill=fill)

    def logits(self, schema: FeatureSchema, X: np.ndarray) -> np.ndarray:
        z = np.full(X.shape[0], float(self.bias))
        for name, w in self.weights.items():
            if w == 0:
                continue
            col = X[:, schema.index(name)]
            col = np.where(np.isnan(col), self.fill.get(name, 0.0), col)
            z += w * col
        return z

    def scores(self, schema: FeatureSchema, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(schema, X))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def oracle_score(risk: PlantedRisk, record: PatientRecord, schema: FeatureSchema | None = None) -> float:
    """Bayes-optimal probability for one record under the planted risk."""
    z = float(risk.bias)
    for name, w in risk.weights.items():
        v = record.values.get(name, MISSING)
        if v is MISSING:
            x = risk.fill.get(name, 0.0)
        elif isinstance(v, str):
            if schema is None:
                raise ValueError(f"categorical {name!r} needs the schema to encode")
            x = float(schema.spec(name).categories.index(v))
        else:
            x = float(v)
        z += w * x
    return float(_sigmoid(z))


def _sample_continuous(row: ManifestRow, n: int, rng: np.random.Generator) -> np.ndarray:
    mean, median = float(row.mean), abs(float(row.median))
    if median == 0.0:
        # zero median with positive mean: a count variable
        return rng.poisson(max(mean, 0.0), n).astype(float)
    if mean > 2.0 * median:
        sigma = math.sqrt(2.0 * math.log(mean / median))
        return rng.lognormal(math.log(median), sigma, n)
    sd = 0.25 * abs(mean) if mean != 0 else 1.0
    out = rng.normal(mean, sd, n)
    # symmetric truncation at +-2 sd keeps the mean; resample the tails
    bad = np.abs(out - mean) > 2 * sd
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = np.abs(out - mean) > 2 * sd
    return out


def sample_feature_matrix(manifest: SchemaManifest, n: int, rng: np.random.Generator) -> np.ndarray:
    """Encoded (n, M) matrix drawn from the manifest marginals, NaN = missing."""
    X = np.empty((n, len(manifest.rows)))
    for j, row in enumerate(manifest.rows):
        if row.kind is FeatureKind.BOOLEAN:
            col = (rng.random(n) < row.true_rate).astype(float)
        elif row.kind is FeatureKind.CATEGORICAL:
            col = rng.choice(len(row.categories), size=n, p=np.asarray(row.category_probs)).astype(float)
        else:
            col = _sample_continuous(row, n, rng)
        if row.kind is not FeatureKind.BOOLEAN and row.missing_rate > 0:
            col[rng.random(n) < row.missing_rate] = np.nan
        X[:, j] = col
    return X


def generate_cohort(
    manifest: SchemaManifest,
    n: int,
    risk: PlantedRisk,
    seed,
    *,
    contamination_rate: float = 0.0,
    window: AccrualWindow = PRE_COVID_WINDOW,
    id_prefix: str = "P",
) -> Cohort:
    """Draw ``n`` independent records and planted outcomes from one RNG stream.

    ``contamination_rate`` is the chance that a patient without a true
    outcome had asthma-program contact, which flips only the contaminated
    label to positive.
    """
    if n <= 0:
        raise ValueError("cohort size must be positive")
    schema = manifest.schema()
    risk = risk.bind(manifest)
    rng = np.random.default_rng(seed)
    X = sample_feature_matrix(manifest, n, rng)
    span = (window.accrual_end - window.accrual_start).days * 86400
    offsets = rng.integers(0, span, n)
    start = datetime.combine(window.accrual_start, datetime.min.time())
    p = risk.scores(schema, X)
    y_clean = (rng.random(n) < p).astype(int)
    program = rng.random(n) < contamination_rate
    y = np.where(program, 1, y_clean)
    width = max(6, len(str(n)))
    records = [
        PatientRecord(
            f"{id_prefix}{i:0{width}d}",
            start + timedelta(seconds=int(offsets[i])),
            schema.decode_row(X[i]),
        )
        for i in range(n)
    ]
    cohort = Cohort(schema, records, y, y_clean)
    cohort._X = X
    return cohort


def calibrate_bias(
    manifest: SchemaManifest,
    weights: Mapping[str, float],
    target_prevalence: float,
    *,
    n: int = 50_000,
    seed: int = 0,
) -> float:
    """Bias giving the requested expected prevalence (bisection on a fixed sample)."""
    schema = manifest.schema()
    X = sample_feature_matrix(manifest, n, np.random.default_rng(seed))
    base = PlantedRisk(dict(weights), 0.0).bind(manifest).logits(schema, X)
    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _sigmoid(base + mid).mean() < target_prevalence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# Signal on the features the ED model ranked highest: prior asthma ED visit,
# CTAS, medical complexity, food allergy, prior non-asthma respiratory ED
# visit, and age. Scaled so the Bayes AUC is near 0.90.
ED_SIGNAL_WEIGHTS = {
    "IsAsthmaEDVisitWithinOneYearPreIndex": 3.0,
    "CTAS": -1.6,
    "Complexity": 2.8,
    "Allergen_Food": 2.2,
    "IsNonAsthmaRespEDVisitWithinOneYearPreIndex": 2.0,
    "AgeInYearsAtIndex": -1.3,
}
ADMISSION_SIGNAL_WEIGHTS = {
    "Complexity": 3.0,
    "IsAsthmaEDVisitWithinOneYearPreIndex": 2.5,
    "Mean_avg_waittime": 0.04,
    "PRAM_FirstReading_Index": 0.5,
    "Allergen_Food": 1.8,
}
TWO_SIGNAL_WEIGHTS = {
    "IsAsthmaEDVisitWithinOneYearPreIndex": 3.0,
    "Allergen_Food": 2.5,
}
OUTCOME_PREVALENCE = {"ed": 795 / 2716, "admission": 323 / 2716}


def planted_risk(preset: str, manifest: SchemaManifest, prevalence: float | None = None) -> PlantedRisk:
    """Named risk presets: ``ed``, ``admission``, ``two_signal``, ``null``."""
    weights = {
        "ed": ED_SIGNAL_WEIGHTS,
        "admission": ADMISSION_SIGNAL_WEIGHTS,
        "two_signal": TWO_SIGNAL_WEIGHTS,
        "null": {},
    }.get(preset)
    if weights is None:
        raise ValueError(f"unknown risk preset {preset!r}")
    if prevalence is None:
        prevalence = OUTCOME_PREVALENCE["admission" if preset == "admission" else "ed"]
    if not weights:
        return PlantedRisk({}, math.log(prevalence / (1 - prevalence))).bind(manifest)
    bias = calibrate_bias(manifest, weights, prevalence)
    return PlantedRisk(dict(weights), bias).bind(manifest)
