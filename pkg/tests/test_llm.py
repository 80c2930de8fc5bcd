import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asthma_risk.llm import (
    MockProvider,
    ProviderError,
    build_inference_prompt,
    corpus_line,
    export_finetune_corpus,
    parse_fragments,
    parse_outcome,
    parse_value,
    permute_outcome_last,
    predict_averaged,
    serialize_record,
)
from asthma_risk.schema import MISSING, FeatureKind, FeatureSchema, FeatureSpec, PatientRecord

SCHEMA = FeatureSchema((
    FeatureSpec("Sex", FeatureKind.CATEGORICAL, ("Female", "Male")),
    FeatureSpec("AgeInYearsAtIndex", FeatureKind.CONTINUOUS),
    FeatureSpec("Allergen_Food", FeatureKind.BOOLEAN),
))


def test_serialize_examples():
    r = PatientRecord("p", None, {"Sex": "Female", "AgeInYearsAtIndex": 3.0})
    assert serialize_record(SCHEMA, r, ["Sex", "AgeInYearsAtIndex"]).text == \
        "Sex is Female, AgeInYearsAtIndex is 3,"
    r = PatientRecord("p", None, {"Allergen_Food": MISSING})
    assert serialize_record(SCHEMA, r, ["Allergen_Food"]).text == "Allergen_Food is missing,"
    assert serialize_record(SCHEMA, r, []).text == ""
    with pytest.raises(KeyError):
        serialize_record(SCHEMA, r, ["Nope"])


def test_number_formatting():
    r = PatientRecord("p", None, {"AgeInYearsAtIndex": 2.5000001})
    assert serialize_record(SCHEMA, r, ["AgeInYearsAtIndex"]).text == "AgeInYearsAtIndex is 2.5,"
    r = PatientRecord("p", None, {"AgeInYearsAtIndex": 1234.5678})
    assert serialize_record(SCHEMA, r, ["AgeInYearsAtIndex"]).text == "AgeInYearsAtIndex is 1234.57,"


def test_permutation_outcome_last():
    for seed in range(20):
        order = permute_outcome_last(["a", "b", "c"], "y", seed)
        assert order[-1] == "y" and sorted(order[:-1]) == ["a", "b", "c"]
    assert permute_outcome_last(["x"], "y", 0) == ["x", "y"]
    assert permute_outcome_last(list("abcdef"), "y", 9) == permute_outcome_last(list("abcdef"), "y", 9)
    with pytest.raises(ValueError):
        permute_outcome_last(["a", "y"], "y", 0)


def test_prompt_template():
    schema = FeatureSchema((FeatureSpec("A", FeatureKind.BOOLEAN), FeatureSpec("B", FeatureKind.CONTINUOUS)))
    r = PatientRecord("p", None, {"A": True, "B": 5.0})
    prompts = {build_inference_prompt(schema, r, "ED_visit", s) for s in range(20)}
    assert prompts == {"B is 5, A is True, ED_visit is", "A is True, B is 5, ED_visit is"}


def test_parse_outcome():
    assert parse_outcome(" 1,") == 1
    assert parse_outcome("False") == 0
    assert parse_outcome("yes, definitely") == 1
    assert parse_outcome("maybe") is None
    assert parse_outcome("") is None


class Scripted:
    def __init__(self, answers):
        self.answers = list(answers)

    def complete(self, prompt, seed):
        return self.answers.pop(0)


class Failing:
    def complete(self, prompt, seed):
        raise RuntimeError("model offline")


def test_predict_averaged():
    r = PatientRecord("p", None, {"Sex": "Male", "AgeInYearsAtIndex": 4.0, "Allergen_Food": True})
    assert predict_averaged(SCHEMA, r, Scripted(["1"] * 5), "ED_visit") == 1.0
    assert predict_averaged(SCHEMA, r, Scripted(["1", "0", "1", "0", "1"]), "ED_visit") == 0.6
    assert predict_averaged(SCHEMA, r, Scripted(["1", "0", "1", "1", "0"][::-1]), "ED_visit") == 0.6
    assert predict_averaged(SCHEMA, r, Scripted(["??", "1"]), "ED_visit", repeats=2) == 0.75
    with pytest.raises(ProviderError, match="repeat 0"):
        predict_averaged(SCHEMA, r, Failing(), "ED_visit")
    with pytest.raises(ValueError):
        predict_averaged(SCHEMA, r, Scripted([]), "ED_visit", repeats=0)


def test_mock_is_deterministic():
    m = MockProvider("Allergen_Food is True")
    assert m.complete("x Allergen_Food is True, y", 1) == m.complete("x Allergen_Food is True, y", 2)


def test_corpus_export(tmp_path, small_cohort):
    n = export_finetune_corpus(small_cohort, "ED_visit", 3, tmp_path / "a.txt")
    export_finetune_corpus(small_cohort, "ED_visit", 3, tmp_path / "b.txt")
    text = (tmp_path / "a.txt").read_bytes()
    assert text == (tmp_path / "b.txt").read_bytes()
    lines = text.decode().splitlines()
    assert n == len(lines) == len(small_cohort)
    for line, y in zip(lines, small_cohort.y):
        assert line.endswith(f"ED_visit is {y},")
        assert line.count("ED_visit is") == 1


def test_round_trip_through_fragments(small_cohort):
    schema = small_cohort.schema
    for i, r in enumerate(small_cohort.records[:50]):
        line = corpus_line(schema, r, int(small_cohort.y[i]), "ED_visit", i)
        pairs = parse_fragments(line)
        assert pairs[-1] == ("ED_visit", str(int(small_cohort.y[i])))
        for name, text in pairs[:-1]:
            v = parse_value(schema.spec(name).kind, text)
            orig = r.values[name]
            if isinstance(orig, float):
                assert v == float(format(orig, ".6g"))
            else:
                assert v == orig


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["Female", "Male"]), min_size=1, max_size=1),
       st.one_of(st.just(MISSING), st.floats(0, 100, allow_nan=False)),
       st.sampled_from([True, False]))
def test_fragment_round_trip_property(sex, age, food):
    r = PatientRecord("p", None, {"Sex": sex[0], "AgeInYearsAtIndex": age, "Allergen_Food": food})
    text = serialize_record(SCHEMA, r, SCHEMA.names).text
    back = {n: parse_value(SCHEMA.spec(n).kind, t) for n, t in parse_fragments(text)}
    assert back["Sex"] == sex[0] and back["Allergen_Food"] == food
    if age is MISSING:
        assert back["AgeInYearsAtIndex"] is MISSING
    else:
        assert back["AgeInYearsAtIndex"] == float(format(age, ".6g"))
