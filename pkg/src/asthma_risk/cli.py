"""Command-line front end.

Every command resolves its settings from an optional ``--config`` file of
``key = value`` lines overlaid by command-line flags, logs the resolved
settings, and embeds them with the schema fingerprint in what it writes.
Exit status: 0 success, 1 data or validation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data_io import (
    Cohort,
    CohortFormatError,
    generate_cohort,
    planted_risk,
    read_cohort,
    read_manifest,
    save_cohort,
    save_labels,
    write_manifest,
    POST_COVID_WINDOW,
    PRE_COVID_WINDOW,
)
from .evaluation import ALL_BASELINES, evaluate_on_validation
from .explain import FeatureRanking, rank_features, reduce_and_retrain, sample_background
from .gbdt import FINAL_ADMISSION_PARAMS, FINAL_ED_PARAMS, GbdtHyperparams, SchemaMismatchError
from .llm import OUTCOME_NAMES, MockProvider, export_finetune_corpus, predict_cohort
from .metrics import auc
from .model_selection import (
    StratificationError,
    ThresholdPolicy,
    bayes_tune,
    fit_beta_calibration,
    stratified_folds,
)
from .model_selection.calibration import IDENTITY as IDENTITY_CALIBRATION
from .pipeline import RiskModel, fit_stage, threshold_stage
from .schema import validate_record

log = logging.getLogger("asthma_risk")

COHORT_FILE = "cohort.csv"
LABELS_FILE = "labels.csv"
MANIFEST_FILE = "manifest.csv"
OOF_COLUMNS = ("patient_id", "fold", "label", "raw_score")
DEFAULT_TOP_K = {"ed": 6, "admission": 5}
FINAL_PARAMS = {"ed": FINAL_ED_PARAMS, "admission": FINAL_ADMISSION_PARAMS}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# shared helpers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_cohort(directory, manifest=None, contamination: str = "on") -> Cohort:
    d = Path(directory)
    if not (d / COHORT_FILE).exists():
        raise UsageError(f"{d}: no {COHORT_FILE}")
    man = manifest or (d / MANIFEST_FILE)
    labels = d / LABELS_FILE
    cohort = read_cohort(d / COHORT_FILE, man, labels if labels.exists() else None)
    if contamination == "off" and cohort.labels is not None:
        cohort = Cohort(cohort.schema, cohort.records, cohort.labels_uncontaminated,
                        cohort.labels_uncontaminated)
    return cohort


def _check_fingerprint(model: RiskModel, cohort: Cohort) -> None:
    got = cohort.schema.fingerprint()
    if got != model.fingerprint():
        raise SchemaMismatchError(model.fingerprint(), got)


def _read_oof(path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    ids, folds, labels, scores = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != OOF_COLUMNS:
            raise CohortFormatError(f"{path}: header must be {','.join(OOF_COLUMNS)}")
        for row_no, cells in enumerate(reader, start=2):
            try:
                ids.append(cells[0])
                folds.append(int(cells[1]))
                labels.append(int(cells[2]))
                scores.append(float(cells[3]))
            except (ValueError, IndexError):
                raise CohortFormatError(f"{path} row {row_no}: malformed out-of-fold row") from None
    return ids, np.array(folds), np.array(labels), np.array(scores)


def _fold_pairs(fold_ids: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    all_idx = np.arange(fold_ids.size)
    return [(all_idx[fold_ids != k], all_idx[fold_ids == k]) for k in np.unique(fold_ids)]


def _model_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.n <= 0:
        raise UsageError(f"--n must be positive, got {args.n}")
    manifest = read_manifest(args.manifest or "pre_covid")
    preset = args.risk or args.outcome
    risk = planted_risk(preset, manifest, args.prevalence)
    window = POST_COVID_WINDOW if args.window == "post" else PRE_COVID_WINDOW
    cohort = generate_cohort(manifest, args.n, risk, args.seed,
                             contamination_rate=args.contamination_rate, window=window,
                             id_prefix=args.id_prefix)
    out = _out_dir(args.out)
    save_cohort(cohort.schema, cohort.records, out / COHORT_FILE)
    save_labels(cohort, out / LABELS_FILE)
    write_manifest(manifest, out / MANIFEST_FILE)
    _write_json(out / "generate.json", {
        "fingerprint": cohort.schema.fingerprint(),
        "config": _model_config(args),
        "risk": {"weights": dict(risk.weights), "bias": risk.bias},
        "n": len(cohort),
        "prevalence": cohort.prevalence,
    })
    print(f"wrote {len(cohort)} records to {out} (prevalence {cohort.prevalence:.3f}, "
          f"fingerprint {cohort.schema.fingerprint()})")
    return 0


def cmd_validate(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    problems = 0
    for r in cohort.records:
        for feature, reason in validate_record(cohort.schema, r):
            problems += 1
            print(f"{r.patient_id}: {feature}: {reason}")
    print(f"{len(cohort)} records, {len(cohort.schema)} features, fingerprint "
          f"{cohort.schema.fingerprint()}, {problems} problems")
    return 1 if problems else 0


def cmd_tune(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    base = GbdtHyperparams(max_rounds=args.max_rounds)
    result = bayes_tune(cohort, None, args.folds, args.budget, args.objective, args.seed,
                        base_params=base, workers=args.workers)
    out = _out_dir(args.out)
    (out / "trials.csv").write_text(result.to_csv(), encoding="utf-8")
    _write_json(out / "params.json", {
        "fingerprint": cohort.schema.fingerprint(),
        "config": _model_config(args),
        "params": result.best_params.to_dict(),
        "best_trial": result.best_trial.index,
        "best_mean_objective": result.best_trial.mean,
    })
    print(f"best trial {result.best_trial.index}: mean CV {args.objective} "
          f"{result.best_trial.mean:.4f}")
    for k, v in result.best_params.to_dict().items():
        print(f"  {k} = {v}")
    return 0


def _load_params(path, outcome: str, cohort: Cohort, max_rounds: int | None) -> GbdtHyperparams:
    if path is None:
        params = FINAL_PARAMS[outcome]
    else:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("fingerprint") not in (None, cohort.schema.fingerprint()):
            raise SchemaMismatchError(doc["fingerprint"], cohort.schema.fingerprint())
        params = GbdtHyperparams.from_dict(doc["params"])
    return params if max_rounds is None else replace(params, max_rounds=max_rounds)


def cmd_train(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    params = _load_params(args.params, args.outcome, cohort, args.max_rounds)
    folds = stratified_folds(cohort.y, args.folds, args.seed)
    ensemble, cv = fit_stage(cohort, params, folds, workers=args.workers)
    model = RiskModel(ensemble, IDENTITY_CALIBRATION, ThresholdPolicy(), args.threshold_space,
                      _model_config(args))
    out = _out_dir(args.out)
    model.save(out / "model.json")
    fold_of = np.empty(len(cohort), dtype=int)
    for k, (_, te) in enumerate(folds):
        fold_of[te] = k
    with open(out / "oof.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OOF_COLUMNS)
        for r, k, y, s in zip(cohort.records, fold_of, cohort.y, cv.oof_scores):
            w.writerow([r.patient_id, int(k), int(y), repr(float(s))])
    print(f"trained {len(ensemble.trees)} trees; fold AUC "
          + " ".join(f"{a:.3f}" for a in cv.fold_objective)
          + f"; mean {cv.mean_objective:.3f}")
    return 0


def cmd_calibrate(args) -> int:
    model = RiskModel.load(args.model)
    _, _, labels, scores = _read_oof(args.oof)
    params = fit_beta_calibration(scores, labels)
    model = replace(model, calibration=params, config={**model.config, "calibrate": _model_config(args)})
    model.save(args.out or args.model)
    print(f"beta calibration a={params.a:.6f} b={params.b:.6f} c={params.c:.6f}")
    return 0


def cmd_threshold(args) -> int:
    model = RiskModel.load(args.model)
    _, fold_ids, labels, scores = _read_oof(args.oof)
    space = args.threshold_space or model.threshold_space
    policy = threshold_stage(scores, labels, _fold_pairs(fold_ids), model.calibration,
                             threshold_space=space)
    model = replace(model, policy=policy, threshold_space=space,
                    config={**model.config, "threshold": _model_config(args)})
    model.save(args.out or args.model)
    print("fold winners " + " ".join(f"{t:.2f}" for t in policy.fold_winners)
          + f" -> threshold {policy.chosen_threshold:.2f} ({space} scores)")
    return 0


def _baselines(choice: str) -> tuple[str, ...]:
    return ALL_BASELINES if choice == "all" else (choice,)


def cmd_evaluate(args) -> int:
    model = RiskModel.load(args.model)
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    _check_fingerprint(model, cohort)
    report = evaluate_on_validation(model, cohort, _baselines(args.baseline),
                                    random_prob=args.random_prob, seed=args.seed)
    out = _out_dir(args.out)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    _write_json(out / "evaluate.json", {"fingerprint": model.fingerprint(),
                                        "config": _model_config(args)})
    sys.stdout.write(report.to_text())
    return 0


def cmd_explain(args) -> int:
    model = RiskModel.load(args.model)
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    _check_fingerprint(model, cohort)
    background = sample_background(cohort, args.background, args.seed)
    rng = np.random.default_rng(args.seed)
    n = min(args.sample, len(cohort))
    sample = cohort.take(np.sort(rng.choice(len(cohort), size=n, replace=False)))
    coalitions = args.n_coalitions
    if coalitions is not None and coalitions != "full":
        coalitions = int(coalitions)
    ranking = rank_features(model, sample, background, args.seed, n_coalitions=coalitions,
                            output=args.output)
    out = _out_dir(args.out)
    (out / "ranking.csv").write_text(ranking.to_csv(args.top_k), encoding="utf-8")
    (out / "shap_values.csv").write_text(ranking.plot_csv(), encoding="utf-8")
    _write_json(out / "explain.json", {"fingerprint": model.fingerprint(),
                                       "config": _model_config(args)})
    for r, (f, v) in enumerate(ranking.entries[:args.top_k], start=1):
        print(f"{r:3d}  {f:<48s} {v:.5f}")
    return 0


def _read_ranking(path) -> FeatureRanking:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entries.append((row["feature"], float(row["mean_abs_phi"])))
    return FeatureRanking(entries)


def cmd_reduce(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    ranking = _read_ranking(args.ranking)
    k = args.k if args.k is not None else DEFAULT_TOP_K[args.outcome]
    if k > len(ranking.entries):
        raise UsageError(f"k={k} exceeds the {len(ranking.entries)} ranked features")
    params = None
    if args.params is not None or not args.tune:
        params = _load_params(args.params, args.outcome, cohort, args.max_rounds)
    valid = _load_cohort(args.valid, args.manifest, args.contamination) if args.valid else None
    if valid is not None and valid.schema.fingerprint() != cohort.schema.fingerprint():
        raise SchemaMismatchError(cohort.schema.fingerprint(), valid.schema.fingerprint())
    reduced = reduce_and_retrain(cohort, ranking, k, params, args.objective, valid=valid,
                                 budget=args.budget, seed=args.seed, workers=args.workers,
                                 base_params=GbdtHyperparams(max_rounds=args.max_rounds or 1000))
    model = replace(reduced.model, config=_model_config(args))
    out = _out_dir(args.out)
    model.save(out / "model.json")
    print("features: " + ", ".join(reduced.features))
    if reduced.report is not None:
        (out / "report.csv").write_text(reduced.report.to_csv(), encoding="utf-8")
        (out / "report.txt").write_text(reduced.report.to_text(), encoding="utf-8")
        sys.stdout.write(reduced.report.to_text())
    return 0


def cmd_llm_export(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    name = OUTCOME_NAMES[args.outcome]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = export_finetune_corpus(cohort, name, args.seed, out)
    print(f"wrote {n} lines to {out}")
    return 0


def cmd_llm_predict(args) -> int:
    cohort = _load_cohort(args.data, args.manifest, args.contamination)
    name = OUTCOME_NAMES[args.outcome]
    provider = MockProvider(args.mock_key)
    scores = predict_cohort(cohort, provider, name, args.repeats, args.seed, args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "score"])
        for r, s in zip(cohort.records, scores):
            w.writerow([r.patient_id, repr(float(s))])
    if cohort.labels is not None and 0 < cohort.y.sum() < len(cohort):
        print(f"AUC vs outcome labels: {auc(scores, cohort.y):.4f}")
    print(f"wrote {len(scores)} scores to {out}")
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="file of key = value lines; flags override it")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--manifest", help="manifest path or built-in name (pre_covid, post_covid)")
    g.add_argument("--outcome", choices=("ed", "admission"), default="ed")
    g.add_argument("--contamination", choices=("on", "off"), default="on",
                   help="count asthma-program contact as a positive outcome")
    g.add_argument("--objective", choices=("auc", "f1"), default="auc")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asthma-risk",
                                     description="Pediatric asthma exacerbation risk modelling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic cohort")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--risk", choices=("ed", "admission", "two_signal", "null"),
                   help="planted risk preset (default: --outcome)")
    p.add_argument("--prevalence", type=float)
    p.add_argument("--contamination-rate", type=float, default=0.0)
    p.add_argument("--window", choices=("pre", "post"), default="pre")
    p.add_argument("--id-prefix", default="P")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a cohort against its manifest")
    _common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("tune", help="Bayesian hyperparameter search")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-rounds", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="cross-validated fit and full-data refit")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--params", help="params.json from tune (default: final settings for --outcome)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--threshold-space", choices=("calibrated", "raw"), default="calibrated")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit beta calibration on out-of-fold scores")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--oof", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("threshold", help="choose the F1-optimal decision threshold")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--oof", required=True)
    p.add_argument("--threshold-space", choices=("calibrated", "raw"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("evaluate", help="score a model and baselines on a cohort")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", choices=("cheo", "naive", "random", "all"), default="all")
    p.add_argument("--random-prob", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="Kernel SHAP ranking and plot data")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="training cohort (background and sample)")
    p.add_argument("--sample", type=int, default=50)
    p.add_argument("--background", type=int, default=100)
    p.add_argument("--n-coalitions")
    p.add_argument("--output", choices=("probability", "margin"), default="probability")
    p.add_argument("--top-k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("reduce", help="retrain on the top-k ranked features")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ranking", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--params")
    p.add_argument("--tune", action="store_true", help="re-tune instead of reusing params")
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--valid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("llm", help="language-model text protocol")
    llm = p.add_subparsers(dest="llm_command", required=True)
    q = llm.add_parser("export", help="write the fine-tuning corpus")
    _common(q)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_llm_export)
    q = llm.add_parser("predict", help="averaged predictions from a completion provider")
    _common(q)
    q.add_argument("--data", required=True)
    q.add_argument("--mock-key", default="IsAsthmaEDVisitWithinOneYearPreIndex is True",
                   help="fragment the built-in mock provider answers 1 to")
    q.add_argument("--repeats", type=int, default=5)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_llm_predict)
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path} line {lineno}: expected key = value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _subparser_for(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.ArgumentParser:
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    path = _config_path(argv)
    if path:
        values = read_config(path)
        sub = _subparser_for(parser, argv)
        known = {a.dest for a in sub._actions} - {"help", "config", "func"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for a in sub._actions:
            if a.dest not in values:
                continue
            v = values[a.dest]
            if isinstance(a, argparse._StoreTrueAction):
                defaults[a.dest] = v.lower() in ("1", "true", "yes", "on")
                continue
            v = a.type(v) if a.type else v
            if a.choices is not None and v not in a.choices:
                raise UsageError(f"config key {a.dest}: {v!r} not in {sorted(a.choices)}")
            defaults[a.dest] = v
        # required flags may now come from the file
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("resolved config: %s", json.dumps(_model_config(args), sort_keys=True, default=str))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SchemaMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CohortFormatError, StratificationError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
