"""Batch driver: ``mtensemble {train-base,extract,train-ensemble,evaluate}``.

The pipeline is staged through files in ``--out``:

1. ``train-base`` writes ``<encoder>.ckpt`` and ``<encoder>.history.tsv``
2. ``extract`` writes ``<encoder>.<split>.reps.tsv`` (id + 128 values)
3. ``train-ensemble`` reads the three encoders' representation dumps, builds
   hand-crafted features, and writes ``ensemble.ckpt``, ``ensemble.history.tsv``,
   ``features.<split>.tsv``, ``predictions.tsv``, ``gold.tsv`` and ``report.{txt,tsv}``
4. ``evaluate`` scores a prediction TSV against a gold TSV

Every flag may also be given in a flat ``key=value`` file passed with
``--config``; command-line flags win.  Relative input paths are resolved
against ``$MTENS_DATA_ROOT`` when it is set.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import ensemble as ens
from . import evaluation as ev
from . import multitask as mt
from .errors import (AlignmentError, ConfigurationError, DataError, FormatError, IncompatibilityError,
                     MTEnsembleError, NumericError, UsageError)
from .features import FeatureExtractor, LexiconSet, tokenize
from .layers import EMBED_DIM, MAX_LEN
from .training import TaskSpec, TrainConfig, task_targets

log = logging.getLogger("mtensemble")

DATA_ROOT_ENV = "MTENS_DATA_ROOT"
PROBLEMS = {
    "coarse-emotion": D.EMOINT,
    "fine-emotion": D.VAD,
    "fine-sentiment": D.VA,
}
SPLITS = ("train", "val", "test")
DEFAULTS = {
    "problem": "coarse-emotion",
    "seed": 0,
    "epochs": 30,
    "batch_size": 32,
    "patience": 5,
    "max_len": MAX_LEN,
    "embed_dim": EMBED_DIM,
    "split": "all",
    "compare_single": False,
    "dependent": False,
}
INT_KEYS = {"seed", "epochs", "batch_size", "patience", "max_len", "embed_dim", "fold"}
BOOL_KEYS = {"compare_single", "dependent"}


def problem_tasks(problem: str) -> list[TaskSpec]:
    schema = PROBLEMS[problem]
    tasks = []
    if schema.classes:
        tasks.append(TaskSpec.classification("emotion", schema.classes))
    tasks += [TaskSpec.regression(name) for name in schema.score_names]
    return tasks


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def read_config_file(path: Path) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key in INT_KEYS:
        try:
            return int(value)
        except ValueError as exc:
            raise UsageError(f"{key} must be an integer, got {value!r}") from exc
    if key in BOOL_KEYS:
        return value.lower() in ("1", "true", "yes", "on")
    return value


def resolve_settings(args: argparse.Namespace) -> argparse.Namespace:
    from_file = read_config_file(Path(args.config)) if args.config else {}
    merged = {}
    for key, value in vars(args).items():
        if value is None:
            value = from_file.get(key, DEFAULTS.get(key))
        merged[key] = _coerce(key, value)
    if merged.get("problem") not in PROBLEMS:
        raise UsageError(f"--problem must be one of {sorted(PROBLEMS)}, got {merged.get('problem')!r}")
    return argparse.Namespace(**merged)


def input_path(value: str | None, flag: str, required: bool = True) -> Path | None:
    if value is None:
        if required:
            raise UsageError(f"{flag} is required")
        return None
    path = Path(value)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    if not path.exists():
        raise UsageError(f"{flag}: path does not exist: {path}")
    return path


def out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, patience=args.patience, seed=args.seed)


# ---------------------------------------------------------------------------
# data staging
# ---------------------------------------------------------------------------

@dataclass
class Splits:
    train: list
    val: list
    test: list

    def get(self, name: str) -> list:
        return getattr(self, name)

    def all(self) -> list:
        return self.train + self.val + self.test


def _find(directory: Path, names) -> Path | None:
    for name in names:
        if (directory / name).is_file():
            return directory / name
    return None


def load_splits(args) -> Splits:
    """Pre-split directory (train/dev/test TSVs) or a single file split 70/10/20 or by fold."""
    schema = PROBLEMS[args.problem]
    path = input_path(args.data, "--data")

    def load(p):
        instances, _ = D.load_dataset(p, schema)
        return D.normalize_targets(instances, schema)

    if path.is_dir():
        parts = [_find(path, ("train.tsv",)), _find(path, ("dev.tsv", "val.tsv")), _find(path, ("test.tsv",))]
        if any(p is None for p in parts):
            raise UsageError(f"--data directory {path} needs train.tsv, dev.tsv (or val.tsv) and test.tsv")
        return Splits(*(load(p) for p in parts))
    if schema.format == "emoint":
        raise UsageError("coarse-emotion data comes pre-split: pass a directory with train/dev/test files")
    instances = load(path)
    if args.fold is not None:
        folds = D.kfold(instances, 10, args.seed)
        if not 0 <= args.fold < len(folds):
            raise UsageError(f"--fold must be in [0, 9], got {args.fold}")
        rest, test = folds[args.fold]
        n_val = len(rest) // 9
        return Splits(rest[: len(rest) - n_val], rest[len(rest) - n_val:], test)
    return Splits(*D.split(instances, (70, 10, 20), args.seed))


def load_table(args, splits: Splits):
    path = input_path(args.embeddings, "--embeddings")
    vocab = {t for inst in splits.all() for t in tokenize(inst.text)}
    return D.load_embeddings(path, vocab, dim=args.embed_dim, seed=args.seed)


def gold_values(instances, tasks) -> dict[str, list]:
    out = {}
    for task in tasks:
        if task.is_classification:
            out[task.name] = [inst.label for inst in instances]
        else:
            out[task.name] = [inst.scores[task.name] for inst in instances]
    return out


def predicted_values(preds, tasks) -> dict[str, list]:
    return {t.name: preds[t.name].labels if t.is_classification else list(preds[t.name].scores)
            for t in tasks}


def write_predictions(path: Path, ids, values: dict[str, list], tasks) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for i, iid in enumerate(ids):
            for task in tasks:
                v = values[task.name][i]
                fh.write(f"{iid}\t{task.name}\t{v if task.is_classification else D.format_float(v)}\n")


def read_predictions(path: Path) -> dict[str, dict[str, str]]:
    """``task -> id -> raw value`` from an ``id<TAB>task<TAB>value`` file."""
    out: dict[str, dict[str, str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected id<TAB>task<TAB>value")
        iid, task, value = parts
        out.setdefault(task, {})[iid] = value
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train_base(args) -> int:
    if args.encoder is None:
        raise UsageError("--encoder is required")
    out = out_dir(args)
    splits = load_splits(args)
    table = load_table(args, splits)
    tasks = problem_tasks(args.problem)
    model = mt.build_model(args.encoder, tasks, table, seed=args.seed, max_len=args.max_len)
    log.info("%s model: %d parameters", args.encoder, model.n_params())
    history = mt.train(model, splits.train, splits.val, train_config(args))
    D.save_checkpoint(model, out / f"{args.encoder}.ckpt")
    (out / f"{args.encoder}.history.tsv").write_text(history.to_tsv(), encoding="utf-8")
    return 0


def _load_base(args, encoder: str, table, checkpoint: Path):
    descriptor, seed, _ = D.read_checkpoint(checkpoint)
    if descriptor.get("model") != "multitask":
        raise IncompatibilityError(f"{checkpoint} is not a multi-task base checkpoint")
    tasks = [TaskSpec.from_dict(t) for t in descriptor["tasks"]]
    model = mt.build_model(encoder, tasks, table, seed=seed, max_len=descriptor.get("max_len", MAX_LEN))
    D.load_checkpoint(checkpoint, model)
    return model


def cmd_extract(args) -> int:
    if args.encoder is None:
        raise UsageError("--encoder is required")
    out = out_dir(args)
    checkpoint = input_path(args.checkpoint or str(out / f"{args.encoder}.ckpt"), "--checkpoint")
    splits = load_splits(args)
    table = load_table(args, splits)
    model = _load_base(args, args.encoder, table, checkpoint)
    names = SPLITS if args.split == "all" else (args.split,)
    for name in names:
        if name not in SPLITS:
            raise UsageError(f"--split must be one of {SPLITS + ('all',)}")
        instances = splits.get(name)
        D.write_matrix_tsv(out / f"{args.encoder}.{name}.reps.tsv", [i.id for i in instances],
                           mt.representation_matrix(model, instances))
    return 0


def _ensemble_inputs(rep_dir: Path, split: str, instances, raw: np.ndarray) -> ens.EnsembleInput:
    reps = {}
    for enc in ens.BLOCK_ORDER:
        path = rep_dir / f"{enc}.{split}.reps.tsv"
        if not path.is_file():
            raise UsageError(f"missing representation dump {path}; run extract for {enc}")
        reps[enc] = D.read_matrix_tsv(path, width=128)
    ids = [i.id for i in instances]
    return ens.assemble(ids, reps, (ids, raw))


def cmd_train_ensemble(args) -> int:
    out = out_dir(args)
    rep_dir = input_path(args.reps, "--reps") if args.reps else out
    splits = load_splits(args)
    table = load_table(args, splits)
    lexicons = LexiconSet.from_manifest(input_path(args.lexicons, "--lexicons")) if args.lexicons else LexiconSet()
    tasks = problem_tasks(args.problem)
    extractor = FeatureExtractor(table, lexicons).fit([i.text for i in splits.train])
    inputs = {s: _ensemble_inputs(rep_dir, s, splits.get(s), extractor.transform([i.text for i in splits.get(s)]))
              for s in SPLITS}
    targets = {s: task_targets(splits.get(s), tasks) for s in SPLITS}
    config = train_config(args)

    model = ens.EnsembleModel(tasks, seed=args.seed, raw_feature_width=extractor.width)
    history = ens.train_ensemble(model, inputs["train"], targets["train"], config,
                                 inputs["val"], targets["val"])
    D.save_checkpoint(model, out / "ensemble.ckpt")
    (out / "ensemble.history.tsv").write_text(history.to_tsv(), encoding="utf-8")
    for s in SPLITS:
        D.write_matrix_tsv(out / f"features.{s}.tsv", inputs[s].ids, ens.projected_features(model, inputs[s]))

    test = splits.test
    gold = gold_values(test, tasks)
    pred = predicted_values(ens.predict_ensemble(model, inputs["test"]), tasks)
    write_predictions(out / "predictions.tsv", inputs["test"].ids, pred, tasks)
    write_predictions(out / "gold.tsv", inputs["test"].ids, gold, tasks)
    report = ev.evaluate(tasks, gold, pred, dependent=args.dependent, system="ensemble")

    for enc in ens.BLOCK_ORDER:
        ckpt = rep_dir / f"{enc}.ckpt"
        if ckpt.is_file():
            base = _load_base(args, enc, table, ckpt)
            ev.evaluate(tasks, gold, predicted_values(mt.predict(base, test), tasks),
                        dependent=args.dependent, system=enc, report=report)

    if args.compare_single:
        single_pred = {}
        for task in tasks:
            single = ens.EnsembleModel([task], seed=args.seed, raw_feature_width=extractor.width)
            ens.train_ensemble(single, inputs["train"], {task.name: targets["train"][task.name]}, config,
                               inputs["val"], {task.name: targets["val"][task.name]})
            single_pred.update(predicted_values(ens.predict_ensemble(single, inputs["test"]), [task]))
        ev.evaluate(tasks, gold, single_pred, dependent=args.dependent, system="single", report=report)

    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    for key, cm in report.confusions.items():
        (out / f"confusion.{key}.tsv").write_text(cm.to_tsv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    return 0


def _infer_tasks(gold: dict[str, dict[str, str]]) -> list[TaskSpec]:
    tasks = []
    for name in sorted(gold):
        values = list(gold[name].values())
        try:
            [float(v) for v in values]
            tasks.append(TaskSpec.regression(name))
        except ValueError:
            classes = sorted(set(values))
            tasks.append(TaskSpec.classification(name, classes if len(classes) > 1 else classes * 2))
    return tasks


def cmd_evaluate(args) -> int:
    pred_raw = read_predictions(input_path(args.pred, "--pred"))
    gold_raw = read_predictions(input_path(args.gold, "--gold"))
    tasks = problem_tasks(args.problem) if args.problem_given else _infer_tasks(gold_raw)
    tasks = [t for t in tasks if t.name in gold_raw]
    if not tasks:
        raise DataError("gold file shares no task with the configured problem")
    ids = sorted(gold_raw[tasks[0].name])
    gold, pred = {}, {}
    for task in tasks:
        g, p = gold_raw[task.name], pred_raw.get(task.name, {})
        for iid in sorted(set(g) | set(p)):
            if iid not in g or iid not in p:
                raise AlignmentError(f"instance id {iid!r} missing from {'gold' if iid not in g else 'predictions'} "
                                       f"for task {task.name!r}")
        if sorted(g) != ids:
            raise AlignmentError(f"task {task.name!r} covers a different id set")
        conv = (lambda v: v) if task.is_classification else float
        gold[task.name] = [conv(g[i]) for i in ids]
        pred[task.name] = [conv(p[i]) for i in ids]
    report = ev.evaluate(tasks, gold, pred, dependent=args.dependent, system="eval")
    for row in report.rows:
        if row.value is None:
            log.warning("%s.%s undefined: %s", row.task, row.metric, row.note)
    if args.out:
        out = out_dir(args)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtensemble", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat key=value file mirroring the flags")
        p.add_argument("--problem", choices=sorted(PROBLEMS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if data:
            p.add_argument("--data", help="dataset file, or directory with train/dev/test TSVs")
            p.add_argument("--embeddings", help="GloVe-format text vectors")
            p.add_argument("--embed-dim", type=int)
            p.add_argument("--fold", type=int, help="use 10-fold CV fold I as the test split")
            p.add_argument("--max-len", type=int)

    def training(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--patience", type=int)

    p = sub.add_parser("train-base", help="train one encoder's multi-task model")
    common(p)
    training(p)
    p.add_argument("--encoder", choices=("cnn", "lstm", "gru"))
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("extract", help="dump 128-d task-aware representations")
    common(p)
    p.add_argument("--encoder", choices=("cnn", "lstm", "gru"))
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=SPLITS + ("all",))
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-ensemble", help="train and evaluate the stacked multi-task MLP")
    common(p)
    training(p)
    p.add_argument("--lexicons", help="lexicon manifest")
    p.add_argument("--reps", help="directory holding <encoder>.<split>.reps.tsv (default: --out)")
    p.add_argument("--compare-single", action="store_true", default=None)
    p.add_argument("--dependent", action="store_true", default=None)
    p.set_defaults(func=cmd_train_ensemble)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    common(p, data=False)
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--dependent", action="store_true", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    problem_given = args.problem is not None
    try:
        settings = resolve_settings(argparse.Namespace(**{k: v for k, v in vars(args).items()
                                                         if k not in ("func", "verbose", "command")}))
        settings.problem_given = problem_given or "problem" in (
            read_config_file(Path(args.config)) if args.config else {})
        for key in ("data", "embeddings", "embed_dim", "fold", "max_len", "epochs", "batch_size",
                    "patience", "encoder", "checkpoint", "split", "lexicons", "reps", "pred", "gold"):
            if not hasattr(settings, key):
                setattr(settings, key, DEFAULTS.get(key))
        return func(settings)
    except (UsageError, ConfigurationError) as exc:
        print(f"mtensemble: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"mtensemble: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, IncompatibilityError, MTEnsembleError) as exc:
        print(f"mtensemble: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
