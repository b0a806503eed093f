"""Command-line front end: ``relcons <command> [flags]``.

Exit codes: 0 on success, 1 on bad input (missing file, malformed
record, unknown flag), 2 on internal or numerical failure.

Record formats (one JSON object per line):

* batch / predictions: ``{"id", "subj", "rel", "obj", "probs"}`` where
  ``rel`` is the gold relation name (``null`` for none) and ``probs``
  has one entry per relation of the constraint file;
* instances: ``{"id", "subj", "rel", "obj", "features"}``;
* repaired predictions: ``{"id", "predicted", "flagged"}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoding import build_encoding, dump_encoding
from .inference import PredictionSet, RepairStats, count_violations, repair_predictions
from .kb import FormatError, RelationVocabulary, Triple, load_triples, load_vocabulary, save_triples, save_vocabulary
from .loss import Batch, batch_constraint_loss, grad_check
from .mining import SET_NAMES, load_constraints, mine_constraints, save_constraints
from .synthetic import SyntheticDatasetSpec, generate_synthetic
from .training import NumericalError, TrainConfig, train


class InputError(Exception):
    """Bad user input; reported in one line with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "))


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n")


def _read_jsonl(path: str, vocab: RelationVocabulary, payload: str) -> tuple[list, list, np.ndarray]:
    """Ids, gold triples and the ``payload`` column of a JSONL record file."""
    ids, triples, rows = [], [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rel = rec.get("rel")
            rel_idx = None if rel is None else vocab.index(rel)
            triples.append(Triple(rec["subj"], rel_idx, rec["obj"]))
            ids.append(str(rec.get("id", len(ids))))
            rows.append([float(x) for x in rec[payload]])
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad record ({exc})") from None
    if not triples:
        raise InputError(f"{path}: no records")
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: '{payload}' rows differ in length")
    return ids, triples, np.array(rows, dtype=np.float64)


def _constraints(path: str):
    try:
        return load_constraints(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _width_check(path: str, arr: np.ndarray, n: int, what: str) -> None:
    if arr.shape[1] != n:
        raise InputError(f"{path}: {what} has {arr.shape[1]} entries, constraint file has {n} relations")


# ---------------------------------------------------------------------------
# commands


def cmd_mine(args) -> None:
    try:
        if args.relations:
            store, vocab = load_triples(args.triples, "strict", load_vocabulary(args.relations))
        else:
            store, vocab = load_triples(args.triples)
    except OSError as exc:
        raise InputError(f"{exc.filename}: {exc.strerror}") from None
    sets = mine_constraints(store, vocab, min_overlap=args.min_overlap, min_count=args.min_count)
    save_constraints(sets, args.out, vocab)


def cmd_encode(args) -> None:
    sets, _ = _constraints(args.constraints)
    _emit(dump_encoding(build_encoding(sets, args.method)).rstrip("\n"), args.out)


def _batch(args):
    sets, vocab = _constraints(args.constraints)
    ids, triples, probs = _read_jsonl(args.batch, vocab, "probs")
    _width_check(args.batch, probs, sets.n_relations, "probs")
    batch = Batch(triples, probs, ids)
    try:
        batch.validate()
    except ValueError as exc:
        raise InputError(f"{args.batch}: {exc}") from None
    return sets, batch


def cmd_loss(args) -> None:
    sets, batch = _batch(args)
    report = batch_constraint_loss(batch, build_encoding(sets, args.method), want_grads=args.grads,
                                   pairs=args.pairs, na_index=sets.na_index,
                                   literal_co=args.literal_co, per_pair=args.per_pair)
    _emit(_dumps(report.to_dict(batch.ids)), args.out)


def cmd_gradcheck(args) -> None:
    sets, batch = _batch(args)
    err = grad_check(batch, build_encoding(sets, args.method), h=args.h, pairs=args.pairs,
                     na_index=sets.na_index, literal_co=args.literal_co)
    _emit(_dumps({"max_rel_error": err, "pass": err < args.tol}), args.out)


def _write_instances(path: Path, ids, triples, features, vocab) -> None:
    with open(path, "w") as fh:
        for i, t, x in zip(ids, triples, features):
            rec = {"id": i, "subj": t.subj, "rel": vocab.name(t.rel), "obj": t.obj,
                   "features": [float(v) for v in x]}
            fh.write(_dumps(rec) + "\n")


def cmd_synth(args) -> None:
    spec = SyntheticDatasetSpec(
        n_relations=args.n_relations, n_entities_per_type=args.n_entities,
        n_type_classes=args.n_types, n_instances=args.n_instances, label_noise=args.label_noise,
        feature_noise=args.feature_noise, type_feature_noise=args.type_feature_noise,
        noise_mode=args.noise_mode, test_fraction=args.test_fraction, seed=args.seed)
    ds = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_triples(ds.store, ds.vocab, out / "kb.tsv")
    save_vocabulary(ds.vocab, out / "relations.txt")
    save_constraints(ds.planted, out / "planted.json", ds.vocab)
    triples = ds.triples()
    gold = ds.triples(ds.true_labels)
    train_idx, test_idx = ds.split()
    ids = [f"i{k:06d}" for k in range(len(triples))]
    _write_instances(out / "train.jsonl", [ids[k] for k in train_idx], [triples[k] for k in train_idx],
                     ds.features[train_idx], ds.vocab)
    # test records carry the clean label, used for accuracy only
    _write_instances(out / "test.jsonl", [ids[k] for k in test_idx], [gold[k] for k in test_idx],
                     ds.features[test_idx], ds.vocab)
    (out / "spec.json").write_text(_dumps(spec.to_dict()) + "\n")


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _write_preds(path: str, ids, triples, probs, vocab) -> None:
    with open(path, "w") as fh:
        for i, t, p in zip(ids, triples, probs):
            rec = {"id": i, "subj": t.subj, "rel": None if t.rel is None else vocab.name(t.rel),
                   "obj": t.obj, "probs": [float(v) for v in p]}
            fh.write(_dumps(rec) + "\n")


def _synthetic_data(block: dict, source: str):
    try:
        spec = SyntheticDatasetSpec(**block)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: synthetic: {exc}") from None
    ds = generate_synthetic(spec)
    sets = mine_constraints(ds.store, ds.vocab)
    triples = ds.triples()
    gold = ds.triples(ds.true_labels)
    train_idx, test_idx = ds.split()
    ids = [f"i{k:06d}" for k in range(len(triples))]
    train_part = ([ids[k] for k in train_idx], [triples[k] for k in train_idx], ds.features[train_idx])
    test_part = ([ids[k] for k in test_idx], [gold[k] for k in test_idx], ds.features[test_idx])
    return sets, ds.vocab, train_part, test_part


def cmd_train(args) -> None:
    """Train from instance files, or from a ``synthetic`` block in the config.

    The config holds TrainConfig fields plus optional ``data``,
    ``constraints`` and ``predict`` paths (flags take precedence) or a
    ``synthetic`` block of generator options. With a synthetic block the
    constraints are mined from the generated KB, training uses the train
    split and predictions default to the test split.
    """
    source = args.config or "config"
    raw = _load_config(args.config)
    block = raw.pop("synthetic", None)
    paths = {key: raw.pop(key, None) for key in ("data", "constraints", "predict")}
    data = args.data or paths["data"]
    constraints = args.constraints or paths["constraints"]
    predict = args.predict or paths["predict"]
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.method is not None:
        raw["encoding_kind"] = args.method
    try:
        config = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: {exc}") from None

    if data is None:
        if block is None:
            raise InputError("no training data: pass --data or a 'synthetic' block in --config")
        if not isinstance(block, dict):
            raise InputError(f"{source}: 'synthetic' must be an object")
        sets, vocab, (ids, triples, X), eval_part = _synthetic_data(block, source)
        if constraints is not None:
            sets, vocab = _constraints(constraints)
    else:
        if constraints is None:
            raise InputError("no constraints: pass --constraints")
        sets, vocab = _constraints(constraints)
        ids, triples, X = _read_jsonl(data, vocab, "features")
        eval_part = (ids, triples, X)
    if any(t.rel is None for t in triples):
        raise InputError(f"{data}: every training record needs a relation")
    if predict is not None:
        eval_part = _read_jsonl(predict, vocab, "features")
        if eval_part[2].shape[1] != X.shape[1]:
            raise InputError(f"{predict}: feature width {eval_part[2].shape[1]} differs from training data")

    model, history = train(X, triples, sets, config)
    model.save(args.out, vocab.relations)
    if args.history:
        with open(args.history, "w") as fh:
            for row in history:
                fh.write(_dumps(row) + "\n")
    if args.preds:
        p_ids, p_triples, p_X = eval_part
        _write_preds(args.preds, p_ids, p_triples, model.predict_proba(p_X), vocab)


def _preds(args):
    sets, vocab = _constraints(args.constraints)
    ids, triples, probs = _read_jsonl(args.preds, vocab, "probs")
    _width_check(args.preds, probs, sets.n_relations, "probs")
    return sets, vocab, PredictionSet.from_arrays(triples, probs, ids)


def _table(report: dict) -> str:
    keys = list(SET_NAMES) + ["total"]
    head = " ".join(f"{k:>7}" for k in keys)
    return head + "\n" + " ".join(f"{report[k]:>7d}" for k in keys)


def cmd_violations(args) -> None:
    sets, _, preds = _preds(args)
    report = count_violations(preds, sets, literal_co=args.literal_co).to_dict()
    _emit(_table(report) if args.format == "table" else _dumps(report), args.out)


def cmd_repair(args) -> None:
    sets, vocab, preds = _preds(args)
    stats = RepairStats()
    out = repair_predictions(preds, sets, group_limit=args.group_limit, literal_co=args.literal_co,
                             threads=args.threads, stats=stats)
    with open(args.out, "w") as fh:
        for it in out.items:
            fh.write(_dumps({"id": it.id, "predicted": vocab.name(it.predicted),
                             "flagged": it.flagged}) + "\n")
    sys.stdout.write(_dumps(stats.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: from config or 0)")
    common.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")

    parser = _Parser(prog="relcons", description="Relation constraint mining, losses and repair.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    def method(p, required=True):
        p.add_argument("--method", choices=("coherent", "semantic"), required=required,
                       default=None)

    def pair_flags(p):
        p.add_argument("--pairs", choices=("unordered", "ordered", "all"), default="unordered")
        p.add_argument("--literal-co", action="store_true", help="complemented co gate")

    p = add("mine", cmd_mine, "mine constraint sets from a triple file")
    p.add_argument("--triples", required=True)
    p.add_argument("--relations", help="relation list fixing the index order (default: order of first use)")
    p.add_argument("--out", required=True)
    p.add_argument("--min-overlap", type=int, default=1)
    p.add_argument("--min-count", type=int, default=1)

    p = add("encode", cmd_encode, "print the 0/1 encoding of a constraint file")
    p.add_argument("--constraints", required=True)
    method(p)
    p.add_argument("--out")

    p = add("loss", cmd_loss, "constraint loss of a batch")
    p.add_argument("--batch", required=True)
    p.add_argument("--constraints", required=True)
    method(p)
    pair_flags(p)
    p.add_argument("--grads", action="store_true", help="include gradients")
    p.add_argument("--per-pair", action="store_true", help="include per-pair terms")
    p.add_argument("--out")

    p = add("gradcheck", cmd_gradcheck, "compare analytic and finite-difference gradients")
    p.add_argument("--batch", required=True)
    p.add_argument("--constraints", required=True)
    method(p)
    pair_flags(p)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "generate a synthetic benchmark")
    p.add_argument("--out-dir", required=True)
    d = SyntheticDatasetSpec()
    p.add_argument("--n-relations", type=int, default=d.n_relations)
    p.add_argument("--n-entities", type=int, default=d.n_entities_per_type)
    p.add_argument("--n-types", type=int, default=d.n_type_classes)
    p.add_argument("--n-instances", type=int, default=d.n_instances)
    p.add_argument("--label-noise", type=float, default=d.label_noise)
    p.add_argument("--feature-noise", type=float, default=d.feature_noise)
    p.add_argument("--type-feature-noise", type=float, default=None)
    p.add_argument("--noise-mode", choices=("systematic", "uniform"), default=d.noise_mode)
    p.add_argument("--test-fraction", type=float, default=d.test_fraction)

    p = add("train", cmd_train, "train the softmax classifier")
    p.add_argument("--config", help="JSON training options")
    p.add_argument("--data", help="instance JSONL")
    p.add_argument("--constraints")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", help="per-epoch JSONL")
    p.add_argument("--predict", help="instance JSONL to predict (default: --data)")
    p.add_argument("--preds", help="write predictions JSONL here")
    method(p, required=False)

    p = add("violations", cmd_violations, "count constraint violations of predictions")
    p.add_argument("--preds", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--literal-co", action="store_true")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--out")

    p = add("repair", cmd_repair, "repair predictions to remove violations")
    p.add_argument("--preds", required=True)
    p.add_argument("--constraints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group-limit", type=int, default=12)
    p.add_argument("--literal-co", action="store_true")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        if args.command == "synth" and args.seed is None:
            args.seed = 0
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
