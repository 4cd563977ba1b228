"""Command-line pipelines: vocab, data generation, training, generation, scoring.

stdout carries only the final JSON summary of a command; warnings and
progress go to stderr. Exit codes: 0 success, 1 I/O or parse failure,
2 validation failure.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import fields, replace

from .errors import (
    CorruptFile,
    InputFormatError,
    NoCells,
    TabSeqError,
    ValidationError,
)
from .tabledoc import Document, document_from_dict

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2
CONFIG_VERSION = 1
PRETRAIN_TASKS = ("denoise", "tottify")
TASKS = PRETRAIN_TASKS + ("qa", "formula", "totto")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- input helpers -----------------------------------------------------------------

def _records(path):
    """Yield ``(line_number, object)`` for each non-blank JSONL line."""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"{path}:{n}: malformed JSON ({exc.msg})") from None


def _parse_record(path, n, build, obj):
    try:
        return build(obj)
    except ValidationError as exc:
        raise ValidationError(f"{path}:{n}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}:{n}: bad record ({exc!r})") from None


def _documents(path) -> list[Document]:
    return [_parse_record(path, n, document_from_dict, obj) for n, obj in _records(path)]


def _doc_index(docs: list[Document]) -> dict[str, Document]:
    index: dict[str, Document] = {}
    for d in docs:
        if d.id in index:
            raise ValidationError(f"duplicate document id {d.id!r}")
        index[d.id] = d
    return index


def _load_vocab(path):
    from .tokenizer import Vocab

    try:
        return Vocab.load(path)
    except ValidationError as exc:
        raise InputFormatError(f"{path}: {exc}") from None


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment. ``version`` is required."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise InputFormatError(f"{path}:{n}: expected key = value")
            if key in out:
                raise InputFormatError(f"{path}:{n}: duplicate key {key!r}")
            out[key] = value
    if "version" not in out:
        raise InputFormatError(f"{path}: missing required key 'version'")
    return out


def split_config(raw: dict[str, str], path="config"):
    """Separate model and training keys; numeric syntax errors count as parse errors."""
    from .model import ModelConfig
    from .trainer import TrainConfig

    try:
        version = int(raw["version"])
    except ValueError:
        raise InputFormatError(f"{path}: version must be an integer") from None
    if version != CONFIG_VERSION:
        raise ValidationError(f"{path}: unsupported config version {version}")
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - model_keys - train_keys - {"version"})
    if unknown:
        raise InputFormatError(f"{path}: unknown config key {unknown[0]!r}")
    model_raw = {k: v for k, v in raw.items() if k in model_keys}
    train_raw = {k: v for k, v in raw.items() if k in train_keys}
    try:
        train_cfg = TrainConfig.from_dict(train_raw)
        model_over = ModelConfig.from_dict(model_raw).to_dict()
    except ValueError as exc:
        if isinstance(exc, TabSeqError):
            raise
        raise InputFormatError(f"{path}: {exc}") from None
    return {k: model_over[k] for k in model_raw}, train_cfg


# -- commands ------------------------------------------------------------------------

def cmd_vocab(args) -> int:
    from .tokenizer import train_vocab

    with open(args.corpus, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    for path in args.docs or ():
        for doc in _documents(path):
            lines.extend(c.utterance for c in doc.components)
    vocab = train_vocab(lines, args.size)
    vocab.save(args.out)
    _emit({"vocab_size": len(vocab), "merges": len(vocab.merges), "lines": len(lines)})
    return EXIT_OK


def cmd_gen_denoise(args) -> int:
    from .pretrain_data import corrupt, masked_cell_count, write_examples

    vocab = _load_vocab(args.vocab)
    docs = _documents(args.docs)
    examples, fractions, skipped = [], [], 0
    for doc in docs:
        try:
            ex = corrupt(doc, vocab, args.rate, args.column_prob, args.seed,
                         number_split=args.number_split)
        except NoCells:
            skipped += 1
            _warn(f"document {doc.id!r} has no table cells; skipped")
            continue
        examples.append(ex.as_example())
        fractions.append(masked_cell_count(ex, doc) / doc.num_cells)
    if skipped:
        _warn(f"{skipped} document(s) skipped")
    write_examples(args.out, examples)
    stats = {"documents": len(docs), "examples": len(examples), "skipped": skipped}
    if fractions:
        stats.update(
            mean_masked_fraction=statistics.fmean(fractions),
            min_masked_fraction=min(fractions),
            max_masked_fraction=max(fractions),
        )
    _emit(stats)
    return EXIT_OK


def cmd_gen_tottify(args) -> int:
    from .pretrain_data import Statement, tottify, write_examples

    vocab = _load_vocab(args.vocab)
    index = _doc_index(_documents(args.docs))
    grouped: dict[str, list[Statement]] = {}
    total = dropped = 0
    for n, obj in _records(args.statements):
        st = _parse_record(args.statements, n, Statement.from_dict, obj)
        total += 1
        if st.doc_id not in index:
            dropped += 1
            _warn(f"{args.statements}:{n}: unknown document {st.doc_id!r}; dropped")
            continue
        grouped.setdefault(st.doc_id, []).append(st)
    examples = []
    for doc_id, sts in grouped.items():
        kept = tottify(index[doc_id], sts, vocab, args.max_input_len,
                       number_split=args.number_split)
        dropped += len(sts) - len(kept)
        examples.extend(kept)
    write_examples(args.out, examples)
    _emit({"statements": total, "kept": len(examples), "dropped": dropped})
    return EXIT_OK


def _qa_record(obj: dict) -> dict:
    return {"doc_id": str(obj["doc_id"]), "question": str(obj["question"]),
            "sql": str(obj["sql"]), "id": str(obj.get("id") or obj["doc_id"])}


def cmd_gen_qa(args) -> int:
    from .errors import EmptyResult, NonNumericAggregate
    from .pretrain_data import write_examples
    from .sqlexec import execute, parse_sql, table_rows
    from .tasks import format_answer, make_qa_example
    from .textnorm import format_value

    vocab = _load_vocab(args.vocab)
    index = _doc_index(_documents(args.docs))
    examples, answers, dropped = [], [], 0
    seen: set[str] = set()
    for n, obj in _records(args.qa):
        rec = _parse_record(args.qa, n, _qa_record, obj)
        if rec["id"] in seen:
            raise ValidationError(f"{args.qa}:{n}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        doc = index.get(rec["doc_id"])
        if doc is None:
            dropped += 1
            _warn(f"{args.qa}:{n}: unknown document {rec['doc_id']!r}; dropped")
            continue
        try:
            query = parse_sql(rec["sql"], table_rows(doc)[0])
            values = execute(query, doc).values
        except EmptyResult:
            values = ()
        except (ValidationError, NonNumericAggregate) as exc:
            dropped += 1
            _warn(f"{args.qa}:{n}: {exc}; dropped")
            continue
        examples.append(make_qa_example(doc, rec["question"], values, vocab,
                                        args.max_input_len, rec["id"]))
        answers.append({"id": rec["id"], "doc_id": rec["doc_id"],
                        "answer": [format_value(v) for v in values],
                        "reference": format_answer(values)})
    write_examples(args.out, examples)
    if args.answers:
        with open(args.answers, "w", encoding="utf-8") as fh:
            for a in answers:
                fh.write(json.dumps(a, ensure_ascii=False) + "\n")
    _emit({"questions": len(seen), "kept": len(examples), "dropped": dropped})
    return EXIT_OK


def _window(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4 or any(p < 0 for p in parts):
        raise argparse.ArgumentTypeError("window is up,down,left,right (non-negative)")
    return tuple(parts)


def cmd_gen_formula(args) -> int:
    from .pretrain_data import write_examples
    from .tasks import FormulaSheet, formula_is_usable, make_formula_example

    vocab = _load_vocab(args.vocab)
    examples, total, dropped = [], 0, 0
    for n, obj in _records(args.sheets):
        sheet = _parse_record(args.sheets, n, FormulaSheet.from_dict, obj)
        total += 1
        if not formula_is_usable(sheet):
            dropped += 1
            continue
        examples.append(make_formula_example(sheet, vocab, args.window, args.max_input_len))
    write_examples(args.out, examples)
    _emit({"sheets": total, "kept": len(examples), "dropped": dropped})
    return EXIT_OK


def cmd_gen_totto(args) -> int:
    from .errors import CellOutOfBounds
    from .pretrain_data import write_examples
    from .tasks import TottoRecord, make_totto_example

    vocab = _load_vocab(args.vocab)
    examples, total, dropped = [], 0, 0
    for n, obj in _records(args.data):
        rec = _parse_record(args.data, n, TottoRecord.from_dict, obj)
        total += 1
        try:
            examples.append(make_totto_example(rec.doc, rec.highlighted, rec.target, vocab,
                                               args.max_input_len, rec.id))
        except CellOutOfBounds as exc:
            dropped += 1
            _warn(f"{args.data}:{n}: {exc}; dropped")
    write_examples(args.out, examples)
    _emit({"records": total, "kept": len(examples), "dropped": dropped})
    return EXIT_OK


def _read_examples(path):
    from .pretrain_data import Example

    out = []
    for n, obj in _records(path):
        out.append(_parse_record(path, n, lambda o: Example.from_json(json.dumps(o)), obj))
    return out


def _check_ids_fit(examples, vocab_size: int, path) -> None:
    for ex in examples:
        top = max([*ex.input.token_ids, *ex.target], default=0)
        if top >= vocab_size:
            raise ValidationError(
                f"{path}: example {ex.id!r} uses token id {top} but the model vocabulary "
                f"has {vocab_size} entries"
            )


def _seqacc_eval(examples, max_len: int):
    from .model import greedy_batch, strip_eos
    from .trainer import collate

    def run(model, step) -> float:
        hits = 0
        for k in range(0, len(examples), 32):
            chunk = examples[k : k + 32]
            outs = greedy_batch(model, collate(chunk), max_len)
            hits += sum(strip_eos(o) == strip_eos(ex.target) for o, ex in zip(outs, chunk))
        return hits / len(examples)

    return run


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .model import ModelConfig, init
    from .trainer import LRSchedule, train

    raw = read_config(args.config)
    model_over, tcfg = split_config(raw, args.config)
    if args.task in PRETRAIN_TASKS and "lr_schedule" not in raw:
        tcfg = replace(tcfg, lr_schedule=LRSchedule.InverseSqrt)
    tcfg.validate()
    data = _read_examples(args.data)
    if not data:
        raise ValidationError(f"{args.data}: no training examples")
    if args.init:
        model, mcfg = load_checkpoint(args.init)
        for k, v in model_over.items():
            if getattr(mcfg, k) != v:
                raise ValidationError(
                    f"config sets {k} = {v} but checkpoint {args.init} has {getattr(mcfg, k)}"
                )
    else:
        mcfg = ModelConfig(**model_over)
        mcfg.validate()
        model = init(mcfg, rng_seed=tcfg.seed)
    _check_ids_fit(data, mcfg.vocab_size, args.data)
    eval_fn = None
    if args.eval_data:
        dev = _read_examples(args.eval_data)
        _check_ids_fit(dev, mcfg.vocab_size, args.eval_data)
        if dev:
            eval_fn = _seqacc_eval(dev, tcfg.max_target_len)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    print(f"training {args.task}: {len(data)} examples, {tcfg.steps} steps", file=sys.stderr)
    model, log = train(model, data, tcfg, eval_fn, metrics_path)
    save_checkpoint(model, mcfg, args.out)
    summary = {"task": args.task, "steps": tcfg.steps, "examples": len(data),
               "final_loss": log.losses[-1], "checkpoint": str(args.out),
               "metrics": str(metrics_path)}
    if log.evals:
        summary["final_eval"] = log.evals[-1][1]
    _emit(summary)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .checkpoint import load_checkpoint
    from .model import decode_beam, strip_eos
    from .tokenizer import decode_ids

    model, mcfg = load_checkpoint(args.ckpt)
    vocab = _load_vocab(args.vocab)
    if len(vocab) != mcfg.vocab_size:
        raise ValidationError(
            f"vocabulary has {len(vocab)} entries but checkpoint expects {mcfg.vocab_size}"
        )
    if args.beam < 1 or args.max_len < 1:
        raise ValidationError("--beam and --max-len must be >= 1")
    data = _read_examples(args.data)
    _check_ids_fit(data, mcfg.vocab_size, args.data)
    model.eval()
    with open(args.out, "w", encoding="utf-8") as fh:
        for ex in data:
            res = decode_beam(model, ex.input, args.beam, args.max_len)
            texts = [decode_ids(vocab, strip_eos(s)) for s in res.sequences]
            rec = {"id": ex.id, "prediction": texts[0], "score": res.scores[0]}
            if args.nbest:
                rec["nbest"] = [{"prediction": t, "score": s} for t, s in zip(texts, res.scores)]
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    _emit({"examples": len(data), "beam": args.beam, "out": str(args.out)})
    return EXIT_OK


def _keyed(path, what: str) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for n, obj in _records(path):
        if not isinstance(obj, dict) or "id" not in obj:
            raise ValidationError(f"{path}:{n}: {what} record without an id")
        key = str(obj["id"])
        if key in out:
            raise ValidationError(f"{path}:{n}: duplicate id {key!r}")
        out[key] = obj
    return out


def _align(preds: dict, refs: dict, path) -> list[str]:
    for key in preds:
        if key not in refs:
            raise ValidationError(f"{path}: prediction id {key!r} has no reference")
    for key in refs:
        if key not in preds:
            raise ValidationError(f"{path}: reference id {key!r} has no prediction")
    return list(refs)


def _references(args) -> dict[str, object]:
    """Reference per id: text for seqacc/bleu/topk, a value tuple for denotation."""
    if args.metric == "denotation":
        from .sqlexec import parse_sql, reference_answer, table_rows

        if not (args.qa and args.docs):
            raise ValidationError("denotation needs --qa and --docs")
        index = _doc_index(_documents(args.docs))
        refs: dict[str, object] = {}
        for n, obj in _records(args.qa):
            rec = _parse_record(args.qa, n, _qa_record, obj)
            doc = index.get(rec["doc_id"])
            if doc is None:
                raise ValidationError(f"{args.qa}:{n}: unknown document {rec['doc_id']!r}")
            refs[rec["id"]] = reference_answer(parse_sql(rec["sql"], table_rows(doc)[0]), doc)
        return refs
    if not args.references:
        raise ValidationError(f"{args.metric} needs --references")
    vocab = _load_vocab(args.vocab) if args.vocab else None
    refs = {}
    for key, obj in _keyed(args.references, "reference").items():
        if "reference" in obj:
            refs[key] = str(obj["reference"])
        elif "target_tokens" in obj and vocab is not None:
            from .model import strip_eos
            from .tokenizer import decode_ids

            refs[key] = decode_ids(vocab, strip_eos(obj["target_tokens"]))
        else:
            raise ValidationError(
                f"{args.references}: record {key!r} needs 'reference' (or 'target_tokens' with --vocab)"
            )
    return refs


def _score_run(metric: str, path, refs: dict, k: int) -> tuple[float, int]:
    from .metrics import corpus_bleu, sequence_accuracy, topk_accuracy
    from .sqlexec import denotation_matches

    preds = _keyed(path, "prediction")
    order = _align(preds, refs, path)
    if not order:
        raise ValidationError(f"{path}: nothing to score")
    texts = [str(preds[i].get("prediction", "")) for i in order]
    if metric == "seqacc":
        return sequence_accuracy(texts, [refs[i] for i in order]), len(order)
    if metric == "bleu":
        return corpus_bleu(texts, [refs[i] for i in order]), len(order)
    if metric == "topk":
        ranked = [[str(e["prediction"]) for e in preds[i].get("nbest", [])] or [texts[j]]
                  for j, i in enumerate(order)]
        return topk_accuracy(ranked, [refs[i] for i in order], k), len(order)
    hits = sum(denotation_matches(t, refs[i]) for t, i in zip(texts, order))
    return hits / len(order), len(order)


def cmd_eval(args) -> int:
    runs = [args.predictions] if args.predictions else list(args.runs)
    refs = _references(args)
    values, count = [], 0
    for path in runs:
        v, count = _score_run(args.metric, path, refs, args.k)
        values.append(v)
    result = {"metric": args.metric, "count": count, "runs": len(values), "values": values,
              "value": statistics.median(values), "median": statistics.median(values),
              "std": statistics.pstdev(values)}
    if args.metric == "topk":
        result["k"] = args.k
    _emit(result)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabseq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("vocab", help="train a subword vocabulary")
    s.add_argument("--corpus", required=True, help="text file, one line per training string")
    s.add_argument("--docs", action="append", help="extra document JSONL to draw text from")
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vocab)

    def gen(name, help_text, func):
        g = sub.add_parser(name, help=help_text)
        g.add_argument("--vocab", required=True)
        g.add_argument("--out", required=True)
        g.add_argument("--max-input-len", type=int, default=None)
        g.set_defaults(func=func)
        return g

    g = gen("gen-denoise", "corrupt table cells and columns for denoising", cmd_gen_denoise)
    g.add_argument("--docs", required=True)
    g.add_argument("--rate", type=float, default=0.15)
    g.add_argument("--column-prob", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--number-split", action="store_true")

    g = gen("gen-tottify", "pair tables with statements sharing their entities", cmd_gen_tottify)
    g.add_argument("--docs", required=True)
    g.add_argument("--statements", required=True)
    g.add_argument("--number-split", action="store_true")

    g = gen("gen-qa", "question answering examples from SQL-annotated questions", cmd_gen_qa)
    g.add_argument("--docs", required=True)
    g.add_argument("--qa", required=True, help="JSONL {id?, doc_id, question, sql}")
    g.add_argument("--answers", help="also write executed answers here")

    g = gen("gen-formula", "formula prediction examples", cmd_gen_formula)
    g.add_argument("--sheets", required=True)
    g.add_argument("--window", type=_window, default=(2, 2, 2, 2), help="up,down,left,right")

    g = gen("gen-totto", "highlighted-cell description examples", cmd_gen_totto)
    g.add_argument("--data", required=True)

    s = sub.add_parser("train", help="train or continue training a model")
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--init", help="checkpoint to continue from")
    s.add_argument("--out", required=True)
    s.add_argument("--metrics", help="CSV log path (default: <out>.metrics.csv)")
    s.add_argument("--eval-data", help="examples scored by greedy sequence accuracy")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="decode predictions for examples")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--beam", type=int, default=1)
    s.add_argument("--max-len", type=int, default=64)
    s.add_argument("--nbest", action="store_true", help="include every beam hypothesis")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="score predictions")
    s.add_argument("--metric", choices=("seqacc", "bleu", "denotation", "topk"), required=True)
    runs = s.add_mutually_exclusive_group(required=True)
    runs.add_argument("--predictions")
    runs.add_argument("--runs", nargs="+", help="several prediction files; reports median and std")
    s.add_argument("--references", help="JSONL {id, reference} or example JSONL with --vocab")
    s.add_argument("--vocab")
    s.add_argument("--qa")
    s.add_argument("--docs")
    s.add_argument("--k", type=int, default=1)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputFormatError, CorruptFile) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"error: {exc.strerror or exc}: {name}", file=sys.stderr)
        return EXIT_IO
    except (TabSeqError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
