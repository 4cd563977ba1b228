import json

import pytest

from tabseq.checkpoint import load_checkpoint
from tabseq.cli import build_parser, main
from tabseq.model import decode_greedy, strip_eos
from tabseq.pretrain_data import read_examples
from tabseq.tokenizer import Vocab, decode_ids


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture(scope="module")
def work(tmp_path_factory, fixtures_dir):
    """Vocab, QA examples and a short-trained checkpoint shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    f = fixtures_dir
    assert main(["vocab", "--corpus", str(f / "corpus.txt"), "--size", "303",
                 "--out", str(d / "vocab.txt")]) == 0
    assert main(["gen-qa", "--docs", str(f / "docs.jsonl"), "--qa", str(f / "qa.jsonl"),
                 "--vocab", str(d / "vocab.txt"), "--out", str(d / "qa.jsonl"),
                 "--answers", str(d / "answers.jsonl")]) == 0
    cfg = d / "tiny.cfg"
    cfg.write_text((f / "pretrain.cfg").read_text().replace("steps = 60", "steps = 8"))
    assert main(["train", "--task", "qa", "--data", str(d / "qa.jsonl"), "--config", str(cfg),
                 "--out", str(d / "m.ckpt")]) == 0
    return d


def test_vocab_is_deterministic(tmp_path, capsys, fixtures_dir):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for out in (a, b):
        code, res, _ = run(capsys, "vocab", "--corpus", fixtures_dir / "corpus.txt", "--size", 250,
                           "--out", out)
        assert code == 0 and res["vocab_size"] == 250
    assert a.read_bytes() == b.read_bytes()


def test_vocab_errors(tmp_path, capsys, fixtures_dir):
    code, _, err = run(capsys, "vocab", "--corpus", fixtures_dir / "corpus.txt", "--size", 110,
                       "--out", tmp_path / "v")
    assert code == 2 and "exceed" in err
    missing = tmp_path / "no-such-corpus.txt"
    code, _, err = run(capsys, "vocab", "--corpus", missing, "--size", 300, "--out", tmp_path / "v")
    assert code == 1 and str(missing) in err


def test_denoise_defaults_and_determinism(tmp_path, capsys, work, fixtures_dir):
    args = build_parser().parse_args(["gen-denoise", "--docs", "d", "--vocab", "v", "--out", "o"])
    assert args.rate == 0.15 and args.column_prob == 0.1 and args.seed == 0
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        code, res, _ = run(capsys, "gen-denoise", "--docs", fixtures_dir / "docs.jsonl", "--vocab",
                           work / "vocab.txt", "--seed", 9, "--out", tmp_path / name)
        assert code == 0 and res["examples"] == 40
        assert 0.05 < res["mean_masked_fraction"] < 0.3
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    code, _, _ = run(capsys, "gen-denoise", "--docs", fixtures_dir / "docs.jsonl", "--vocab",
                     work / "vocab.txt", "--seed", 10, "--out", tmp_path / "c.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() != outs[0]


def test_denoise_skips_docs_without_cells(tmp_path, capsys, work, fixtures_dir):
    docs = tmp_path / "docs.jsonl"
    lines = (fixtures_dir / "docs.jsonl").read_text().splitlines()[:3]
    lines.insert(1, json.dumps({"id": "bare", "headers": ["name"], "rows": [], "metadata": []}))
    docs.write_text("\n".join(lines) + "\n")
    code, res, err = run(capsys, "gen-denoise", "--docs", docs, "--vocab", work / "vocab.txt",
                         "--out", tmp_path / "o.jsonl")
    assert code == 0 and res["skipped"] == 1 and res["examples"] == 3
    assert "'bare'" in err and "1 document(s) skipped" in err


def test_tottify_counts(tmp_path, capsys, work, fixtures_dir):
    code, res, _ = run(capsys, "gen-tottify", "--docs", fixtures_dir / "docs.jsonl", "--statements",
                       fixtures_dir / "statements.jsonl", "--vocab", work / "vocab.txt",
                       "--out", tmp_path / "t.jsonl")
    n = len((fixtures_dir / "statements.jsonl").read_text().splitlines())
    assert code == 0 and res["kept"] + res["dropped"] == res["statements"] == n
    assert len(read_examples(tmp_path / "t.jsonl")) == res["kept"]


def test_tottify_empty_and_malformed(tmp_path, capsys, work, fixtures_dir):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, res, _ = run(capsys, "gen-tottify", "--docs", fixtures_dir / "docs.jsonl", "--statements",
                       empty, "--vocab", work / "vocab.txt", "--out", tmp_path / "o.jsonl")
    assert code == 0 and res["kept"] == 0 and (tmp_path / "o.jsonl").read_text() == ""
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"doc_id": "doc0", "text": "x", "entities": []}\n{"doc_id": \n')
    code, _, err = run(capsys, "gen-tottify", "--docs", fixtures_dir / "docs.jsonl", "--statements",
                       bad, "--vocab", work / "vocab.txt", "--out", tmp_path / "o.jsonl")
    assert code == 1 and "bad.jsonl:2" in err


def test_qa_answers(work):
    answers = [json.loads(l) for l in (work / "answers.jsonl").read_text().splitlines()]
    by_id = {a["id"]: a for a in answers}
    assert by_id["qa-count"]["answer"] == ["5"]
    assert set(answers[0]) == {"id", "doc_id", "answer", "reference"}
    vocab = Vocab.load(work / "vocab.txt")
    ex = read_examples(work / "qa.jsonl")[0]
    assert decode_ids(vocab, strip_eos(ex.target)) == answers[0]["reference"]


def test_formula_and_totto(tmp_path, capsys, work, fixtures_dir):
    code, res, _ = run(capsys, "gen-formula", "--sheets", fixtures_dir / "formulas.jsonl",
                       "--vocab", work / "vocab.txt", "--out", tmp_path / "f.jsonl")
    assert code == 0 and (res["kept"], res["dropped"]) == (2, 2)
    code, res, err = run(capsys, "gen-totto", "--data", fixtures_dir / "totto.jsonl",
                         "--vocab", work / "vocab.txt", "--out", tmp_path / "t.jsonl")
    assert code == 0 and (res["kept"], res["dropped"]) == (6, 1) and "outside" in err


@pytest.mark.parametrize("text,code", [
    ("version = 1\nsteps 5\n", 1),
    ("steps = 5\n", 1),
    ("version = 1\nsteps = five\n", 1),
    ("version = 1\nbogus = 3\n", 1),
    ("version = 1\nsteps = 0\n", 2),
    ("version = 2\n", 2),
    ("version = 1\nd_model = 30\nnum_heads = 4\n", 2),
])
def test_config_errors(tmp_path, capsys, work, text, code):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    got, _, err = run(capsys, "train", "--task", "qa", "--data", work / "qa.jsonl", "--config", cfg,
                      "--out", tmp_path / "x.ckpt")
    assert got == code and err.startswith("error:")


def test_train_is_reproducible_and_resumable(tmp_path, capsys, work, fixtures_dir):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("version = 1\nvocab_size = 303\nd_model = 16\nnum_heads = 2\nd_ff = 32\n"
                   "steps = 5\nbatch_size = 4\nlearning_rate = 0.001\nseed = 2\neval_every = 5\n")
    results = []
    for name in ("a.ckpt", "b.ckpt"):
        code, res, _ = run(capsys, "train", "--task", "qa", "--data", work / "qa.jsonl",
                           "--config", cfg, "--out", tmp_path / name, "--eval-data", work / "qa.jsonl")
        assert code == 0
        results.append(res)
    assert results[0]["final_loss"] == results[1]["final_loss"]
    assert results[0]["final_eval"] == results[1]["final_eval"]
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    rows = (tmp_path / "a.ckpt.metrics.csv").read_text().splitlines()
    assert rows[0] == "step,loss,lr,eval_metric" and len(rows) == 6

    code, res, _ = run(capsys, "train", "--task", "qa", "--data", work / "qa.jsonl", "--config", cfg,
                       "--init", tmp_path / "a.ckpt", "--out", tmp_path / "c.ckpt")
    assert code == 0
    before, _ = load_checkpoint(tmp_path / "a.ckpt")
    after, _ = load_checkpoint(tmp_path / "c.ckpt")
    assert not all((before.state_dict()[k] == after.state_dict()[k]).all() for k in before.state_dict())
    # continuing from a checkpoint starts from its weights, so the first loss is lower
    first_fresh = float((tmp_path / "a.ckpt.metrics.csv").read_text().splitlines()[1].split(",")[1])
    first_resumed = float((tmp_path / "c.ckpt.metrics.csv").read_text().splitlines()[1].split(",")[1])
    assert first_resumed < first_fresh

    mismatch = tmp_path / "m.cfg"
    mismatch.write_text("version = 1\nd_model = 32\nsteps = 2\n")
    code, _, err = run(capsys, "train", "--task", "qa", "--data", work / "qa.jsonl", "--config",
                       mismatch, "--init", tmp_path / "a.ckpt", "--out", tmp_path / "d.ckpt")
    assert code == 2 and "d_model" in err


def test_train_rejects_data_beyond_vocab(tmp_path, capsys, work):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("version = 1\nvocab_size = 120\nd_model = 16\nnum_heads = 2\nsteps = 1\n")
    code, _, err = run(capsys, "train", "--task", "qa", "--data", work / "qa.jsonl", "--config", cfg,
                       "--out", tmp_path / "x.ckpt")
    assert code == 2 and "vocabulary" in err


def test_generate_beam_one_is_greedy(tmp_path, capsys, work):
    code, res, _ = run(capsys, "generate", "--ckpt", work / "m.ckpt", "--data", work / "qa.jsonl",
                       "--vocab", work / "vocab.txt", "--beam", 1, "--max-len", 8,
                       "--out", tmp_path / "p.jsonl")
    assert code == 0 and res["examples"] == 33
    preds = [json.loads(l) for l in (tmp_path / "p.jsonl").read_text().splitlines()]
    model, _ = load_checkpoint(work / "m.ckpt")
    vocab = Vocab.load(work / "vocab.txt")
    for ex, p in zip(read_examples(work / "qa.jsonl"), preds):
        g = decode_greedy(model, ex.input, 8)
        assert p["id"] == ex.id
        assert p["prediction"] == decode_ids(vocab, strip_eos(g.sequences[0]))
        assert p["score"] == pytest.approx(g.scores[0], abs=1e-12)


def test_generate_nbest_and_empty(tmp_path, capsys, work):
    code, _, _ = run(capsys, "generate", "--ckpt", work / "m.ckpt", "--data", work / "qa.jsonl",
                     "--vocab", work / "vocab.txt", "--beam", 3, "--max-len", 6, "--nbest",
                     "--out", tmp_path / "p.jsonl")
    rec = json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])
    assert code == 0 and len(rec["nbest"]) == 3 and rec["nbest"][0]["prediction"] == rec["prediction"]
    scores = [e["score"] for e in rec["nbest"]]
    assert scores == sorted(scores, reverse=True)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, res, _ = run(capsys, "generate", "--ckpt", work / "m.ckpt", "--data", empty,
                       "--vocab", work / "vocab.txt", "--out", tmp_path / "e.jsonl")
    assert code == 0 and res["examples"] == 0 and (tmp_path / "e.jsonl").read_text() == ""


def test_generate_vocab_mismatch(tmp_path, capsys, work, fixtures_dir):
    run(capsys, "vocab", "--corpus", fixtures_dir / "corpus.txt", "--size", 302, "--out", tmp_path / "v")
    code, _, err = run(capsys, "generate", "--ckpt", work / "m.ckpt", "--data", work / "qa.jsonl",
                       "--vocab", tmp_path / "v", "--out", tmp_path / "p.jsonl")
    assert code == 2 and "302" in err and "303" in err


def test_corrupt_checkpoint(tmp_path, capsys, work):
    bad = tmp_path / "bad.ckpt"
    data = bytearray((work / "m.ckpt").read_bytes())
    data[100] ^= 1
    bad.write_bytes(bytes(data))
    code, _, err = run(capsys, "generate", "--ckpt", bad, "--data", work / "qa.jsonl",
                       "--vocab", work / "vocab.txt", "--out", tmp_path / "p.jsonl")
    assert code == 1 and "checksum" in err


def write_preds(path, items):
    path.write_text("".join(json.dumps({"id": i, "prediction": p}) + "\n" for i, p in items))


def test_eval_single_and_runs(tmp_path, capsys, work, fixtures_dir):
    refs = [json.loads(l) for l in (work / "answers.jsonl").read_text().splitlines()]
    good = tmp_path / "good.jsonl"
    write_preds(good, [(r["id"], r["reference"]) for r in refs])
    half = tmp_path / "half.jsonl"
    write_preds(half, [(r["id"], r["reference"] if k % 2 else "nope") for k, r in enumerate(refs)])
    code, res, _ = run(capsys, "eval", "--metric", "seqacc", "--predictions", half,
                       "--references", work / "answers.jsonl")
    assert code == 0 and res["median"] == res["value"] and res["std"] == 0.0
    assert res["value"] == pytest.approx(16 / 33) and res["count"] == 33
    code, res, _ = run(capsys, "eval", "--metric", "seqacc", "--runs", *[good] * 5,
                       "--references", work / "answers.jsonl")
    assert code == 0 and res["runs"] == 5 and res["std"] == 0.0 and res["median"] == 1.0
    code, res, _ = run(capsys, "eval", "--metric", "seqacc", "--runs", good, half, good,
                       "--references", work / "answers.jsonl")
    assert res["median"] == 1.0 and res["std"] > 0
    code, res, _ = run(capsys, "eval", "--metric", "bleu", "--predictions", good,
                       "--references", work / "answers.jsonl")
    assert res["value"] == 100.0
    code, res, _ = run(capsys, "eval", "--metric", "denotation", "--predictions", good,
                       "--qa", fixtures_dir / "qa.jsonl", "--docs", fixtures_dir / "docs.jsonl")
    assert code == 0 and res["value"] == 1.0
    code, res, _ = run(capsys, "eval", "--metric", "seqacc", "--predictions", good,
                       "--references", work / "qa.jsonl", "--vocab", work / "vocab.txt")
    assert code == 0 and res["value"] == 1.0


def test_eval_topk(tmp_path, capsys, work):
    refs = [json.loads(l) for l in (work / "answers.jsonl").read_text().splitlines()]
    path = tmp_path / "nb.jsonl"
    path.write_text("".join(json.dumps({"id": r["id"], "prediction": "no", "nbest": [
        {"prediction": "no", "score": -1}, {"prediction": r["reference"], "score": -2}]}) + "\n"
        for r in refs))
    scores = []
    for k in (1, 2):
        code, res, _ = run(capsys, "eval", "--metric", "topk", "--k", k, "--predictions", path,
                           "--references", work / "answers.jsonl")
        scores.append(res["value"])
    assert scores == [0.0, 1.0]


def test_eval_mismatched_ids(tmp_path, capsys, work):
    refs = [json.loads(l) for l in (work / "answers.jsonl").read_text().splitlines()]
    extra = tmp_path / "extra.jsonl"
    write_preds(extra, [(r["id"], "x") for r in refs] + [("ghost", "x")])
    code, _, err = run(capsys, "eval", "--metric", "seqacc", "--predictions", extra,
                       "--references", work / "answers.jsonl")
    assert code == 2 and "'ghost'" in err
    short = tmp_path / "short.jsonl"
    write_preds(short, [(r["id"], "x") for r in refs[:3]])
    code, _, err = run(capsys, "eval", "--metric", "seqacc", "--predictions", short,
                       "--references", work / "answers.jsonl")
    assert code == 2 and f"'{refs[3]['id']}'" in err
