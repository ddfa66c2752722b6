"""Command-line entry point: ``python -m tksg <subcommand>``.

Subcommands: gen-synth, build-vocab, build-index, train, generate, retrieve,
evaluate, sweep.  Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import warnings
from dataclasses import fields

from .config import RunConfig
from .corpus import Vocabulary, build_vocab, load_corpus, split_records, tokenize
from .keyword import build_concepts, load_stopwords
from .metrics import MetricReport, evaluate
from .retrieval import RetrievalIndex, build_index, query_topk, read_ids
from .synthetic import SyntheticSpec, generate_synthetic, rule_label
from .tensorio import load_tensor
from .train import (Trainer, build_model, generate_reports, load_resources, prepare, read_generated,
                    write_generated)

log = logging.getLogger("tksg")


# --- commands (also used directly by tests and demos) --------------------------

def cmd_gen_synth(out_dir, seed: int | None = None, spec: SyntheticSpec | None = None) -> str:
    spec = spec or SyntheticSpec()
    generate_synthetic(spec, out_dir, seed)
    return os.path.join(out_dir, "corpus.jsonl")


def cmd_build_vocab(corpus_path, out_dir, n_w: int = 100, min_count: int = 1, stopwords_path=None) -> tuple[Vocabulary, object]:
    records = split_records(load_corpus(corpus_path), "train")
    if not records:
        raise ValueError("train split is empty")
    toks = [tokenize(r.report) for r in records]
    vocab = build_vocab(toks, min_count=min_count)
    concepts = build_concepts(toks, n_w, load_stopwords(stopwords_path))
    os.makedirs(out_dir, exist_ok=True)
    vocab.save(os.path.join(out_dir, "vocab.tsv"))
    concepts.save(os.path.join(out_dir, "concepts.tsv"))
    return vocab, concepts


def cmd_build_index(embeddings_path, ids_path, out_dir, corpus_path=None, split: str | None = "train") -> RetrievalIndex:
    emb = load_tensor(embeddings_path)
    ids = read_ids(ids_path)
    if len(ids) != emb.shape[0]:
        raise ValueError(f"{len(ids)} ids for {emb.shape[0]} embeddings")
    if corpus_path and split:
        keep = {r.id for r in split_records(load_corpus(corpus_path), split)}
        rows = [i for i, id_ in enumerate(ids) if id_ in keep]
        emb, ids = emb[rows], [ids[i] for i in rows]
    index = build_index(emb, ids)
    index.save(out_dir)
    return index


def setup_synthetic(out_dir, spec: SyntheticSpec | None = None, seed: int | None = None, n_w: int = 100,
                    **config) -> RunConfig:
    """gen-synth + build-vocab + build-index under ``out_dir``; returns a config pointing at them."""
    corpus = cmd_gen_synth(os.path.join(out_dir, "data"), seed, spec)
    data = os.path.dirname(corpus)
    cmd_build_vocab(corpus, os.path.join(out_dir, "vocab"), n_w=n_w)
    cmd_build_index(os.path.join(data, "report_embeddings.tksg"), os.path.join(data, "report_ids.txt"),
                    os.path.join(out_dir, "index"), corpus_path=corpus, split="train")
    paths = dict(corpus=corpus, vocab_dir=os.path.join(out_dir, "vocab"), index_dir=os.path.join(out_dir, "index"),
                 query_embeddings=os.path.join(data, "query_embeddings.tksg"),
                 query_ids=os.path.join(data, "query_ids.txt"), synth_spec=os.path.join(data, "synth_spec.json"),
                 run_root=os.path.join(out_dir, "runs"), n_w=n_w)
    paths.update(config)
    return RunConfig(**paths)


def cmd_train(cfg: RunConfig, resume: bool = False) -> str:
    res = load_resources(cfg)
    trainer = Trainer(cfg, res)
    trainer.fit(resume=resume)
    return trainer.run_dir


def run_dir_of(cfg: RunConfig) -> str:
    return cfg.run_dir or os.path.join(cfg.run_root, cfg.run_name())


def cmd_generate(cfg: RunConfig, checkpoint: str | None = None, split: str = "test", out: str | None = None,
                 greedy: bool = False) -> str:
    run_dir = run_dir_of(cfg)
    checkpoint = checkpoint or os.path.join(run_dir, "checkpoint", "best")
    res = load_resources(cfg)
    model = build_model(cfg, res, checkpoint)
    records = split_records(res.records, split)
    out = out or os.path.join(run_dir, f"generated_{split}{'_greedy' if greedy else ''}.txt")
    if not records:
        warnings.warn(f"split {split!r} is empty; writing an empty file")
        write_generated(out, [])
        return out
    samples = prepare(cfg, res, records)
    write_generated(out, generate_reports(model, res.vocab, samples, cfg.beam, greedy=greedy))
    return out


def _read_labels(path) -> dict[str, list[int]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["id"]] = list(obj["topics"])
    return out


def cmd_evaluate(generated_path, references_path, pred_labels=None, gold_labels=None, synth_spec=None,
                 split: str | None = None, out_json: str | None = None) -> MetricReport:
    gen = read_generated(generated_path)
    gold_from_corpus = None
    if references_path.endswith(".jsonl"):
        records = load_corpus(references_path)
        if split:
            records = split_records(records, split)
        refs = {r.id: r.report for r in records}
        gold_from_corpus = {r.id: r.topics for r in records}
        expected = set(refs) if split else set(gen)
    else:
        refs = read_generated(references_path)
        expected = set(refs)
    missing_gen = sorted(expected - set(gen))
    missing_ref = sorted(set(gen) - set(refs))
    if missing_gen or missing_ref:
        raise ValueError(f"id mismatch: missing in generated={missing_gen[:20]} missing in references={missing_ref[:20]}")
    ids = sorted(gen)
    cands = [tokenize(gen[i]) for i in ids]
    references = [tokenize(refs[i]) for i in ids]
    spec = SyntheticSpec.load(synth_spec) if synth_spec else None
    pred = gold = None
    if pred_labels:
        pl = _read_labels(pred_labels)
        pred = [pl[i] for i in ids]
    elif spec is not None:
        pred = [rule_label(c, spec) for c in cands]
    if gold_labels:
        gl = _read_labels(gold_labels)
        gold = [gl[i] for i in ids]
    elif gold_from_corpus is not None and (pred is not None):
        gold = [gold_from_corpus[i] for i in ids]
    elif spec is not None:
        gold = [rule_label(r, spec) for r in references]
    report = evaluate(cands, references, pred, gold)
    if out_json:
        with open(out_json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.splitext(out_json)[0] + ".tsv", "w", encoding="utf-8") as fh:
            fh.write(report.tsv_line() + "\n")
    return report


def cmd_retrieve(index_dir, queries_path, k: int, query_ids_path=None) -> list[tuple[str, int, str, float]]:
    index = RetrievalIndex.load(index_dir)
    q = load_tensor(queries_path)
    if q.ndim == 1:
        q = q[None]
    if q.shape[1] != index.dim:
        raise ValueError(f"query dim {q.shape[1]} != index dim {index.dim}")
    qids = read_ids(query_ids_path) if query_ids_path else [str(i) for i in range(len(q))]
    if k > len(index):
        warnings.warn(f"k={k} exceeds index size {len(index)}; returning {len(index)} rows")
    rows = []
    for qid, vec in zip(qids, q):
        hits = query_topk(index, vec, min(k, len(index)))
        rows.extend((qid, rank, i, s) for rank, (i, s) in enumerate(zip(hits.ids, hits.sims)))
    return rows


def cmd_sweep(cfg: RunConfig, grid: dict, out_path: str | None = None, split: str = "test") -> list[dict]:
    """Train + generate + evaluate for every (n_r, n_k) cell; failures are recorded, not fatal."""
    keys = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        row = dict(params)
        try:
            cell = cfg.replace(**params, run_dir="")
            run_dir = cmd_train(cell)
            gen = cmd_generate(cell, split=split)
            rep = cmd_evaluate(gen, cell.corpus, synth_spec=cell.synth_spec or None, split=split,
                               out_json=os.path.join(run_dir, "metrics.json"))
            row.update(rep.to_dict(), status="ok")
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            row.update(status=f"error: {type(exc).__name__}: {exc}")
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    best = max(ok, key=lambda r: r["bleu4"]) if ok else None
    for r in rows:
        r["best"] = r is best
    if out_path:
        cols = keys + ["bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "status", "best"]
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(cols) + "\n")
            for r in rows:
                fh.write("\t".join(str(r.get(c, "")) for c in cols) + "\n")
    return rows


# --- argument parsing ---------------------------------------------------------

def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


def _parse_int_list(s: str):
    return None if s.lower() in ("", "none", "all") else [int(x) for x in s.split(",")]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    for f in fields(RunConfig):
        default = f.default
        if isinstance(default, bool):
            kind = _parse_bool
        elif isinstance(default, int):
            kind = int
        elif isinstance(default, float):
            kind = float
        elif f.name == "sg_layers":
            kind = _parse_int_list
        else:
            kind = str
        p.add_argument(f"--{f.name}", type=kind, default=argparse.SUPPRESS)


def _config_from(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    names = {f.name for f in fields(RunConfig)}
    base.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tksg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic planted-structure corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spec", help="SyntheticSpec JSON")
    p.add_argument("--n_train", type=int)
    p.add_argument("--n_val", type=int)
    p.add_argument("--n_test", type=int)
    p.add_argument("--noise_rate", type=float)

    p = sub.add_parser("build-vocab", help="build token vocabulary and concept list from the train split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n_w", type=int, default=100)
    p.add_argument("--min_count", type=int, default=1)
    p.add_argument("--stopwords")

    p = sub.add_parser("build-index", help="build the report retrieval index")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", default="train")

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("generate", help="generate reports for a split")
    _add_config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.add_argument("--greedy", action="store_true")

    p = sub.add_parser("retrieve", help="top-k reports for query embeddings")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query_ids")
    p.add_argument("--k", type=int, default=30)

    p = sub.add_parser("evaluate", help="NLG + CE metrics for generated reports")
    p.add_argument("--generated", required=True)
    p.add_argument("--references", required=True, help="corpus .jsonl or id<TAB>text file")
    p.add_argument("--split")
    p.add_argument("--pred_labels")
    p.add_argument("--gold_labels")
    p.add_argument("--synth_spec")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="grid over N_R x N_K")
    _add_config_flags(p)
    p.add_argument("--grid", required=True, help='JSON, e.g. {"n_r": [1, 10], "n_k": [5, 10]}')
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen-synth":
            spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
            for name in ("n_train", "n_val", "n_test", "noise_rate"):
                if getattr(args, name) is not None:
                    setattr(spec, name, getattr(args, name))
            print(cmd_gen_synth(args.out, args.seed, spec))
        elif args.command == "build-vocab":
            vocab, concepts = cmd_build_vocab(args.corpus, args.out, args.n_w, args.min_count, args.stopwords)
            print(json.dumps({"vocab_size": len(vocab), "n_concepts": len(concepts)}))
        elif args.command == "build-index":
            index = cmd_build_index(args.embeddings, args.ids, args.out, args.corpus, args.split)
            print(json.dumps({"size": len(index), "dim": index.dim}))
        elif args.command == "train":
            print(cmd_train(_config_from(args), resume=args.resume))
        elif args.command == "generate":
            print(cmd_generate(_config_from(args), args.checkpoint, args.split, args.out, args.greedy))
        elif args.command == "retrieve":
            for qid, rank, id_, sim in cmd_retrieve(args.index, args.queries, args.k, args.query_ids):
                print(f"{qid}\t{rank}\t{id_}\t{sim:.6f}")
        elif args.command == "evaluate":
            rep = cmd_evaluate(args.generated, args.references, args.pred_labels, args.gold_labels,
                               args.synth_spec, args.split, args.out)
            print(rep.to_json())
            print(rep.tsv_line())
        elif args.command == "sweep":
            if os.path.exists(args.grid):
                with open(args.grid, encoding="utf-8") as fh:
                    grid = json.load(fh)
            else:
                grid = json.loads(args.grid)
            rows = cmd_sweep(_config_from(args), grid, args.out)
            print(json.dumps({"cells": len(rows), "ok": sum(r["status"] == "ok" for r in rows)}))
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
