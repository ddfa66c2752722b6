"""Data preparation, the training loop, checkpoints and report generation."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .corpus import BOS, N_TOPICS, PAD, SampleRecord, Vocabulary, load_corpus, tokenize
from .encoder import load_visual, patchify
from .keyword import ConceptVocabulary, label_keywords, load_stopwords
from .model import Batch, TKSGModel
from .optim import Adam
from .retrieval import RetrievalIndex, query_topk, read_ids
from .tensorio import load_tensor, save_tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Prepared:
    id: str
    split: str
    visual: np.ndarray
    retrieved: np.ndarray
    topics: np.ndarray
    concepts: np.ndarray
    target: list[int]
    tokens: list[str]
    retrieved_ids: tuple[str, ...] = ()


@dataclass
class Resources:
    records: list[SampleRecord]
    vocab: Vocabulary
    concepts: ConceptVocabulary
    index: RetrievalIndex
    queries: dict[str, np.ndarray]
    base_dir: str


def load_queries(emb_path, ids_path) -> dict[str, np.ndarray]:
    emb = load_tensor(emb_path)
    ids = read_ids(ids_path)
    if len(ids) != emb.shape[0]:
        raise ValueError(f"{ids_path}: {len(ids)} ids for {emb.shape[0]} query embeddings")
    return {i: emb[n] for n, i in enumerate(ids)}


def load_resources(cfg: RunConfig) -> Resources:
    missing = [name for name in ("corpus", "vocab_dir", "index_dir", "query_embeddings", "query_ids")
               if not getattr(cfg, name) or not os.path.exists(getattr(cfg, name))]
    if missing:
        raise FileNotFoundError(f"missing artifacts for config fields: {missing}")
    records = load_corpus(cfg.corpus)
    vocab = Vocabulary.load(os.path.join(cfg.vocab_dir, "vocab.tsv"))
    concepts = ConceptVocabulary.load(os.path.join(cfg.vocab_dir, "concepts.tsv"), load_stopwords())
    if len(concepts) != cfg.n_w:
        raise ValueError(f"concept vocabulary has {len(concepts)} entries but N_W={cfg.n_w}")
    index = RetrievalIndex.load(cfg.index_dir)
    queries = load_queries(cfg.query_embeddings, cfg.query_ids)
    return Resources(records, vocab, concepts, index, queries, os.path.dirname(os.path.abspath(cfg.corpus)))


def effective_n_r(cfg: RunConfig, index: RetrievalIndex) -> int:
    avail = len(index) - (1 if cfg.exclude_self else 0)
    if avail < 1:
        raise ValueError("retrieval index too small")
    if avail < cfg.n_r:
        warnings.warn(f"index holds {avail} usable reports; N_R reduced from {cfg.n_r}")
    return min(cfg.n_r, avail)


def prepare(cfg: RunConfig, res: Resources, records: list[SampleRecord] | None = None) -> list[Prepared]:
    records = res.records if records is None else records
    n_r = effective_n_r(cfg, res.index)
    out = []
    for rec in records:
        kind, arr = load_visual(os.path.join(res.base_dir, rec.image_ref), cfg.d_h)
        if cfg.visual_input == "features":
            if kind != "features":
                raise ValueError(f"{rec.id}: config expects precomputed features, found an image")
            visual = arr
        else:
            if kind != "image":
                raise ValueError(f"{rec.id}: config expects images, found precomputed features")
            visual = patchify(arr, cfg.patch_size)
        if rec.id not in res.queries:
            raise KeyError(f"no query embedding for sample {rec.id}")
        hits = query_topk(res.index, res.queries[rec.id], n_r, exclude=(rec.id,) if cfg.exclude_self else ())
        toks = tokenize(rec.report)
        out.append(Prepared(
            id=rec.id, split=rec.split, visual=visual.astype(np.float32),
            retrieved=res.index.embeddings[list(hits.rows)].astype(np.float32),
            topics=np.asarray(rec.topics, dtype=np.float32),
            concepts=label_keywords(toks, res.concepts).astype(np.float32),
            target=res.vocab.encode(toks, add_eos=True, max_len=cfg.t_max),
            tokens=toks, retrieved_ids=hits.ids,
        ))
    return out


def collate(samples: list[Prepared], dtype=np.float32) -> Batch:
    L = max(len(s.target) for s in samples)
    targets = np.full((len(samples), L), PAD, dtype=np.int64)
    for i, s in enumerate(samples):
        targets[i, :len(s.target)] = s.target
    inputs = np.concatenate([np.full((len(samples), 1), BOS, dtype=np.int64), targets[:, :-1]], axis=1)
    # positions after EOS feed PAD; they are masked out of the loss
    return Batch(
        visual=np.stack([s.visual for s in samples]).astype(dtype),
        retrieved=np.stack([s.retrieved for s in samples]).astype(dtype),
        topics=np.stack([s.topics for s in samples]).astype(dtype),
        concepts=np.stack([s.concepts for s in samples]).astype(dtype),
        inputs=inputs, targets=targets,
    )


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: TKSGModel, opt: Adam | None = None, meta: dict | None = None) -> None:
    os.makedirs(os.path.join(path, "params"), exist_ok=True)
    names = []
    for name, p in model.named_parameters():
        save_tensor(os.path.join(path, "params", f"{name}.tksg"), p.data)
        names.append(name)
    manifest = {"params": names, "meta": meta or {}}
    if opt is not None:
        groups = {}
        for gname, (params, state) in opt.groups.items():
            gdir = os.path.join(path, "adam", gname)
            os.makedirs(gdir, exist_ok=True)
            for i, (m, v) in enumerate(zip(state.m, state.v)):
                save_tensor(os.path.join(gdir, f"m{i}.tksg"), m)
                save_tensor(os.path.join(gdir, f"v{i}.tksg"), v)
            groups[gname] = {"lr": state.lr, "step": state.step, "n": len(state.m)}
        manifest["adam"] = groups
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(path, model: TKSGModel, opt: Adam | None = None) -> dict:
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    state = {name: load_tensor(os.path.join(path, "params", f"{name}.tksg")) for name in manifest["params"]}
    model.load_state_dict(state)
    if opt is not None and "adam" in manifest:
        for gname, info in manifest["adam"].items():
            _, st = opt.groups[gname]
            st.lr, st.step = info["lr"], info["step"]
            gdir = os.path.join(path, "adam", gname)
            st.m = [load_tensor(os.path.join(gdir, f"m{i}.tksg")) for i in range(info["n"])]
            st.v = [load_tensor(os.path.join(gdir, f"v{i}.tksg")) for i in range(info["n"])]
    return manifest["meta"]


# --- training -----------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: RunConfig, res: Resources, run_dir: str | None = None):
        self.cfg = cfg
        self.res = res
        self.run_dir = run_dir or cfg.run_dir or os.path.join(cfg.run_root, cfg.run_name())
        data = prepare(cfg, res)
        self.train_set = [s for s in data if s.split == "train"]
        self.val_set = [s for s in data if s.split == "val"]
        if not self.train_set:
            raise ValueError("train split is empty")
        d_e = res.index.dim
        self.model = TKSGModel(cfg.model_config(len(res.vocab), d_e), seed=cfg.seed)
        groups = self.model.active_parameter_groups()
        self.opt = Adam({"encoder": (groups["encoder"], cfg.lr_encoder), "rest": (groups["rest"], cfg.lr_rest)})
        self.log_path = os.path.join(self.run_dir, "loss_log.tsv")

    def _batches(self, samples, order):
        bs = self.cfg.batch_size
        for i in range(0, len(order), bs):
            yield collate([samples[j] for j in order[i:i + bs]])

    def train_epoch(self, epoch: int) -> dict[str, float]:
        rng = np.random.default_rng([self.cfg.seed, epoch])
        order = rng.permutation(len(self.train_set))
        self.model.train()
        self.model.decoder.dropout_rng = rng
        sums = {"all": 0.0, "rep": 0.0, "kd": 0.0, "td": 0.0}
        n = 0
        for b, batch in enumerate(self._batches(self.train_set, order)):
            self.opt.zero_grad()
            try:
                losses = self.model.losses(batch)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}; lrs={self.opt.lrs()}") from exc
            vals = losses.values()
            if not math.isfinite(vals["all"]):
                raise TrainingDiverged(f"epoch {epoch} batch {b}: loss {vals}")
            losses.all.backward()
            self.opt.step()
            w = len(batch.targets)
            for k, v in vals.items():
                sums[k] += (v if math.isfinite(v) else 0.0) * w
            n += w
        self.model.decoder.dropout_rng = None
        return {k: v / n for k, v in sums.items()}

    def eval_rep(self, samples) -> float:
        if not samples:
            return float("nan")
        self.model.eval()
        total = 0.0
        with T.no_grad():
            for batch in self._batches(samples, np.arange(len(samples))):
                total += float(self.model.losses(batch).rep.data) * len(batch.targets)
        self.model.train()
        return total / len(samples)

    def fit(self, resume: bool = False, max_epochs: int | None = None) -> dict:
        cfg = self.cfg
        os.makedirs(self.run_dir, exist_ok=True)
        with open(os.path.join(self.run_dir, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_json())
        last = os.path.join(self.run_dir, "checkpoint", "last")
        start, best, stagnant = 0, float("inf"), 0
        if resume and os.path.exists(os.path.join(last, "manifest.json")):
            meta = load_checkpoint(last, self.model, self.opt)
            start, best, stagnant = meta["epoch"] + 1, meta["best_val"], meta["stagnant"]
        elif not resume:
            with open(self.log_path, "w", encoding="utf-8") as fh:
                fh.write("epoch\tl_all\tl_rep\tl_kd\tl_td\tval_rep\tlr_encoder\tlr_rest\n")
        end = cfg.epochs if max_epochs is None else min(cfg.epochs, start + max_epochs)
        history = []
        for epoch in range(start, end):
            if stagnant >= cfg.patience:
                break
            lrs = self.opt.lrs()
            tr = self.train_epoch(epoch)
            val = self.eval_rep(self.val_set) if self.val_set else tr["rep"]
            row = [epoch, tr["all"], tr["rep"], tr["kd"], tr["td"], val, lrs["encoder"], lrs["rest"]]
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write("\t".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row) + "\n")
            history.append(dict(epoch=epoch, **tr, val_rep=val))
            log.info("epoch %d loss %.4f rep %.4f val %.4f", epoch, tr["all"], tr["rep"], val)
            if val < best:
                best, stagnant = val, 0
                save_checkpoint(os.path.join(self.run_dir, "checkpoint", "best"), self.model,
                                meta={"epoch": epoch, "val_rep": val})
            else:
                stagnant += 1
            self.opt.decay(cfg.decay)
            save_checkpoint(last, self.model, self.opt,
                            meta={"epoch": epoch, "best_val": best, "stagnant": stagnant})
        return {"best_val": best, "history": history, "run_dir": self.run_dir}


def read_loss_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        return [dict(zip(header, line.rstrip("\n").split("\t"))) for line in fh if line.strip()]


# --- generation -----------------------------------------------------------------

def build_model(cfg: RunConfig, res: Resources, checkpoint: str) -> TKSGModel:
    model = TKSGModel(cfg.model_config(len(res.vocab), res.index.dim), seed=cfg.seed)
    try:
        load_checkpoint(checkpoint, model)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"checkpoint {checkpoint} does not match the vocabulary/config: {exc}") from exc
    return model.eval()


def generate_reports(model: TKSGModel, vocab: Vocabulary, samples: list[Prepared], beam: int,
                     t_max: int | None = None, greedy: bool = False) -> list[tuple[str, str]]:
    out = []
    for s in samples:
        hyp = model.generate(s.visual[None], s.retrieved[None], beam=beam, t_max=t_max, greedy=greedy)
        out.append((s.id, " ".join(vocab.decode(hyp.tokens))))
    return out


def write_generated(path, rows: list[tuple[str, str]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{i}\t{text}\n" for i, text in rows))


def read_generated(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            i, _, text = line.partition("\t")
            out[i] = text
    return out


def topic_labels_of(records) -> dict[str, list[int]]:
    return {r.id: list(r.topics) for r in records}


__all__ = [
    "Trainer", "TrainingDiverged", "Prepared", "Resources", "load_resources", "prepare", "collate",
    "save_checkpoint", "load_checkpoint", "build_model", "generate_reports", "write_generated",
    "read_generated", "read_loss_log", "N_TOPICS",
]
