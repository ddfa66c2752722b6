"""Deterministic synthetic corpus with planted topic and keyword structure.

Each sample draws 1-3 topics.  Its report concatenates the topic sentences
(template slots filled with randomly chosen keywords) in label order, with
filler sentences inserted at rate ``noise_rate``.  The paired visual input
carries one signal direction per topic and per chosen keyword on that topic's
patch block, plus Gaussian noise.  Report embeddings come from a hash-based
bag-of-words embedder; the "image-side" query embedding embeds the noise-free
report plus noise, so same-topic reports cluster in retrieval.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import N_TOPICS, SampleRecord, tokenize, write_corpus
from .retrieval import HashEmbedder, write_ids
from .tensorio import save_tensor

_SLOT_RE = re.compile(r"\{(\w+)\}")


@dataclass
class TopicTemplate:
    label: int
    template: str
    slots: dict[str, list[str]] = field(default_factory=dict)
    signatures: list[str] = field(default_factory=list)

    def keywords(self) -> list[str]:
        words = [t for t in tokenize(_SLOT_RE.sub(" ", self.template)) if t.isalpha()]
        for opts in self.slots.values():
            for opt in opts:
                words.extend(t for t in tokenize(opt) if t.isalpha())
        return sorted(set(words))

    def instantiate(self, choice: dict[str, str]) -> list[str]:
        return tokenize(_SLOT_RE.sub(lambda m: choice[m.group(1)], self.template))


DEFAULT_TOPICS = [
    TopicTemplate(0, "the mediastinal contour is {degree} widened .",
                  {"degree": ["mildly", "moderately", "markedly"]}, ["mediastinal contour"]),
    TopicTemplate(1, "the heart is {degree} enlarged consistent with cardiomegaly .",
                  {"degree": ["slightly", "substantially", "severely"]}, ["cardiomegaly"]),
    TopicTemplate(2, "{kind} opacity in the {zone} lung zone .",
                  {"kind": ["hazy", "patchy", "streaky"], "zone": ["upper", "middle", "lower"]}, ["lung zone"]),
    TopicTemplate(3, "a {size} nodule is seen in the {lobe} segment .",
                  {"size": ["tiny", "spiculated", "calcified"], "lobe": ["apical", "lingular", "basal"]},
                  ["nodule is seen"]),
    TopicTemplate(4, "there is {severity} interstitial edema with {sign} .",
                  {"severity": ["mild", "moderate", "severe"],
                   "sign": ["cephalization", "kerley lines", "peribronchial cuffing"]}, ["interstitial edema"]),
    TopicTemplate(5, "{density} consolidation is present in the {region} .",
                  {"density": ["dense", "focal", "multilobar"], "region": ["retrocardiac", "perihilar", "peripheral"]},
                  ["consolidation is present"]),
    TopicTemplate(6, "findings may represent {ptype} pneumonia .",
                  {"ptype": ["aspiration", "multifocal", "early"]}, ["pneumonia"]),
    TopicTemplate(7, "{pattern} atelectasis at the {side} base .",
                  {"pattern": ["plate", "subsegmental", "linear"], "side": ["left", "right", "bibasilar"]},
                  ["atelectasis"]),
    TopicTemplate(8, "a {amount} {side} apical pneumothorax .",
                  {"amount": ["minimal", "small", "large"], "side": ["left", "right"]}, ["pneumothorax"]),
    TopicTemplate(9, "{amount} {side} pleural effusion .",
                  {"amount": ["trace", "moderate", "massive"], "side": ["left", "right", "bilateral"]},
                  ["pleural effusion"]),
    TopicTemplate(10, "{side} pleural thickening with {finding} .",
                  {"side": ["apical", "diffuse", "lateral"], "finding": ["calcification", "scarring", "plaques"]},
                  ["pleural thickening"]),
    TopicTemplate(11, "{age} fracture of the {which} rib .",
                  {"age": ["healed", "acute", "displaced"], "which": ["fourth", "sixth", "eighth"]}, ["fracture"]),
    TopicTemplate(12, "the {device} tip terminates in the {location} .",
                  {"device": ["catheter", "tube", "picc"], "location": ["svc", "atrium", "stomach"]},
                  ["tip terminates"]),
    TopicTemplate(13, "no acute cardiopulmonary {what} .",
                  {"what": ["process", "abnormality", "disease"]}, ["no acute cardiopulmonary"]),
]

DEFAULT_FILLERS = [
    "heart size is within normal limits .",
    "the osseous structures are intact .",
    "there is no free air under the diaphragm .",
    "the trachea is midline .",
    "visualized upper abdomen is unremarkable .",
    "degenerative changes of the thoracic spine .",
    "comparison is made to the prior study .",
    "the hila are unremarkable .",
    "surgical clips project over the neck .",
    "soft tissues are normal .",
]


@dataclass
class SyntheticSpec:
    topics: list[TopicTemplate] = field(default_factory=lambda: [TopicTemplate(**asdict(t)) for t in DEFAULT_TOPICS])
    fillers: list[str] = field(default_factory=lambda: list(DEFAULT_FILLERS))
    n_train: int = 500
    n_val: int = 50
    n_test: int = 100
    noise_rate: float = 0.1
    min_topics: int = 1
    max_topics: int = 3
    modality: str = "features"  # "features" (N x d_h) or "image" (H x W x 1)
    n_patches: int = 16
    feature_dim: int = 64
    image_size: int = 32
    patch_size: int = 8
    patches_per_topic: int = 4
    signal: float = 1.0
    feature_noise: float = 1.0
    embed_dim: int = 64
    query_noise: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not 1 <= len(self.topics) <= N_TOPICS:
            raise ValueError(f"topic count must be in [1, {N_TOPICS}]")
        labels = [t.label for t in self.topics]
        if len(set(labels)) != len(labels) or not all(0 <= l < N_TOPICS for l in labels):
            raise ValueError("topic labels must be distinct indices in [0, 14)")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must be in [0, 1)")
        if not 1 <= self.min_topics <= self.max_topics <= len(self.topics):
            raise ValueError("need 1 <= min_topics <= max_topics <= topic count")
        if self.modality not in ("features", "image"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "image" and self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        keysets = []
        for t in self.topics:
            if not t.keywords():
                raise ValueError(f"topic {t.label} has an empty keyword set")
            if not t.signatures:
                raise ValueError(f"topic {t.label} has no signature phrase")
            for name in _SLOT_RE.findall(t.template):
                if not t.slots.get(name):
                    raise ValueError(f"topic {t.label}: slot {name!r} has no options")
            keysets.append(frozenset(t.keywords()))
        if len(set(keysets)) != len(keysets):
            raise ValueError("topic keyword sets must be mutually distinguishable")
        # signatures must not leak into other topics' sentences or fillers
        for t in self.topics:
            for sig in t.signatures:
                sig_toks = tokenize(sig)
                for other in self.topics:
                    if other is t:
                        continue
                    for choice in _all_choices(other):
                        if _contains(other.instantiate(choice), sig_toks):
                            raise ValueError(f"signature {sig!r} of topic {t.label} occurs in topic {other.label}")
                for f in self.fillers:
                    if _contains(tokenize(f), sig_toks):
                        raise ValueError(f"signature {sig!r} occurs in filler {f!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticSpec":
        obj = dict(obj)
        if "topics" in obj:
            obj["topics"] = [TopicTemplate(**t) for t in obj["topics"]]
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def _all_choices(topic: TopicTemplate) -> list[dict[str, str]]:
    choices: list[dict[str, str]] = [{}]
    for name in dict.fromkeys(_SLOT_RE.findall(topic.template)):
        choices = [dict(c, **{name: opt}) for c in choices for opt in topic.slots[name]]
    return choices


def _contains(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(list(tokens[i:i + n]) == list(phrase) for i in range(len(tokens) - n + 1))


def rule_label(tokens: Sequence[str] | str, spec: SyntheticSpec) -> list[int]:
    """14-bit topic vector: bit set iff one of the topic's signature phrases occurs."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    out = [0] * N_TOPICS
    for t in spec.topics:
        if any(_contains(tokens, tokenize(sig)) for sig in t.signatures):
            out[t.label] = 1
    return out


@dataclass
class SyntheticSample:
    id: str
    split: str
    topics: list[int]  # positions into spec.topics, ascending
    choices: list[dict[str, str]]
    report_tokens: list[str]
    clean_tokens: list[str]
    visual: np.ndarray
    report_embedding: np.ndarray
    query_embedding: np.ndarray


class _Signals:
    """Fixed signal directions / patch blocks drawn once from the spec rng."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        if spec.modality == "features":
            n_patches, width = spec.n_patches, spec.feature_dim
        else:
            g = spec.image_size // spec.patch_size
            n_patches, width = g * g, spec.patch_size * spec.patch_size
        self.n_patches, self.width = n_patches, width
        k = min(spec.patches_per_topic, n_patches)
        self.blocks = [np.sort(rng.choice(n_patches, size=k, replace=False)) for _ in spec.topics]
        self.topic_dirs = [self._unit(rng) for _ in spec.topics]
        self.option_dirs = [
            {(slot, opt): self._unit(rng) for slot, opts in t.slots.items() for opt in opts}
            for t in spec.topics
        ]

    def _unit(self, rng):
        v = rng.standard_normal(self.width)
        return v / np.linalg.norm(v) * np.sqrt(self.width)

    def render(self, topics: list[int], choices: list[dict[str, str]], rng: np.random.Generator) -> np.ndarray:
        spec = self.spec
        scale = 1.0 / np.sqrt(self.width) if spec.modality == "image" else 1.0
        x = rng.standard_normal((self.n_patches, self.width)) * spec.feature_noise * scale
        for ti, choice in zip(topics, choices):
            sig = self.topic_dirs[ti].copy()
            for slot, opt in choice.items():
                sig += self.option_dirs[ti][(slot, opt)]
            x[self.blocks[ti]] += spec.signal * scale * sig / np.sqrt(1 + len(choice))
        if spec.modality == "features":
            return x
        p, g = spec.patch_size, spec.image_size // spec.patch_size
        img = x.reshape(g, g, p, p).transpose(0, 2, 1, 3).reshape(spec.image_size, spec.image_size, 1)
        return np.clip(0.5 + 0.25 * img, 0.0, 1.0)


def generate_samples(spec: SyntheticSpec, seed: int | None = None) -> list[SyntheticSample]:
    spec.validate()
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    signals = _Signals(spec, rng)
    embedder = HashEmbedder(spec.embed_dim, salt=f"tksg-{seed}")
    out: list[SyntheticSample] = []
    for split, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        for i in range(count):
            n = int(rng.integers(spec.min_topics, spec.max_topics + 1))
            topics = sorted(int(t) for t in rng.choice(len(spec.topics), size=n, replace=False))
            topics.sort(key=lambda t: spec.topics[t].label)
            choices = []
            for t in topics:
                tpl = spec.topics[t]
                choices.append({name: tpl.slots[name][int(rng.integers(len(tpl.slots[name])))]
                                for name in dict.fromkeys(_SLOT_RE.findall(tpl.template))})
            clean: list[str] = []
            noisy: list[str] = []
            for t, choice in zip(topics, choices):
                sent = spec.topics[t].instantiate(choice)
                clean += sent
                noisy += sent
                if spec.noise_rate > 0 and rng.random() < spec.noise_rate:
                    noisy += tokenize(spec.fillers[int(rng.integers(len(spec.fillers)))])
            visual = signals.render(topics, choices, rng)
            q = embedder.embed(clean) + rng.standard_normal(spec.embed_dim) * spec.query_noise / np.sqrt(spec.embed_dim)
            out.append(SyntheticSample(
                id=f"{split}{i:05d}", split=split, topics=topics, choices=choices,
                report_tokens=noisy, clean_tokens=clean, visual=visual,
                report_embedding=embedder.embed(noisy), query_embedding=q / np.linalg.norm(q),
            ))
    return out


def topic_vector(sample_topics: Sequence[int], spec: SyntheticSpec) -> list[int]:
    vec = [0] * N_TOPICS
    for t in sample_topics:
        vec[spec.topics[t].label] = 1
    return vec


def generate_synthetic(spec: SyntheticSpec, out_dir, seed: int | None = None) -> list[SampleRecord]:
    """Write corpus.jsonl, per-sample visual files, embedding files and the spec to ``out_dir``."""
    seed = spec.seed if seed is None else seed
    samples = generate_samples(spec, seed)
    os.makedirs(os.path.join(out_dir, "visual"), exist_ok=True)
    records = []
    for s in samples:
        ref = f"visual/{s.id}.tksg"
        save_tensor(os.path.join(out_dir, ref), s.visual)
        records.append(SampleRecord(id=s.id, image_ref=ref, report=" ".join(s.report_tokens),
                                    topics=topic_vector(s.topics, spec), split=s.split))
    write_corpus(os.path.join(out_dir, "corpus.jsonl"), records)
    ids = [s.id for s in samples]
    save_tensor(os.path.join(out_dir, "report_embeddings.tksg"), np.stack([s.report_embedding for s in samples]))
    write_ids(os.path.join(out_dir, "report_ids.txt"), ids)
    save_tensor(os.path.join(out_dir, "query_embeddings.tksg"), np.stack([s.query_embedding for s in samples]))
    write_ids(os.path.join(out_dir, "query_ids.txt"), ids)
    saved = SyntheticSpec.from_dict(json.loads(spec.to_json()))
    saved.seed = seed
    saved.save(os.path.join(out_dir, "synth_spec.json"))
    return records
