"""Run configuration (JSON file, every field overridable from the command line)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .model import VARIANTS, ModelConfig

_PATH_FIELDS = ("corpus", "vocab_dir", "index_dir", "query_embeddings", "query_ids", "synth_spec", "run_root", "run_dir")


@dataclass
class RunConfig:
    # model dims
    d_h: int = 64
    d_b: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    n_layers: int = 3
    n_heads: int = 8
    t_max: int = 60
    dropout: float = 0.1
    sg_layers: list[int] | None = None
    visual_input: str = "features"
    image_size: int = 32
    patch_size: int = 8
    # guidance
    n_r: int = 30
    n_w: int = 100
    n_k: int = 20
    variant: str = "TKSG"
    exclude_self: bool = True
    # optimisation
    lr_encoder: float = 1e-3
    lr_rest: float = 1e-3
    decay: float = 0.8
    epochs: int = 30
    batch_size: int = 16
    patience: int = 5
    min_count: int = 1
    # decoding
    beam: int = 3
    seed: int = 0
    # paths
    corpus: str = ""
    vocab_dir: str = ""
    index_dir: str = ""
    query_embeddings: str = ""
    query_ids: str = ""
    synth_spec: str = ""
    run_root: str = "runs"
    run_dir: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}")
        for name in ("d_h", "d_b", "enc_layers", "enc_heads", "n_layers", "n_heads", "t_max",
                     "n_r", "n_w", "n_k", "epochs", "batch_size", "beam"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.seed is None:
            raise ValueError("seed is mandatory")

    @classmethod
    def full_scale(cls, **overrides) -> "RunConfig":
        """Reference-size profile: d_h=512, 3 layers x 8 heads, lrs 2e-4 (encoder) / 5e-4 (rest)."""
        base = dict(d_h=512, d_b=512, n_layers=3, n_heads=8, lr_encoder=2e-4, lr_rest=5e-4,
                    visual_input="image", image_size=224, patch_size=16)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {unknown}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        # beam only affects decoding, so runs differing in it share a checkpoint
        d = {k: v for k, v in self.to_dict().items() if k not in ("seed", "run_root", "run_dir", "beam")}
        return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]

    def run_name(self) -> str:
        return f"{self.config_hash()}-s{self.seed}"

    def model_config(self, vocab_size: int, d_e: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d_h=self.d_h, n_layers=self.n_layers, n_heads=self.n_heads,
            t_max=self.t_max, dropout=self.dropout,
            sg_layers=tuple(self.sg_layers) if self.sg_layers is not None else None,
            n_w=self.n_w, n_k=self.n_k, d_e=d_e, variant=self.variant, visual_input=self.visual_input,
            image_size=self.image_size, patch_size=self.patch_size, d_b=self.d_b,
            enc_layers=self.enc_layers, enc_heads=self.enc_heads,
        )


def field_types() -> dict[str, type]:
    out = {}
    for f in fields(RunConfig):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        out[f.name] = t
    return out
