"""Bundle manifest: the YAML file that pins a victim bundle's geometry and seed.

Example::

    image_size: 64
    codec_factor: 8
    latent_channels: 4
    anchor_stride: 8
    anchor_size: 40
    timesteps: 10
    seed: 0
    condition_encoder: arc_a
    attention_layers: [down.attn, up.attn]
    feature_layers: [down, up]
    encoders:
      - {id: arc_a, dim: 32, role: attack}
      - {id: arc_b, dim: 32, role: attack}
      - {id: arc_eval, dim: 32, role: eval}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml


class ManifestError(ValueError):
    """Invalid manifest; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"manifest field {field_name!r}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class EncoderSpec:
    id: str
    dim: int = 32
    role: str = "attack"


def _default_encoders():
    return (
        EncoderSpec("arc_a", 32, "attack"),
        EncoderSpec("arc_b", 32, "attack"),
        EncoderSpec("arc_eval", 32, "eval"),
    )


@dataclass(frozen=True)
class BundleManifest:
    image_size: int = 64
    codec_factor: int = 8
    latent_channels: int = 4
    anchor_stride: int = 8
    anchor_size: int = 40
    timesteps: int = 10
    seed: int = 0
    condition_encoder: str = "arc_a"
    attention_layers: tuple[str, ...] = ("down.attn", "up.attn")
    feature_layers: tuple[str, ...] = ("down", "up")
    encoders: tuple[EncoderSpec, ...] = field(default_factory=_default_encoders)

    def __post_init__(self):
        for name in ("image_size", "codec_factor", "latent_channels", "anchor_stride",
                     "anchor_size", "timesteps"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ManifestError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ManifestError("seed", f"must be a non-negative integer, got {self.seed!r}")
        if self.image_size < 8 or self.image_size % self.codec_factor:
            raise ManifestError("image_size", f"must be >= 8 and divisible by codec_factor "
                                f"{self.codec_factor}")
        if self.image_size % self.anchor_stride:
            raise ManifestError("anchor_stride", "must divide image_size")
        if len(self.attention_layers) != 2:
            raise ManifestError("attention_layers", "surrogate backbone exposes exactly 2 layers")
        if len(self.feature_layers) != 2:
            raise ManifestError("feature_layers", "must name exactly [l_down, l_up]")
        ids = [e.id for e in self.encoders]
        if len(set(ids)) != len(ids):
            raise ManifestError("encoders", "duplicate encoder ids")
        for e in self.encoders:
            if e.role not in ("attack", "eval"):
                raise ManifestError("encoders", f"role of {e.id!r} must be attack or eval")
            if not isinstance(e.dim, int) or e.dim <= 0:
                raise ManifestError("encoders", f"dim of {e.id!r} must be a positive integer")
        if not any(e.role == "attack" for e in self.encoders):
            raise ManifestError("encoders", "need at least one attack encoder")
        if sum(e.role == "eval" for e in self.encoders) != 1:
            raise ManifestError("encoders", "need exactly one eval encoder")
        if self.condition_encoder not in ids:
            raise ManifestError("condition_encoder", f"{self.condition_encoder!r} not in encoders")

    @property
    def anchor_count(self) -> int:
        return (self.image_size // self.anchor_stride) ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attention_layers"] = list(self.attention_layers)
        d["feature_layers"] = list(self.feature_layers)
        d["encoders"] = [asdict(e) for e in self.encoders]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "BundleManifest":
        if not isinstance(data, dict):
            raise ManifestError("<root>", "manifest must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ManifestError(sorted(unknown)[0], "unknown key")
        kw = dict(data)
        if "encoders" in kw:
            try:
                kw["encoders"] = tuple(EncoderSpec(**e) for e in kw["encoders"])
            except TypeError as exc:
                raise ManifestError("encoders", str(exc)) from None
        for key in ("attention_layers", "feature_layers"):
            if key in kw:
                if not isinstance(kw[key], (list, tuple)):
                    raise ManifestError(key, "must be a list")
                kw[key] = tuple(str(x) for x in kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "BundleManifest":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ManifestError("<root>", f"not valid YAML: {exc}") from None
        return cls.from_dict(data or {})

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
