"""Cross-attended fusion of the two feature streams and the classifier.

The fusion block lets one modality supply attention queries and the other
keys/values; the residual goes to the query side and is layer-normalized.
An optional global-enhancement vector (column mean + column max of the
eye tokens) is concatenated to the pooled fused features before the
2-layer classifier head.  All ablation variants (single modalities,
plain-concat baseline, directional-block replacements, guidance modes)
are assembled from one declarative config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import functional as F
from .eye import EyeEncoder
from .facial import DEFAULT_CHANNEL_PLAN, FrameEncoder
from .nn import Dropout, LayerNorm, Linear, Module, uniform_fan_in
from .tensor import ShapeError, Tensor, cat

GUIDANCE_MODES = ("face_to_eye", "eye_to_face", "bidirectional")
MODALITIES = ("both", "eye", "face")

# class indices everywhere: positive class first
CLASS_AD = 0
CLASS_HC = 1
CLASS_NAMES = ("AD", "HC")


@dataclass(frozen=True)
class FusionConfig:
    """Declarative description of one model variant."""

    modality: str = "both"
    guidance_mode: str | None = "face_to_eye"
    num_heads: int = 2
    embed_dim: int = 128
    global_enhancement: bool = True
    use_dacm: bool = True
    use_cefam: bool = True
    classifier_hidden: int = 64
    dropout_rate: float = 0.5
    dacm_replacement: str | None = None
    facial_channels: tuple[int, ...] = DEFAULT_CHANNEL_PLAN
    eye_layers: int = 2
    eye_heads: int = 2

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.embed_dim < 1 or self.num_heads < 1 or self.classifier_hidden < 1:
            raise ValueError("embed_dim, num_heads and classifier_hidden must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.use_cefam:
            if self.modality != "both":
                raise ValueError("cross-attention fusion needs both modalities")
            if self.guidance_mode not in GUIDANCE_MODES:
                raise ValueError(
                    f"guidance_mode must be one of {GUIDANCE_MODES}, got {self.guidance_mode!r}"
                )
            if self.guidance_mode == "bidirectional" and self.global_enhancement:
                raise ValueError(
                    "bidirectional guidance runs with global enhancement disabled"
                )
        else:
            if self.guidance_mode is not None:
                raise ValueError("guidance_mode set but use_cefam is false")
            if self.global_enhancement:
                raise ValueError("global_enhancement requires use_cefam")
        if self.modality == "eye" and self.use_dacm:
            raise ValueError("use_dacm set but the facial stream is disabled")
        if self.dacm_replacement is not None:
            if self.dacm_replacement not in ("conv3x3", "conv5x5"):
                raise ValueError(f"unknown dacm_replacement {self.dacm_replacement!r}")
            if self.use_dacm:
                raise ValueError("dacm_replacement set together with use_dacm")
            if self.modality == "eye":
                raise ValueError("dacm_replacement needs the facial stream")

    @property
    def d_k(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def direction_kind(self) -> str | None:
        if self.use_dacm:
            return "dacm"
        return self.dacm_replacement

    @property
    def classifier_in(self) -> int:
        if self.modality != "both":
            return self.embed_dim
        if not self.use_cefam:
            return 2 * self.embed_dim
        if self.guidance_mode == "bidirectional":
            return 2 * self.embed_dim
        return 2 * self.embed_dim if self.global_enhancement else self.embed_dim


def unimodal_config(modality: str, **overrides) -> FusionConfig:
    """Table-2 style single-stream variants."""
    defaults = dict(
        modality=modality, guidance_mode=None, use_cefam=False,
        global_enhancement=False, use_dacm=(modality == "face"),
    )
    defaults.update(overrides)
    return FusionConfig(**defaults)


def model_variant(name: str, **overrides) -> FusionConfig:
    """The four module-ablation variants: 'I' .. 'IV'."""
    flags = {
        "I": dict(use_dacm=False, use_cefam=False, guidance_mode=None,
                  global_enhancement=False),
        "II": dict(use_dacm=True, use_cefam=False, guidance_mode=None,
                   global_enhancement=False),
        "III": dict(use_dacm=False, use_cefam=True),
        "IV": dict(use_dacm=True, use_cefam=True),
    }
    if name not in flags:
        raise ValueError(f"unknown model variant {name!r}")
    cfg = dict(flags[name])
    cfg.update(overrides)
    return FusionConfig(**cfg)


class CrossAttention(Module):
    """Multi-head cross-attention with per-head projection matrices."""

    def __init__(self, embed_dim: int, num_heads: int, rng: np.random.Generator):
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ValueError(f"embed_dim {embed_dim} not divisible by {num_heads} heads")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.d_k = embed_dim // num_heads
        self.w_q = [uniform_fan_in(rng, (embed_dim, self.d_k), embed_dim)
                    for _ in range(num_heads)]
        self.w_k = [uniform_fan_in(rng, (embed_dim, self.d_k), embed_dim)
                    for _ in range(num_heads)]
        self.w_v = [uniform_fan_in(rng, (embed_dim, self.d_k), embed_dim)
                    for _ in range(num_heads)]
        self.w_o = uniform_fan_in(rng, (embed_dim, embed_dim), embed_dim)
        self.last_attn: np.ndarray | None = None

    def forward(self, query_seq: Tensor, kv_seq: Tensor) -> Tensor:
        for name, t in (("query", query_seq), ("key/value", kv_seq)):
            if t.data.shape[-1] != self.embed_dim:
                raise ShapeError(
                    f"cross-attention: {name} width {t.data.shape[-1]} != "
                    f"embedding width {self.embed_dim}"
                )
        scale = 1.0 / np.sqrt(self.d_k)
        heads = []
        attn_maps = []
        for wq, wk, wv in zip(self.w_q, self.w_k, self.w_v):
            q = query_seq @ wq
            k = kv_seq @ wk
            v = kv_seq @ wv
            scores = (q @ k.transpose(_swap_last(q.ndim))) * scale
            attn = F.softmax(scores, axis=-1)
            attn_maps.append(attn.data)
            heads.append(attn @ v)
        self.last_attn = np.stack(attn_maps)
        return cat(heads, axis=-1) @ self.w_o


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def global_enhance(eye_seq: Tensor) -> Tensor:
    """Column-wise mean + column-wise max over the token axis."""
    eye_seq = eye_seq if isinstance(eye_seq, Tensor) else Tensor(eye_seq)
    if eye_seq.data.ndim < 2:
        raise ShapeError("global_enhance: need at least (tokens, width)")
    token_axis = eye_seq.data.ndim - 2
    return eye_seq.mean(axis=token_axis) + eye_seq.max(axis=token_axis)


class ClassifierHead(Module):
    """FC -> ReLU -> dropout -> FC over the pooled fused features."""

    def __init__(self, in_dim: int, hidden: int, dropout_rate: float,
                 rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(in_dim, hidden, rng)
        self.drop = Dropout(dropout_rate, rng)
        self.fc2 = Linear(hidden, 2, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.drop(self.fc1(x).relu()))


class FusionModel(Module):
    """Assembled network for one config; forward returns class logits."""

    def __init__(self, config: FusionConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        if config.modality in ("both", "face"):
            self.face_encoder = FrameEncoder(
                config.embed_dim, rng, channels=config.facial_channels,
                direction=config.direction_kind)
        else:
            self.face_encoder = None
        if config.modality in ("both", "eye"):
            self.eye_encoder = EyeEncoder(
                config.embed_dim, rng, num_layers=config.eye_layers,
                heads=config.eye_heads)
        else:
            self.eye_encoder = None
        if config.use_cefam:
            if config.guidance_mode == "bidirectional":
                self.cross_fwd = CrossAttention(config.embed_dim, config.num_heads, rng)
                self.fuse_norm_fwd = LayerNorm(config.embed_dim)
                self.cross_rev = CrossAttention(config.embed_dim, config.num_heads, rng)
                self.fuse_norm_rev = LayerNorm(config.embed_dim)
            else:
                self.cross = CrossAttention(config.embed_dim, config.num_heads, rng)
                self.fuse_norm = LayerNorm(config.embed_dim)
        self.classifier = ClassifierHead(
            config.classifier_in, config.classifier_hidden,
            config.dropout_rate, rng)

    def forward(self, faces: Tensor | None = None,
                eyes: Tensor | None = None) -> Tensor:
        cfg = self.config
        if self.face_encoder is not None and faces is None:
            raise ValueError("this variant needs facial frames")
        if self.eye_encoder is not None and eyes is None:
            raise ValueError("this variant needs eye sequences")
        s_img = self.face_encoder(faces) if self.face_encoder is not None else None
        s_eye = self.eye_encoder(eyes) if self.eye_encoder is not None else None

        if not cfg.use_cefam:
            pooled = [s.mean(axis=1) for s in (s_img, s_eye) if s is not None]
            feats = pooled[0] if len(pooled) == 1 else cat(pooled, axis=-1)
            return self.classifier(feats)

        if cfg.guidance_mode == "face_to_eye":
            fused = self.fuse_norm(self.cross(s_img, s_eye) + s_img)
            feats = fused.mean(axis=1)
        elif cfg.guidance_mode == "eye_to_face":
            fused = self.fuse_norm(self.cross(s_eye, s_img) + s_eye)
            feats = fused.mean(axis=1)
        else:
            fwd = self.fuse_norm_fwd(self.cross_fwd(s_img, s_eye) + s_img)
            rev = self.fuse_norm_rev(self.cross_rev(s_eye, s_img) + s_eye)
            feats = cat([fwd.mean(axis=1), rev.mean(axis=1)], axis=-1)
        if cfg.global_enhancement:
            feats = cat([feats, global_enhance(s_eye)], axis=-1)
        return self.classifier(feats)

    def predict_proba(self, faces: Tensor | None = None,
                      eyes: Tensor | None = None) -> np.ndarray:
        return F.softmax(self.forward(faces=faces, eyes=eyes), axis=-1).data


def build_model(config: FusionConfig, seed: int = 0) -> FusionModel:
    """Construct a model variant; the seed fixes init and dropout masks."""
    rng = np.random.default_rng(seed)
    return FusionModel(config, rng)


def sweep_guidance_configs(embed_dims=(64, 128), head_counts=(1, 2, 4)):
    """The guidance-mode grid: modes x heads x widths, enhancement off."""
    out = []
    for mode in GUIDANCE_MODES:
        for dim in embed_dims:
            for heads in head_counts:
                out.append(replace(
                    FusionConfig(), guidance_mode=mode, embed_dim=dim,
                    num_heads=heads, global_enhancement=False))
    return out
