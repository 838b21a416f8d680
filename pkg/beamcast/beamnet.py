"""
Multimodal beam predictor
CNN image branch, Transformer branch over the 8 GPS/IMU features, cross-attention
fusion (image queries, structured keys/values) and a two-layer beam classifier
"""

import logging
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Optional, Union

import numpy as np

from beamcast.airsim import STRUCT_DIM
from beamcast.errors import ConfigurationError, DimensionError
from beamcast.numcore import (
    BatchNormStats,
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    dropout,
    get_default_dtype,
    layernorm,
    linear,
    matmul,
    maxpool2d,
    relu,
    softmax,
)

logger = logging.getLogger(__name__)

STRUCT_TOKEN_MODES = ("single", "per_feature")
FUSION_MODES = ("cross_attention", "concat")
NUM_CONV_BLOCKS = 4


def _scaled(width: int, factor: Fraction) -> int:
    return max(1, int(Fraction(width) * factor))


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture hyperparameters.

    Widths given here are nominal; every width (conv channels, d and the
    hidden sizes) is multiplied by `scale_factor` before use. Unset hidden
    sizes default to 4d (encoder FFN), 2d (fusion FFN) and d (classifier).
    """

    image_size: int = 224
    conv_channels: tuple[int, ...] = (64, 128, 256, 512)
    embed_dim: int = 512
    num_heads: int = 8
    num_encoder_layers: int = 2
    ffn_hidden: Optional[int] = None
    fusion_hidden: Optional[int] = None
    classifier_hidden: Optional[int] = None
    cross_heads: Optional[int] = None
    num_beams: int = 64
    dropout: float = 0.5
    scale_factor: Fraction = Fraction(1)
    struct_tokens: str = "single"
    fusion_mode: str = "cross_attention"
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "scale_factor", Fraction(self.scale_factor).limit_denominator(1 << 16))
        if self.image_size <= 0 or self.image_size % 16:
            raise ConfigurationError(f"must be a positive multiple of 16, got {self.image_size}", "model.image_size")
        if len(self.conv_channels) != NUM_CONV_BLOCKS:
            raise ConfigurationError(f"need {NUM_CONV_BLOCKS} values, got {len(self.conv_channels)}", "model.conv_channels")
        if any(b <= a for a, b in zip(self.conv_channels, self.conv_channels[1:])) or self.conv_channels[0] < 1:
            raise ConfigurationError(f"must be positive and strictly increasing, got {self.conv_channels}", "model.conv_channels")
        if self.scale_factor <= 0:
            raise ConfigurationError(f"must be > 0, got {self.scale_factor}", "model.scale_factor")
        for name in ("embed_dim", "num_heads", "num_encoder_layers", "num_beams"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, name)}", f"model.{name}")
        for name in ("ffn_hidden", "fusion_hidden", "classifier_hidden", "cross_heads"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
                raise ConfigurationError(f"must be unset or an integer >= 1, got {value!r}", f"model.{name}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"must be in [0, 1), got {self.dropout}", "model.dropout")
        if self.struct_tokens not in STRUCT_TOKEN_MODES:
            raise ConfigurationError(f"must be one of {STRUCT_TOKEN_MODES}", "model.struct_tokens")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"must be one of {FUSION_MODES}", "model.fusion_mode")
        if not self.norm_eps > 0:
            raise ConfigurationError(f"must be > 0, got {self.norm_eps}", "model.norm_eps")
        if self.d % self.num_heads:
            raise ConfigurationError(f"embed width {self.d} not divisible by {self.num_heads} heads", "model.num_heads")
        if self.d % self.n_cross_heads:
            raise ConfigurationError(f"embed width {self.d} not divisible by {self.n_cross_heads} heads", "model.cross_heads")
        scaled = self.channels
        if any(b <= a for a, b in zip(scaled, scaled[1:])):
            raise ConfigurationError(f"scaled channels {scaled} are not strictly increasing", "model.scale_factor")

    # ----------------------------------------------------------- effective widths
    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(_scaled(c, self.scale_factor) for c in self.conv_channels)

    @property
    def d(self) -> int:
        return _scaled(self.embed_dim, self.scale_factor)

    @property
    def d_ffn(self) -> int:
        return _scaled(self.ffn_hidden, self.scale_factor) if self.ffn_hidden else 4 * self.d

    @property
    def d_fusion(self) -> int:
        return _scaled(self.fusion_hidden, self.scale_factor) if self.fusion_hidden else 2 * self.d

    @property
    def d_classifier(self) -> int:
        return _scaled(self.classifier_hidden, self.scale_factor) if self.classifier_hidden else self.d

    @property
    def n_cross_heads(self) -> int:
        return self.cross_heads or self.num_heads

    @property
    def final_map(self) -> int:
        return self.image_size // 16

    @property
    def num_struct_tokens(self) -> int:
        return STRUCT_DIM if self.struct_tokens == "per_feature" else 1

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["conv_channels"] = list(self.conv_channels)
        data["scale_factor"] = str(self.scale_factor)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        data = dict(data)
        if "conv_channels" in data:
            data["conv_channels"] = tuple(data["conv_channels"])
        if "scale_factor" in data:
            data["scale_factor"] = Fraction(str(data["scale_factor"]))
        return cls(**data)


FULL_MODEL = ModelConfig()
DESK_MODEL = ModelConfig(image_size=64, scale_factor=Fraction(1, 8))


# =========================================================================== parameters
@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # he, xavier, zeros, ones
    fan: tuple[int, int] = (1, 1)


def _attention_specs(prefix: str, d: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.{w}", (d, d), "xavier", (d, d)) for w in ("w_q", "w_k", "w_v", "w_o")]


def _ln_specs(prefix: str, width: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.gamma", (width,), "ones"), ParamSpec(f"{prefix}.beta", (width,), "zeros")]


def parameter_specs(config: ModelConfig) -> list[ParamSpec]:
    """Every learnable tensor in creation order"""
    specs: list[ParamSpec] = []
    d = config.d
    c_in = 3
    for i, c_out in enumerate(config.channels, start=1):
        block = f"cnn.block{i}"
        specs.append(ParamSpec(f"{block}.conv.weight", (c_out, c_in, 3, 3), "he", (9 * c_in, 9 * c_out)))
        specs.append(ParamSpec(f"{block}.conv.bias", (c_out,), "zeros"))
        specs.extend(_ln_specs(f"{block}.bn", c_out))
        c_in = c_out

    flat = config.channels[-1] * config.final_map**2
    specs.append(ParamSpec("cnn.fc.weight", (flat, d), "xavier", (flat, d)))
    specs.append(ParamSpec("cnn.fc.bias", (d,), "zeros"))

    if config.struct_tokens == "single":
        specs.append(ParamSpec("struct.proj.weight", (STRUCT_DIM, d), "xavier", (STRUCT_DIM, d)))
        specs.append(ParamSpec("struct.proj.bias", (d,), "zeros"))
    else:
        specs.append(ParamSpec("struct.proj.weight", (STRUCT_DIM, d), "xavier", (1, d)))
        specs.append(ParamSpec("struct.proj.bias", (STRUCT_DIM, d), "xavier", (1, d)))

    f = config.d_ffn
    for layer in range(config.num_encoder_layers):
        prefix = f"encoder.layer{layer}"
        specs.extend(_attention_specs(f"{prefix}.attn", d))
        specs.extend(_ln_specs(f"{prefix}.ln1", d))
        specs.append(ParamSpec(f"{prefix}.ffn.w1", (d, f), "he", (d, f)))
        specs.append(ParamSpec(f"{prefix}.ffn.b1", (f,), "zeros"))
        specs.append(ParamSpec(f"{prefix}.ffn.w2", (f, d), "xavier", (f, d)))
        specs.append(ParamSpec(f"{prefix}.ffn.b2", (d,), "zeros"))
        specs.extend(_ln_specs(f"{prefix}.ln2", d))

    if config.fusion_mode == "cross_attention":
        specs.extend(_attention_specs("cross.attn", d))
        specs.extend(_ln_specs("cross.ln", d))

    h = config.d_fusion
    specs.append(ParamSpec("fusion.ffn.w1", (2 * d, h), "he", (2 * d, h)))
    specs.append(ParamSpec("fusion.ffn.b1", (h,), "zeros"))
    specs.append(ParamSpec("fusion.ffn.w2", (h, 2 * d), "xavier", (h, 2 * d)))
    specs.append(ParamSpec("fusion.ffn.b2", (2 * d,), "zeros"))

    c = config.d_classifier
    specs.append(ParamSpec("classifier.fc1.weight", (2 * d, c), "he", (2 * d, c)))
    specs.append(ParamSpec("classifier.fc1.bias", (c,), "zeros"))
    specs.append(ParamSpec("classifier.fc2.weight", (c, config.num_beams), "xavier", (c, config.num_beams)))
    specs.append(ParamSpec("classifier.fc2.bias", (config.num_beams,), "zeros"))
    return specs


def count_parameters(config: ModelConfig) -> int:
    """
    Closed-form learnable parameter count.

    With widths c_0 = 3, c_1..c_4 (scaled channels), d, f (encoder FFN),
    h (fusion FFN), c (classifier hidden), Q beams, L encoder layers and
    final map side s = S/16:

        conv        sum_i 9 c_{i-1} c_i + 3 c_i      (kernel, bias, bn gamma/beta)
        image fc    c_4 s^2 d + d
        struct      9d (single) or 16d (per_feature)
        encoder     L (4d^2 + 2df + f + 5d)
        cross       4d^2 + 2d                        (cross_attention mode only)
        fusion      4dh + h + 2d
        classifier  2dc + c + cQ + Q
    """
    ch = (3,) + config.channels
    d, f, h, c, q = config.d, config.d_ffn, config.d_fusion, config.d_classifier, config.num_beams
    s = config.final_map
    total = sum(9 * ch[i - 1] * ch[i] + 3 * ch[i] for i in range(1, len(ch)))
    total += ch[-1] * s * s * d + d
    total += 9 * d if config.struct_tokens == "single" else 16 * d
    total += config.num_encoder_layers * (4 * d * d + 2 * d * f + f + 5 * d)
    if config.fusion_mode == "cross_attention":
        total += 4 * d * d + 2 * d
    total += 4 * d * h + h + 2 * d
    total += 2 * d * c + c + c * q + q
    return total


def describe_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Per-sample shape ladder through the network, computed without running it"""
    s = config.image_size
    d = config.d
    ladder: list[tuple[str, tuple[int, ...]]] = [("image", (3, s, s))]
    for i, c in enumerate(config.channels, start=1):
        s //= 2
        ladder.append((f"cnn.block{i}", (c, s, s)))
    ladder.append(("cnn.flatten", (config.channels[-1] * s * s,)))
    ladder.append(("F_img", (d,)))
    ladder.append(("struct_input", (STRUCT_DIM,)))
    ladder.append(("H_struct^0", (config.num_struct_tokens, d)))
    for layer in range(config.num_encoder_layers):
        ladder.append((f"encoder.layer{layer}", (config.num_struct_tokens, d)))
    ladder.append(("F_struct", (d,)))
    if config.fusion_mode == "cross_attention":
        ladder.append(("cross.O", (d,)))
        ladder.append(("F'_img", (d,)))
    ladder.append(("F_fused", (2 * d,)))
    ladder.append(("classifier.hidden", (config.d_classifier,)))
    ladder.append(("logits", (config.num_beams,)))
    return ladder


@dataclass
class ModelParams:
    """Learnable tensors by name plus batchnorm running statistics"""

    config: ModelConfig
    tensors: dict[str, Tensor]
    buffers: dict[str, BatchNormStats] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.tensors

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def astype(self, dtype: Any) -> "ModelParams":
        """Deep copy in another floating dtype (e.g. float64 for gradient checks)"""
        return ModelParams(
            config=self.config,
            tensors={name: t.astype(dtype) for name, t in self.tensors.items()},
            buffers={
                name: BatchNormStats(b.running_mean.astype(dtype), b.running_var.astype(dtype), b.momentum)
                for name, b in self.buffers.items()
            },
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def buffer_arrays(self) -> dict[str, np.ndarray]:
        """Running statistics flattened to name -> array (for serialization)"""
        arrays = {}
        for name, stats in self.buffers.items():
            arrays[f"{name}.running_mean"] = stats.running_mean
            arrays[f"{name}.running_var"] = stats.running_var
        return arrays

    def load_buffer_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, stats in self.buffers.items():
            stats.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=stats.running_mean.dtype)
            stats.running_var = np.array(arrays[f"{name}.running_var"], dtype=stats.running_var.dtype)


def init_params(config: ModelConfig, seed: int = 0, dtype: Any = None) -> ModelParams:
    """
    Fresh parameters: He-uniform for layers feeding a ReLU, Xavier-uniform for
    attention projections and other linear maps, zero biases, unit norm scales.
    """
    dtype = np.dtype(dtype or get_default_dtype())
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for spec in parameter_specs(config):
        fan_in, fan_out = spec.fan
        if spec.init == "he":
            data = rng.uniform(-1.0, 1.0, spec.shape) * math.sqrt(6.0 / fan_in)
        elif spec.init == "xavier":
            data = rng.uniform(-1.0, 1.0, spec.shape) * math.sqrt(6.0 / (fan_in + fan_out))
        elif spec.init == "ones":
            data = np.ones(spec.shape)
        else:
            data = np.zeros(spec.shape)
        tensors[spec.name] = Tensor(data, requires_grad=True, dtype=dtype, name=spec.name)

    buffers = {
        f"cnn.block{i}.bn": BatchNormStats.create(c, dtype) for i, c in enumerate(config.channels, start=1)
    }
    params = ModelParams(config, tensors, buffers)
    logger.debug("Initialized %d parameters (seed=%d)", params.num_parameters(), seed)
    return params


# =========================================================================== forward
@dataclass
class ForwardTrace:
    """Optional capture of intermediate shapes and attention weights"""

    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, name: str, tensor: Tensor) -> None:
        self.shapes[name] = tuple(tensor.shape)


def _record(trace: Optional[ForwardTrace], name: str, tensor: Tensor) -> None:
    if trace is not None:
        trace.record(name, tensor)


def multi_head_attention(
    queries: Tensor,
    keys_values: Tensor,
    params: ModelParams,
    prefix: str,
    num_heads: int,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """
    softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated and projected by W_O.

    Args:
        queries: [B, Tq, d]
        keys_values: [B, Tk, d]
    """
    batch, t_q, d = queries.shape
    t_k = keys_values.shape[1]
    d_k = d // num_heads

    q = matmul(queries, params[f"{prefix}.w_q"]).reshape(batch, t_q, num_heads, d_k).permute(0, 2, 1, 3)
    k = matmul(keys_values, params[f"{prefix}.w_k"]).reshape(batch, t_k, num_heads, d_k).permute(0, 2, 3, 1)
    v = matmul(keys_values, params[f"{prefix}.w_v"]).reshape(batch, t_k, num_heads, d_k).permute(0, 2, 1, 3)

    weights = softmax(matmul(q, k) * (1.0 / math.sqrt(d_k)))  # [B, h, Tq, Tk]
    if trace is not None:
        trace.attention[prefix] = weights.data.copy()
    heads = matmul(weights, v).permute(0, 2, 1, 3).reshape(batch, t_q, d)
    return matmul(heads, params[f"{prefix}.w_o"])


def _ffn(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    hidden = relu(linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _as_batch(x: Union[Tensor, np.ndarray], ndim: int, dtype: np.dtype) -> tuple[Tensor, bool]:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x), dtype=dtype)
    if x.ndim == ndim - 1:
        return x.reshape(1, *x.shape), True
    return x, False


def cnn_forward(
    images: Union[Tensor, np.ndarray],
    params: ModelParams,
    train: bool,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """
    Image branch: four (conv3x3 -> batchnorm -> relu -> maxpool2x2) blocks,
    flatten, fully connected to d.

    Args:
        images: [3, S, S] or [B, 3, S, S], normalized

    Returns:
        F_img: [B, d] ([1, d] for a single image)
    """
    cfg = params.config
    x, _ = _as_batch(images, 4, params.dtype)
    if x.shape[1:] != (3, cfg.image_size, cfg.image_size):
        raise DimensionError(f"expected images [3, {cfg.image_size}, {cfg.image_size}], got {list(x.shape[1:])}")

    for i in range(1, NUM_CONV_BLOCKS + 1):
        block = f"cnn.block{i}"
        x = conv2d(x, params[f"{block}.conv.weight"], params[f"{block}.conv.bias"])
        x = batchnorm2d(
            x, params[f"{block}.bn.gamma"], params[f"{block}.bn.beta"], params.buffers[f"{block}.bn"], train, cfg.norm_eps
        )
        x = maxpool2d(relu(x))
        _record(trace, block, x)

    flat = x.reshape(x.shape[0], -1)
    f_img = linear(flat, params["cnn.fc.weight"], params["cnn.fc.bias"])
    _record(trace, "F_img", f_img)
    return f_img


def struct_tokens(structs: Tensor, params: ModelParams) -> Tensor:
    """Project [B, 8] features to the token sequence H^0 [B, T, d]"""
    cfg = params.config
    batch = structs.shape[0]
    if cfg.struct_tokens == "single":
        h0 = linear(structs, params["struct.proj.weight"], params["struct.proj.bias"])
        return h0.reshape(batch, 1, cfg.d)
    # one token per feature: s_i * w_i + e_i
    return structs.reshape(batch, STRUCT_DIM, 1) * params["struct.proj.weight"] + params["struct.proj.bias"]


def encoder_stack(tokens: Tensor, params: ModelParams, trace: Optional[ForwardTrace] = None) -> Tensor:
    """Post-norm encoder layers: H = LN(H + MHA(H)); H = LN(H + FFN(H))"""
    cfg = params.config
    h = tokens
    for layer in range(cfg.num_encoder_layers):
        prefix = f"encoder.layer{layer}"
        attended = multi_head_attention(h, h, params, f"{prefix}.attn", cfg.num_heads, trace)
        h = layernorm(h + attended, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"], cfg.norm_eps)
        h = layernorm(h + _ffn(h, params, f"{prefix}.ffn"), params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"], cfg.norm_eps)
        _record(trace, prefix, h)
    return h


def _pool_tokens(h: Tensor) -> Tensor:
    batch, tokens, d = h.shape
    return h.reshape(batch, d) if tokens == 1 else h.mean(axis=1)


def transformer_forward(
    structs: Union[Tensor, np.ndarray],
    params: ModelParams,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """
    Structured branch: linear projection to H^0 then the encoder stack.

    Args:
        structs: [8] or [B, 8], min-max scaled

    Returns:
        F_struct: [B, d]
    """
    tokens = _struct_encoding(structs, params, trace)
    return _pool_tokens(tokens)


def _struct_encoding(structs: Union[Tensor, np.ndarray], params: ModelParams, trace: Optional[ForwardTrace]) -> Tensor:
    s, _ = _as_batch(structs, 2, params.dtype)
    if s.ndim != 2 or s.shape[1] != STRUCT_DIM:
        raise DimensionError(f"structured input must have {STRUCT_DIM} features, got {list(s.shape)}")
    h0 = struct_tokens(s, params)
    _record(trace, "H_struct^0", h0)
    return encoder_stack(h0, params, trace)


def cross_attention_fuse(
    f_img: Tensor,
    struct_encoded: Tensor,
    params: ModelParams,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """
    Image features query the structured tokens; the result refines the image
    features through a residual layernorm, is concatenated with F_struct and
    passed through a residual FFN.

    Args:
        f_img: [B, d]
        struct_encoded: encoder output [B, T, d], or F_struct [B, d] (one token)

    Returns:
        F_fused: [B, 2d]
    """
    cfg = params.config
    if struct_encoded.ndim == 2:
        struct_encoded = struct_encoded.reshape(struct_encoded.shape[0], 1, struct_encoded.shape[1])
    if f_img.ndim != 2 or f_img.shape[1] != cfg.d or struct_encoded.shape[2] != cfg.d:
        raise DimensionError(
            f"fusion expects width {cfg.d}, got image {list(f_img.shape)} and struct {list(struct_encoded.shape)}"
        )
    if f_img.shape[0] != struct_encoded.shape[0]:
        raise DimensionError(f"batch mismatch: {f_img.shape[0]} images, {struct_encoded.shape[0]} structured inputs")

    batch = f_img.shape[0]
    f_struct = _pool_tokens(struct_encoded)
    if cfg.fusion_mode == "cross_attention":
        query = f_img.reshape(batch, 1, cfg.d)
        attended = multi_head_attention(query, struct_encoded, params, "cross.attn", cfg.n_cross_heads, trace)
        o = attended.reshape(batch, cfg.d)
        _record(trace, "cross.O", o)
        f_img = layernorm(f_img + o, params["cross.ln.gamma"], params["cross.ln.beta"], cfg.norm_eps)
        _record(trace, "F'_img", f_img)

    fused = concat([f_img, f_struct], axis=-1)
    fused = fused + _ffn(fused, params, "fusion.ffn")
    _record(trace, "F_fused", fused)
    return fused


def classify(
    fused: Tensor,
    params: ModelParams,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """Linear 2d -> hidden, relu, dropout (train only), linear -> Q logits"""
    cfg = params.config
    if fused.shape[-1] != 2 * cfg.d:
        raise DimensionError(f"classifier expects width {2 * cfg.d}, got {fused.shape[-1]}")
    hidden = relu(linear(fused, params["classifier.fc1.weight"], params["classifier.fc1.bias"]))
    hidden = dropout(hidden, cfg.dropout, train, rng)
    _record(trace, "classifier.hidden", hidden)
    logits = linear(hidden, params["classifier.fc2.weight"], params["classifier.fc2.bias"])
    _record(trace, "logits", logits)
    return logits


def forward(
    images: Union[Tensor, np.ndarray],
    structs: Union[Tensor, np.ndarray],
    params: ModelParams,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """
    Full model: cnn -> transformer -> fuse -> classify.

    Args:
        images: [B, 3, S, S] normalized images (or one [3, S, S])
        structs: [B, 8] scaled features (or one [8])
        train: batchnorm batch statistics and active dropout when True
        rng: dropout randomness, required in train mode when dropout > 0

    Returns:
        logits [B, Q]
    """
    f_img = cnn_forward(images, params, train, trace)
    encoded = _struct_encoding(structs, params, trace)
    if trace is not None:
        _record(trace, "F_struct", _pool_tokens(encoded))
    fused = cross_attention_fuse(f_img, encoded, params, trace=trace)
    return classify(fused, params, train, rng, trace)


def predict_topk(logits: Union[Tensor, np.ndarray], k: int) -> np.ndarray:
    """
    Indices of the k largest logits per row, descending; equal logits rank the
    lower index first.

    Returns:
        int array [B, k] (or [k] for a single row of logits)
    """
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    single = scores.ndim == 1
    scores = scores.reshape(1, -1) if single else scores
    if not 1 <= k <= scores.shape[1]:
        raise ConfigurationError(f"k must be in [1, {scores.shape[1]}], got {k}", "topk")
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return ranked[0] if single else ranked
