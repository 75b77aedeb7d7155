"""Forward-only feature encoder: 3-D conv blocks over the (time, band,
component) feature volume, patch tokenization, a transformer stack, and an
adapter MLP projecting tokens to the downstream audio-encoder width.

Inference only; there is no autodiff and no training here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ValidationError
from .sscv import SscvTensor

LN_EPS = 1e-12
WEIGHTS_MAGIC = b"SPURWGT1"
WEIGHTS_VERSION = 1


class WeightsFormatError(ValidationError):
    """Weights file has a bad magic, version, or inconsistent payload."""


class EncoderNumericsError(ValidationError):
    """Non-finite values appeared during the forward pass."""


@dataclass(frozen=True)
class EncoderConfig:
    conv_blocks: int = 2
    conv_channels: tuple[int, ...] = (8, 16)
    pool: tuple[int, int, int] = (3, 3, 3)
    patch_size: tuple[int, int] = (16, 16)
    embed_dim: int = 256
    n_layers: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    adapter_out_dim: int = 768
    max_patches: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
        object.__setattr__(self, "patch_size", tuple(int(p) for p in self.patch_size))
        counts = (
            self.conv_blocks,
            *self.conv_channels,
            self.embed_dim,
            self.n_layers,
            self.n_heads,
            self.ffn_mult,
            self.adapter_out_dim,
            self.max_patches,
        )
        if any(c < 1 for c in counts):
            raise ValidationError(f"all encoder config counts must be >= 1: {self}")
        if len(self.conv_channels) != self.conv_blocks:
            raise ValidationError(
                f"conv_channels {self.conv_channels} must list {self.conv_blocks} blocks"
            )
        if self.embed_dim % self.n_heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.pool != (3, 3, 3):
            raise ValidationError(f"pool is fixed at (3, 3, 3), got {self.pool}")
        if self.patch_size != (16, 16):
            raise ValidationError(f"patch_size is fixed at (16, 16), got {self.patch_size}")

    @property
    def patch_len(self) -> int:
        return self.patch_size[0] * self.patch_size[1]

    @property
    def ffn_dim(self) -> int:
        return self.ffn_mult * self.embed_dim


def tensor_spec(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...], str, int]]:
    """Canonical (name, shape, init kind, fan_in) list; fixes file and init order."""
    spec = []
    c_in = 1
    for k, c_out in enumerate(cfg.conv_channels):
        spec += [
            (f"conv{k}.conv1.kernel", (c_out, c_in, 1, 3, 3), "uniform", c_in * 9),
            (f"conv{k}.conv1.bias", (c_out,), "zero", 0),
            (f"conv{k}.conv2.kernel", (c_out, c_out, 1, 3, 3), "uniform", c_out * 9),
            (f"conv{k}.conv2.bias", (c_out,), "zero", 0),
            (f"conv{k}.ln.scale", (c_out,), "one", 0),
            (f"conv{k}.ln.offset", (c_out,), "zero", 0),
        ]
        c_in = c_out
    d = cfg.embed_dim
    spec += [
        ("patch.weight", (d, cfg.patch_len), "uniform", cfg.patch_len),
        ("patch.bias", (d,), "zero", 0),
        ("patch.pos", (cfg.max_patches, d), "uniform", d),
    ]
    for layer in range(cfg.n_layers):
        spec += [
            (f"layer{layer}.ln.scale", (d,), "one", 0),
            (f"layer{layer}.ln.offset", (d,), "zero", 0),
            (f"layer{layer}.attn.wq", (d, d), "uniform", d),
            (f"layer{layer}.attn.wk", (d, d), "uniform", d),
            (f"layer{layer}.attn.wv", (d, d), "uniform", d),
            (f"layer{layer}.attn.wo", (d, d), "uniform", d),
            (f"layer{layer}.ffn.w1", (cfg.ffn_dim, d), "uniform", d),
            (f"layer{layer}.ffn.b1", (cfg.ffn_dim,), "zero", 0),
            (f"layer{layer}.ffn.w2", (d, cfg.ffn_dim), "uniform", cfg.ffn_dim),
            (f"layer{layer}.ffn.b2", (d,), "zero", 0),
        ]
    spec += [
        ("adapter.w1", (d, d), "uniform", d),
        ("adapter.b1", (d,), "zero", 0),
        ("adapter.w2", (cfg.adapter_out_dim, d), "uniform", d),
        ("adapter.b2", (cfg.adapter_out_dim,), "zero", 0),
    ]
    return spec


@dataclass(frozen=True)
class EncoderWeights:
    """Named float32 tensors in canonical order (see tensor_spec)."""

    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        for name, t in self.tensors.items():
            if t.dtype != np.float32:
                raise ValidationError(f"tensor {name} must be float32, got {t.dtype}")
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"tensor {name} contains non-finite values")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def conv_block(self, k: int) -> "ConvBlockWeights":
        return ConvBlockWeights(
            kernel1=self[f"conv{k}.conv1.kernel"],
            bias1=self[f"conv{k}.conv1.bias"],
            kernel2=self[f"conv{k}.conv2.kernel"],
            bias2=self[f"conv{k}.conv2.bias"],
            ln_scale=self[f"conv{k}.ln.scale"],
            ln_offset=self[f"conv{k}.ln.offset"],
        )


@dataclass(frozen=True)
class ConvBlockWeights:
    kernel1: np.ndarray
    bias1: np.ndarray
    kernel2: np.ndarray
    bias2: np.ndarray
    ln_scale: np.ndarray
    ln_offset: np.ndarray


@dataclass(frozen=True)
class TokenSequence:
    """Adapter output: one row per patch token, width adapter_out_dim."""

    tokens: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ValidationError(f"tokens must be 2-D, got shape {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValidationError("token sequence contains non-finite values")


@dataclass
class EncoderTrace:
    """Instrumentation hook: forward passes record normalization and attention
    statistics here when a trace is supplied."""

    ln_mean_abs: list[float] = field(default_factory=list)
    ln_var_dev: list[float] = field(default_factory=list)
    attn_rowsum_dev: list[float] = field(default_factory=list)
    attn_prob_min: float = np.inf
    attn_prob_max: float = -np.inf

    def record_ln(self, normalized: np.ndarray, axis: int) -> None:
        self.ln_mean_abs.append(float(np.abs(normalized.mean(axis=axis)).max()))
        self.ln_var_dev.append(float(np.abs(normalized.var(axis=axis) - 1.0).max()))

    def record_attention(self, probs: np.ndarray) -> None:
        self.attn_rowsum_dev.append(float(np.abs(probs.sum(axis=-1) - 1.0).max()))
        self.attn_prob_min = min(self.attn_prob_min, float(probs.min()))
        self.attn_prob_max = max(self.attn_prob_max, float(probs.max()))


def init_weights(cfg: EncoderConfig, seed: int) -> EncoderWeights:
    """Deterministic initialization from a 64-bit PRNG (numpy PCG64).

    Linear and conv weights are uniform on the open interval
    (-1/sqrt(fan_in), +1/sqrt(fan_in)); biases 0; layer-norm scale 1, offset 0.
    Positional embeddings draw like a linear map with fan_in = embed_dim.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind, fan_in in tensor_spec(cfg):
        if kind == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            # float32 rounding may land on the bound itself; keep the interval open
            lim = np.nextafter(np.float32(bound), np.float32(0))
            tensors[name] = np.clip(w, -lim, lim)
        elif kind == "one":
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return EncoderWeights(tensors)


def validate_weights(w: EncoderWeights, cfg: EncoderConfig) -> None:
    """Check that the weight set matches the config, reporting the shape diff."""
    expected = {name: shape for name, shape, _, _ in tensor_spec(cfg)}
    diffs = []
    for name, shape in expected.items():
        if name not in w.tensors:
            diffs.append(f"missing {name} {shape}")
        elif w.tensors[name].shape != shape:
            diffs.append(f"{name}: weights {w.tensors[name].shape} != config {shape}")
    for name in w.tensors:
        if name not in expected:
            diffs.append(f"unexpected tensor {name}")
    if diffs:
        raise ValidationError("weights do not match encoder config: " + "; ".join(diffs))


# ---------------------------------------------------------------------------
# Forward passes (float64 compute over float32 weights)
# ---------------------------------------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-form) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _conv3d_same(z: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded conv with kernel extents (1, 3, 3) over a (C, T, B, D) volume."""
    c_out, c_in = kernel.shape[:2]
    _, t, b, d = z.shape
    zp = np.pad(z, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(zp, (1, 3, 3), axis=(1, 2, 3))
    # (C_in, T, B, D, 1, 3, 3) -> one matmul: (T*B*D, C_in*9) @ (C_in*9, C_out)
    cols = np.ascontiguousarray(windows.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(-1, c_in * 9)
    kmat = kernel.reshape(c_out, c_in * 9).astype(np.float64)
    out = (cols @ kmat.T).reshape(t, b, d, c_out).transpose(3, 0, 1, 2)
    return out + bias.astype(np.float64)[:, None, None, None]


def _maxpool3_ceil(z: np.ndarray, size: int = 3) -> np.ndarray:
    """Non-overlapping max pool with ceil-mode edge handling (pad by -inf)."""
    c, t, b, d = z.shape
    pad = [(-n) % size for n in (t, b, d)]
    zp = np.pad(
        z, ((0, 0), (0, pad[0]), (0, pad[1]), (0, pad[2])), constant_values=-np.inf
    )
    zp = zp.reshape(
        c, (t + pad[0]) // size, size, (b + pad[1]) // size, size, (d + pad[2]) // size, size
    )
    return zp.max(axis=(2, 4, 6))


def _channel_layer_norm(
    z: np.ndarray, scale: np.ndarray, offset: np.ndarray, trace: EncoderTrace | None
) -> np.ndarray:
    """Normalize the channel vector at each (t, b, d) location."""
    mean = z.mean(axis=0, keepdims=True)
    var = z.var(axis=0, keepdims=True)
    normalized = (z - mean) / np.sqrt(var + LN_EPS)
    if trace is not None:
        trace.record_ln(normalized, axis=0)
    s = scale.astype(np.float64)[:, None, None, None]
    o = offset.astype(np.float64)[:, None, None, None]
    return s * normalized + o


def _token_layer_norm(
    h: np.ndarray, scale: np.ndarray, offset: np.ndarray, trace: EncoderTrace | None
) -> np.ndarray:
    mean = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    normalized = (h - mean) / np.sqrt(var + LN_EPS)
    if trace is not None:
        trace.record_ln(normalized, axis=1)
    return normalized * scale.astype(np.float64) + offset.astype(np.float64)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def conv_block_forward(
    z: np.ndarray, block: ConvBlockWeights, trace: EncoderTrace | None = None
) -> np.ndarray:
    """One conv block: conv + ReLU, conv + channel LN, then 3x3x3 max pool."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4 or z.shape[0] != block.kernel1.shape[1]:
        raise ValidationError(
            f"conv block expects (C_in={block.kernel1.shape[1]}, T, B, D), got {z.shape}"
        )
    hidden = np.maximum(_conv3d_same(z, block.kernel1, block.bias1), 0.0)
    pre_pool = _channel_layer_norm(
        _conv3d_same(hidden, block.kernel2, block.bias2), block.ln_scale, block.ln_offset, trace
    )
    return _maxpool3_ceil(pre_pool)


def patchify(
    z: np.ndarray, w: EncoderWeights, cfg: EncoderConfig, trace: EncoderTrace | None = None
) -> np.ndarray:
    """Cut the conv output into non-overlapping 16x16 patches and embed them.

    The (C, T, B, D) volume becomes a (T, C*B*D) time-by-feature grid,
    zero-padded to multiples of the patch size; patches are taken row-major
    (time-major), flattened row-major, projected, and given a learned
    positional embedding per patch index.
    """
    c, t, b, d = z.shape
    grid = z.transpose(1, 0, 2, 3).reshape(t, c * b * d)
    if grid.size == 0:
        raise ValidationError(f"patch grid is empty for conv output shape {z.shape}")
    ph, pw = cfg.patch_size
    n_rows = -(-grid.shape[0] // ph)
    n_cols = -(-grid.shape[1] // pw)
    padded = np.pad(
        grid, ((0, n_rows * ph - grid.shape[0]), (0, n_cols * pw - grid.shape[1]))
    )
    patches = (
        padded.reshape(n_rows, ph, n_cols, pw).transpose(0, 2, 1, 3).reshape(-1, ph * pw)
    )
    n_patches = patches.shape[0]
    if n_patches > cfg.max_patches:
        raise ValidationError(
            f"{n_patches} patches exceed max_patches={cfg.max_patches}; "
            f"raise max_patches or shorten the input"
        )
    wp = w["patch.weight"].astype(np.float64)
    return patches @ wp.T + w["patch.bias"] + w["patch.pos"][:n_patches]


def transformer_forward(
    tokens: np.ndarray, w: EncoderWeights, cfg: EncoderConfig, trace: EncoderTrace | None = None
) -> np.ndarray:
    """Transformer stack; each layer feeds the attention+residual sum straight
    into the feed-forward (there is deliberately no second residual around it)."""
    h = np.asarray(tokens, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] != cfg.embed_dim:
        raise ValidationError(f"tokens must be (P >= 1, {cfg.embed_dim}), got {h.shape}")
    for layer in range(cfg.n_layers):
        pre = f"layer{layer}"
        normed = _token_layer_norm(h, w[f"{pre}.ln.scale"], w[f"{pre}.ln.offset"], trace)
        attended = _mha(
            normed,
            w[f"{pre}.attn.wq"],
            w[f"{pre}.attn.wk"],
            w[f"{pre}.attn.wv"],
            w[f"{pre}.attn.wo"],
            cfg.n_heads,
            trace,
        )
        summed = attended + h
        h = gelu(summed @ w[f"{pre}.ffn.w1"].T.astype(np.float64) + w[f"{pre}.ffn.b1"])
        h = h @ w[f"{pre}.ffn.w2"].T.astype(np.float64) + w[f"{pre}.ffn.b2"]
        if not np.all(np.isfinite(h)):
            raise EncoderNumericsError(f"non-finite activations after transformer layer {layer}")
    return h


def _mha(
    x: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    n_heads: int,
    trace: EncoderTrace | None,
) -> np.ndarray:
    n_tokens, dim = x.shape
    d_head = dim // n_heads
    q = (x @ wq.T.astype(np.float64)).reshape(n_tokens, n_heads, d_head).transpose(1, 0, 2)
    k = (x @ wk.T.astype(np.float64)).reshape(n_tokens, n_heads, d_head).transpose(1, 0, 2)
    v = (x @ wv.T.astype(np.float64)).reshape(n_tokens, n_heads, d_head).transpose(1, 0, 2)
    probs = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d_head))
    if trace is not None:
        trace.record_attention(probs)
    context = (probs @ v).transpose(1, 0, 2).reshape(n_tokens, dim)
    return context @ wo.T.astype(np.float64)


def adapter_forward(tokens: np.ndarray, w: EncoderWeights, cfg: EncoderConfig) -> TokenSequence:
    """Two linear layers with a GELU between, mapping tokens to adapter_out_dim."""
    h = np.asarray(tokens, dtype=np.float64)
    hidden = gelu(h @ w["adapter.w1"].T.astype(np.float64) + w["adapter.b1"])
    return TokenSequence(hidden @ w["adapter.w2"].T.astype(np.float64) + w["adapter.b2"])


def encode(
    sscv: SscvTensor,
    w: EncoderWeights,
    cfg: EncoderConfig = EncoderConfig(),
    trace: EncoderTrace | None = None,
) -> TokenSequence:
    """Full encoder pass over a feature tensor.

    The (T, B, 16) tensor enters as a single-channel (1, T, B, 16) volume so
    conv kernels span one time step and 3x3 (band, component) neighborhoods.
    """
    validate_weights(w, cfg)
    z = sscv.values[None, ...]
    for k in range(cfg.conv_blocks):
        z = conv_block_forward(z, w.conv_block(k), trace)
    tokens = patchify(z, w, cfg, trace)
    return adapter_forward(transformer_forward(tokens, w, cfg, trace), w, cfg)


def conv_output_shape(
    cfg: EncoderConfig, n_frames: int, n_bands: int
) -> tuple[int, int, int, int]:
    """(C, T', B', D') after all conv blocks; each pool takes a ceil-div by 3."""
    t, b, d = n_frames, n_bands, 16
    for _ in range(cfg.conv_blocks):
        t, b, d = -(-t // 3), -(-b // 3), -(-d // 3)
    return cfg.conv_channels[-1], t, b, d


def token_count(cfg: EncoderConfig, n_frames: int, n_bands: int) -> int:
    """P = ceil(T'/16) * ceil(F'/16) with F' the flattened C*B'*D' feature width."""
    c, t, b, d = conv_output_shape(cfg, n_frames, n_bands)
    ph, pw = cfg.patch_size
    return -(-t // ph) * -(-(c * b * d) // pw)


# ---------------------------------------------------------------------------
# Weights file
# ---------------------------------------------------------------------------


def save_weights(w: EncoderWeights, path) -> None:
    """Write tensors in canonical order; see load_weights for the layout."""
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(w.tensors))]
    for name, tensor in w.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        parts.append(tensor.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> EncoderWeights:
    """Read a weights file: magic "SPURWGT1", u32 version, u32 tensor count,
    then per tensor u16 name length, name, u8 ndim, u64 dims, f32 payload."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise WeightsFormatError(f"{path}: truncated before header")
    if raw[:8] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {raw[:8]!r}, expected {WEIGHTS_MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    pos = 16
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
        except struct.error:
            raise WeightsFormatError(f"{path}: truncated tensor header at byte {pos}")
        n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = raw[pos : pos + 4 * n_values]
        if len(payload) < 4 * n_values:
            raise WeightsFormatError(
                f"{path}: tensor {name} header claims shape {dims} "
                f"({4 * n_values} bytes) but only {len(payload)} bytes remain"
            )
        pos += 4 * n_values
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if pos != len(raw):
        raise WeightsFormatError(f"{path}: {len(raw) - pos} trailing bytes after last tensor")
    return EncoderWeights(tensors)
