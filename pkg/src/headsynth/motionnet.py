"""Token-grid reenactment network with gated motion cross-attention.

A feature grid (N tokens of width D) passes through two stacks of four
pre-norm transformer blocks.  The first stack attends to motion tokens
expanded from the source motion vector (neutralization), the second to
tokens from the driving vector (motion injection).  Each block applies

    x += gate * cross_attention(norm(x), motion_tokens)
    x += self_attention(norm(x))
    x += mlp(norm(x))

where ``gate`` is 0 or 1 and multiplies every cross-attention output,
letting callers sever the motion pathway entirely.  Cross-attention output
projections initialize to zero, so a fresh network is an identity-preserving
residual stack: gate-on and gate-off agree exactly until training moves the
projections away from zero.

Motion vectors are 548-dimensional: expression (30) ++ lip (512) ++ eye (6).
A seeded random linear embedding stands in for a pretrained motion encoder.

Every forward helper operates on dual numbers (primal, tangent), which gives
forward-mode Jacobian-vector products through the exact code path used for
inference; ``finite_diff_jacobian_check`` compares them against central
finite differences.

Parameters serialize to a "PHI1" container: magic, six little-endian uint32
dims, then named tensors as 32-bit little-endian floats (documented in the
formats guide).  In-memory parameters are float64; saving quantizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ContractViolation, ParseError, ValidationError
from .headmodel import ExpressionCode

MOTION_DIM = 548
EXPR_SLICE = slice(0, 30)
LIP_SLICE = slice(30, 542)
EYE_SLICE = slice(542, 548)
PHI_MAGIC = b"PHI1"
LAYERNORM_EPS = 1e-5
DEFAULT_GRID_SIDE = 16


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MotionVector:
    """548-vector: expression (30) ++ lip (512) ++ eye (6)."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (MOTION_DIM,) or not np.all(np.isfinite(v)):
            raise ValidationError(f"motion vector must be a finite {MOTION_DIM}-vector")
        object.__setattr__(self, "values", v)

    @property
    def expression(self) -> np.ndarray:
        return self.values[EXPR_SLICE]

    @property
    def lip(self) -> np.ndarray:
        return self.values[LIP_SLICE]

    @property
    def eye(self) -> np.ndarray:
        return self.values[EYE_SLICE]


@dataclass(frozen=True)
class FeatureGrid:
    """Flattened token grid, one row per spatial position."""

    tokens: np.ndarray

    def __post_init__(self):
        t = _frozen(self.tokens)
        if t.ndim != 2 or not np.all(np.isfinite(t)):
            raise ValidationError("feature grid must be a finite N x D matrix")
        object.__setattr__(self, "tokens", t)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class GateSwitch:
    """Multiplies every cross-attention output by 1 (on) or 0 (off)."""

    on: bool


GATE_ON = GateSwitch(True)
GATE_OFF = GateSwitch(False)


@dataclass(frozen=True)
class PhiDims:
    token_dim: int = 64
    motion_tokens: int = 8
    heads: int = 4
    mlp_hidden: int = 256
    expand_hidden: int = 128

    def __post_init__(self):
        if min(self.token_dim, self.motion_tokens, self.heads,
               self.mlp_hidden, self.expand_hidden) < 1:
            raise ValidationError("network dims must be positive")
        if self.token_dim % self.heads:
            raise ValidationError("token_dim must divide evenly into heads")


@dataclass(frozen=True)
class AttentionParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray


@dataclass(frozen=True)
class NormParams:
    gain: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class BlockParams:
    norm_cross: NormParams
    cross: AttentionParams
    norm_self: NormParams
    self_attn: AttentionParams
    norm_mlp: NormParams
    mlp: MlpParams


@dataclass(frozen=True)
class SubmoduleParams:
    expand: MlpParams
    blocks: tuple


@dataclass(frozen=True)
class PhiParams:
    de: SubmoduleParams
    re: SubmoduleParams
    dims: PhiDims = field(default_factory=PhiDims)


# ---------------------------------------------------------------------------
# parameter plumbing

_ATTN_FIELDS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
_LAYER_FIELDS = {
    "norm_cross": ("gain", "bias"),
    "cross": _ATTN_FIELDS,
    "norm_self": ("gain", "bias"),
    "self": _ATTN_FIELDS,
    "norm_mlp": ("gain", "bias"),
    "mlp": ("w1", "b1", "w2", "b2"),
}
_BLOCK_ATTR = {"self": "self_attn"}


def _sub_tensors(name: str, sub: SubmoduleParams) -> dict:
    out = {}
    for f in ("w1", "b1", "w2", "b2"):
        out[f"{name}.expand.{f}"] = getattr(sub.expand, f)
    for i, blk in enumerate(sub.blocks):
        for layer, fields in _LAYER_FIELDS.items():
            obj = getattr(blk, _BLOCK_ATTR.get(layer, layer))
            for f in fields:
                out[f"{name}.block{i}.{layer}.{f}"] = getattr(obj, f)
    return out


def named_tensors(params: PhiParams) -> dict:
    """Flat name -> array view of every learnable tensor."""
    return {**_sub_tensors("de", params.de), **_sub_tensors("re", params.re)}


def replace_tensor(params: PhiParams, name: str, value: np.ndarray) -> PhiParams:
    """Functional single-tensor update (used by finite-difference probes)."""
    tensors = named_tensors(params)
    if name not in tensors:
        raise ContractViolation(f"unknown tensor {name!r}")
    if tensors[name].shape != np.shape(value):
        raise ContractViolation(f"shape mismatch for {name!r}")
    tensors = dict(tensors)
    tensors[name] = np.asarray(value, dtype=np.float64)
    return _params_from_tensors(tensors, params.dims)


def _params_from_tensors(tensors: dict, dims: PhiDims) -> PhiParams:
    def sub(name):
        expand = MlpParams(*(tensors[f"{name}.expand.{f}"]
                             for f in ("w1", "b1", "w2", "b2")))
        blocks = []
        for i in range(4):
            def layer(kind, cls):
                vals = (tensors[f"{name}.block{i}.{kind}.{f}"]
                        for f in _LAYER_FIELDS[kind])
                return cls(*vals)
            blocks.append(BlockParams(
                layer("norm_cross", NormParams), layer("cross", AttentionParams),
                layer("norm_self", NormParams), layer("self", AttentionParams),
                layer("norm_mlp", NormParams), layer("mlp", MlpParams)))
        return SubmoduleParams(expand, tuple(blocks))

    return PhiParams(sub("de"), sub("re"), dims)


def init_phi(dims: PhiDims = PhiDims(), seed: int = 0) -> PhiParams:
    """Seeded init: weights uniform +-1/sqrt(fan_in), biases and norms neutral.

    Cross-attention output projections (wo, bo) are written as exact zeros and
    consume no random draws.  Draw order: de then re; expand w1, w2; then per
    block cross wq/wk/wv, self wq/wk/wv/wo, mlp w1/w2.
    """
    rng = np.random.default_rng(seed)
    d, m = dims.token_dim, dims.motion_tokens

    def draw(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    def attn(zero_out):
        wo = np.zeros((d, d)) if zero_out else draw(d, d)
        return AttentionParams(draw(d, d), np.zeros(d), draw(d, d), np.zeros(d),
                               draw(d, d), np.zeros(d), wo, np.zeros(d))

    def sub():
        expand = MlpParams(draw(dims.expand_hidden, MOTION_DIM),
                           np.zeros(dims.expand_hidden),
                           draw(m * d, dims.expand_hidden), np.zeros(m * d))
        blocks = tuple(
            BlockParams(NormParams(np.ones(d), np.zeros(d)), attn(zero_out=True),
                        NormParams(np.ones(d), np.zeros(d)), attn(zero_out=False),
                        NormParams(np.ones(d), np.zeros(d)),
                        MlpParams(draw(dims.mlp_hidden, d), np.zeros(dims.mlp_hidden),
                                  draw(d, dims.mlp_hidden), np.zeros(d)))
            for _ in range(4))
        return SubmoduleParams(expand, blocks)

    return PhiParams(sub(), sub(), dims)


# ---------------------------------------------------------------------------
# dual-number forward helpers: every value is a (primal, tangent) pair

def _const(p):
    return (np.asarray(p, dtype=np.float64), np.zeros_like(p, dtype=np.float64))


def _d_add(a, b):
    return (a[0] + b[0], a[1] + b[1])


def _d_linear(x, w, b):
    # x: (..., in), w: (out, in), b: (out,)
    return (x[0] @ w[0].T + b[0], x[1] @ w[0].T + x[0] @ w[1].T + b[1])


def _d_gelu(x):
    p, t = x
    cdf = 0.5 * (1.0 + erf(p / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * p * p) / np.sqrt(2.0 * np.pi)
    return (p * cdf, t * (cdf + p * pdf))


def _d_layernorm(x, gain, bias):
    p, t = x
    mu = p.mean(axis=-1, keepdims=True)
    dmu = t.mean(axis=-1, keepdims=True)
    xc, dxc = p - mu, t - dmu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    dvar = 2.0 * (xc * dxc).mean(axis=-1, keepdims=True)
    sig = np.sqrt(var + LAYERNORM_EPS)
    dsig = dvar / (2.0 * sig)
    y = xc / sig
    dy = dxc / sig - xc * dsig / (sig * sig)
    return (gain[0] * y + bias[0], gain[1] * y + gain[0] * dy + bias[1])


def _d_softmax(z):
    p, t = z
    s = np.exp(p - p.max(axis=-1, keepdims=True))
    s /= s.sum(axis=-1, keepdims=True)
    ds = s * (t - (s * t).sum(axis=-1, keepdims=True))
    return (s, ds)


def _split_heads(x, heads):
    p, t = x
    n, d = p.shape
    shape = (n, heads, d // heads)
    return (p.reshape(shape).swapaxes(0, 1), t.reshape(shape).swapaxes(0, 1))


def _d_attention(q, kv, prm, heads):
    """Scaled dot-product attention on dual pairs; prm fields are dual pairs."""
    d_head = q[0].shape[-1] // heads
    qh = _split_heads(_d_linear(q, prm["wq"], prm["bq"]), heads)
    kh = _split_heads(_d_linear(kv, prm["wk"], prm["bk"]), heads)
    vh = _split_heads(_d_linear(kv, prm["wv"], prm["bv"]), heads)
    scale = 1.0 / np.sqrt(d_head)
    logits = (qh[0] @ kh[0].swapaxes(-1, -2) * scale,
              (qh[1] @ kh[0].swapaxes(-1, -2)
               + qh[0] @ kh[1].swapaxes(-1, -2)) * scale)
    w = _d_softmax(logits)
    mixed = (w[0] @ vh[0], w[1] @ vh[0] + w[0] @ vh[1])
    n = q[0].shape[0]
    merged = (mixed[0].swapaxes(0, 1).reshape(n, -1),
              mixed[1].swapaxes(0, 1).reshape(n, -1))
    return _d_linear(merged, prm["wo"], prm["bo"])


def _d_mlp(x, prm):
    h = _d_gelu(_d_linear(x, prm["w1"], prm["b1"]))
    return _d_linear(h, prm["w2"], prm["b2"])


def _layer_duals(tensors, prefix, fields):
    return {f: tensors[f"{prefix}.{f}"] for f in fields}


def _d_expand(tensors, name, v, dims):
    prm = _layer_duals(tensors, f"{name}.expand", ("w1", "b1", "w2", "b2"))
    tokens = _d_mlp(v, prm)
    shape = (dims.motion_tokens, dims.token_dim)
    return (tokens[0].reshape(shape), tokens[1].reshape(shape))


def _d_block(tensors, prefix, x, motion, gate, heads):
    norm = _layer_duals(tensors, f"{prefix}.norm_cross", ("gain", "bias"))
    if gate.on:
        ca = _d_attention(_d_layernorm(x, norm["gain"], norm["bias"]),
                          motion, _layer_duals(tensors, f"{prefix}.cross",
                                               _ATTN_FIELDS), heads)
        x = _d_add(x, ca)
    norm = _layer_duals(tensors, f"{prefix}.norm_self", ("gain", "bias"))
    y = _d_layernorm(x, norm["gain"], norm["bias"])
    x = _d_add(x, _d_attention(y, y, _layer_duals(tensors, f"{prefix}.self",
                                                  _ATTN_FIELDS), heads))
    norm = _layer_duals(tensors, f"{prefix}.norm_mlp", ("gain", "bias"))
    x = _d_add(x, _d_mlp(_d_layernorm(x, norm["gain"], norm["bias"]),
                         _layer_duals(tensors, f"{prefix}.mlp",
                                      ("w1", "b1", "w2", "b2"))))
    return x


def _d_phi(tensors, dims, x, v_s, v_d, gate):
    m = _d_expand(tensors, "de", v_s, dims)
    for i in range(4):
        x = _d_block(tensors, f"de.block{i}", x, m, gate, dims.heads)
    m = _d_expand(tensors, "re", v_d, dims)
    for i in range(4):
        x = _d_block(tensors, f"re.block{i}", x, m, gate, dims.heads)
    return x


def _check_grid(params: PhiParams, f: FeatureGrid):
    if f.width != params.dims.token_dim:
        raise ContractViolation(
            f"feature width {f.width} != token_dim {params.dims.token_dim}")


# ---------------------------------------------------------------------------
# public forward API

def expand_motion(params: MlpParams, v: MotionVector, dims: PhiDims) -> np.ndarray:
    """Two-layer MLP turning one motion vector into motion_tokens x token_dim."""
    if params.w1.shape[1] != MOTION_DIM:
        raise ContractViolation("expansion weights do not accept a motion vector")
    if params.w2.shape[0] != dims.motion_tokens * dims.token_dim:
        raise ContractViolation("expansion output does not match token layout")
    duals = {f"x.expand.{k}": _const(getattr(params, k))
             for k in ("w1", "b1", "w2", "b2")}
    out = _d_expand(duals, "x", _const(v.values), dims)
    return out[0]


def attention(q: np.ndarray, kv: np.ndarray, params: AttentionParams,
              heads: int = 4) -> np.ndarray:
    """Multi-head scaled dot-product attention: q rows attend to kv rows."""
    q = np.asarray(q, dtype=np.float64)
    kv = np.asarray(kv, dtype=np.float64)
    if q.ndim != 2 or kv.ndim != 2 or q.shape[1] % heads:
        raise ContractViolation("attention expects 2-d inputs, width % heads == 0")
    duals = {f: _const(getattr(params, f)) for f in _ATTN_FIELDS}
    return _d_attention(_const(q), _const(kv), duals, heads)[0]


def attention_weights(q: np.ndarray, kv: np.ndarray, params: AttentionParams,
                      heads: int = 4) -> np.ndarray:
    """Per-head softmax weights (heads, N, M) the attention op mixes with."""
    q = np.asarray(q, dtype=np.float64)
    kv = np.asarray(kv, dtype=np.float64)
    d_head = q.shape[1] // heads
    qh = _split_heads(_const(q @ params.wq.T + params.bq), heads)[0]
    kh = _split_heads(_const(kv @ params.wk.T + params.bk), heads)[0]
    logits = qh @ kh.swapaxes(-1, -2) / np.sqrt(d_head)
    s = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return s / s.sum(axis=-1, keepdims=True)


def phi_forward(params: PhiParams, f: FeatureGrid, v_source: MotionVector,
                v_driving: MotionVector, gate: GateSwitch = GATE_ON) -> FeatureGrid:
    """Neutralize with v_source, then re-animate with v_driving."""
    _check_grid(params, f)
    tensors = {k: _const(v) for k, v in named_tensors(params).items()}
    out = _d_phi(tensors, params.dims, _const(f.tokens),
                 _const(v_source.values), _const(v_driving.values), gate)
    return FeatureGrid(out[0])


def phi_jvp(params: PhiParams, f: FeatureGrid, v_source: MotionVector,
            v_driving: MotionVector, name: str, direction: np.ndarray,
            gate: GateSwitch = GATE_ON):
    """Forward-mode derivative of phi_forward w.r.t. one named tensor.

    Returns (output tokens, output tangent) for a perturbation of tensor
    ``name`` in ``direction``.
    """
    _check_grid(params, f)
    base = named_tensors(params)
    if name not in base:
        raise ContractViolation(f"unknown tensor {name!r}")
    if base[name].shape != np.shape(direction):
        raise ContractViolation("direction shape mismatch")
    tensors = {k: _const(v) for k, v in base.items()}
    tensors[name] = (tensors[name][0], np.asarray(direction, dtype=np.float64))
    out = _d_phi(tensors, params.dims, _const(f.tokens),
                 _const(v_source.values), _const(v_driving.values), gate)
    return out


def finite_diff_jacobian_check(params: PhiParams, f: FeatureGrid,
                               v_source: MotionVector, v_driving: MotionVector,
                               probe: np.ndarray, name: str,
                               direction: np.ndarray, step: float = 1e-4,
                               gate: GateSwitch = GATE_ON) -> float:
    """Relative error between the analytic JVP and a central finite difference.

    ``probe`` is a fixed linear functional (same shape as the output tokens);
    the scalar under test is sum(probe * phi_forward(...)).
    """
    probe = np.asarray(probe, dtype=np.float64)
    _, tangent = phi_jvp(params, f, v_source, v_driving, name, direction, gate)
    analytic = float(np.sum(probe * tangent))
    base = named_tensors(params)[name]
    hi = replace_tensor(params, name, base + step * direction)
    lo = replace_tensor(params, name, base - step * direction)
    f_hi = float(np.sum(probe * phi_forward(hi, f, v_source, v_driving, gate).tokens))
    f_lo = float(np.sum(probe * phi_forward(lo, f, v_source, v_driving, gate).tokens))
    numeric = (f_hi - f_lo) / (2.0 * step)
    scale = max(abs(analytic), abs(numeric), 1e-12)
    return abs(analytic - numeric) / scale


# ---------------------------------------------------------------------------
# synthetic motion embedding

def synth_motion_vector(beta: ExpressionCode, gamma_eye: np.ndarray,
                        gamma_jaw: np.ndarray, seed: int = 0) -> MotionVector:
    """Seeded random linear embedding of (expression, jaw, eye) codes.

    Blocks: expression <- W_e beta + b_e; lip <- W_l [beta; jaw] + b_l;
    eye <- W_y eye + b_y.  Weights are standard normal scaled by 1/sqrt(fan_in)
    and biases standard normal, drawn in that order from default_rng(seed), so
    zero codes return the embedding's bias vector.
    """
    b = np.asarray(beta.values, dtype=np.float64)
    eye = np.asarray(gamma_eye, dtype=np.float64).reshape(3)
    jaw = np.asarray(gamma_jaw, dtype=np.float64).reshape(3)
    rng = np.random.default_rng(seed)

    def block(dim, inp):
        w = rng.normal(size=(dim, len(inp))) / np.sqrt(len(inp))
        bias = rng.normal(size=dim)
        return w @ inp + bias

    parts = [block(30, b), block(512, np.concatenate([b, jaw])), block(6, eye)]
    return MotionVector(np.concatenate(parts))


def synth_motion_bias(expr_dim: int, seed: int = 0) -> np.ndarray:
    """The embedding of all-zero codes (its bias vector)."""
    zero = ExpressionCode.zeros(expr_dim)
    return synth_motion_vector(zero, np.zeros(3), np.zeros(3), seed).values


# ---------------------------------------------------------------------------
# PHI1 container

def save_phi(params: PhiParams, path) -> None:
    """Write the PHI1 container (quantizes tensors to little-endian f32)."""
    d = params.dims
    blob = [PHI_MAGIC, struct.pack("<6I", d.token_dim, d.motion_tokens, d.heads,
                                   d.mlp_hidden, d.expand_hidden, MOTION_DIM)]
    tensors = named_tensors(params)
    blob.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        raw = name.encode()
        arr = tensors[name]
        blob.append(struct.pack("<H", len(raw)))
        blob.append(raw)
        blob.append(struct.pack("<B", arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_phi(path) -> PhiParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PHI_MAGIC:
        raise ParseError("not a PHI1 file")
    try:
        dims_raw = struct.unpack_from("<6I", data, 4)
        if dims_raw[5] != MOTION_DIM:
            raise ParseError(f"unsupported motion dimension {dims_raw[5]}")
        dims = PhiDims(*dims_raw[:5])
        (count,), off = struct.unpack_from("<I", data, 28), 32
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = 4 * int(np.prod(shape, dtype=np.int64))
            payload = data[off:off + size]
            if len(payload) != size:
                raise ParseError("truncated tensor payload")
            off += size
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(
                np.float64).reshape(shape)
    except struct.error as exc:
        raise ParseError("truncated PHI1 header") from exc
    try:
        return _params_from_tensors(tensors, dims)
    except KeyError as exc:
        raise ParseError(f"missing tensor {exc.args[0]!r}") from exc
