"""A small diffusion-transformer backbone in numpy with exact reverse-mode gradients.

Token embedding::

    z_i = Emb(A_i) + Lin([sin 2 pi k F_i, cos 2 pi k F_i]_k) + Lin(L^l) + Lin(L^a) + PosEmb_i

Conditioning ``c = TimeEmb_t(t) + TimeEmb_s(s)`` drives per-block
shift/scale/gate modulation (adaLN-Zero). Heads: atom logits and coordinates
per token, lattice lengths/angles from the mean of real tokens.

Coordinates, lengths and angles are predicted as clean data in residual form
(``F_theta = F_s + head``), so zero-initialized heads give zero velocity.
Angles enter and leave the network in radians. Everything is float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .paths import K_ELEM, MASK, PAD

__all__ = [
    "BackboneConfig",
    "BatchInput",
    "ForwardOutput",
    "NumericError",
    "SequenceLengthError",
    "init_params",
    "param_count",
    "time_features",
    "coord_features",
    "embed",
    "condition",
    "forward",
    "backward",
]

_LN_EPS = 1e-6
_GELU_C = np.sqrt(2.0 / np.pi)


class NumericError(FloatingPointError):
    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class SequenceLengthError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_n: int = 24
    d_time: int = 64
    mlp_ratio: int = 4
    time_scale: float = 1000.0
    time_clip: float = 0.9
    num_categories: int = K_ELEM
    coord_harmonics: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_time % 2:
            raise ValueError("d_time must be even")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BatchInput:
    """Padded batch. ``angles`` are radians; padded sites hold PAD and zeros."""

    atoms: np.ndarray    # (B, N) int
    frac: np.ndarray     # (B, N, 3)
    lengths: np.ndarray  # (B, 3)
    angles: np.ndarray   # (B, 3)
    t: np.ndarray        # (B,)
    s: np.ndarray        # (B,)
    mask: np.ndarray     # (B, N) bool

    @classmethod
    def from_lists(cls, atoms, frac, lengths, angles, t, s) -> "BatchInput":
        """Pad per-crystal arrays into a batch."""
        b = len(atoms)
        n_max = max(len(a) for a in atoms)
        out_atoms = np.full((b, n_max), PAD, dtype=np.int64)
        out_frac = np.zeros((b, n_max, 3))
        mask = np.zeros((b, n_max), dtype=bool)
        for i, (a, f) in enumerate(zip(atoms, frac)):
            out_atoms[i, : len(a)] = a
            out_frac[i, : len(a)] = f
            mask[i, : len(a)] = True
        return cls(
            out_atoms,
            out_frac,
            np.asarray(lengths, dtype=float).reshape(b, 3),
            np.asarray(angles, dtype=float).reshape(b, 3),
            np.broadcast_to(np.asarray(t, dtype=float), (b,)).copy(),
            np.broadcast_to(np.asarray(s, dtype=float), (b,)).copy(),
            mask,
        )


@dataclass
class ForwardOutput:
    logits: np.ndarray   # (B, N, K)
    frac: np.ndarray     # (B, N, 3) clean-coordinate prediction (not wrapped)
    lengths: np.ndarray  # (B, 3)
    angles: np.ndarray   # (B, 3) radians
    hidden: np.ndarray   # (B, N, d) final hidden states
    cache: dict


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

def _trunc_normal(rng, shape, std=0.02):
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, dt, k = cfg.d_model, cfg.d_time, cfg.num_categories
    hidden = cfg.mlp_ratio * d
    p: dict[str, np.ndarray] = {
        "atom_emb": _trunc_normal(rng, (k + 2, d)),
        "coord_w": _trunc_normal(rng, (6 * cfg.coord_harmonics, d)),
        "coord_b": np.zeros(d),
        "len_w": _trunc_normal(rng, (3, d)),
        "len_b": np.zeros(d),
        "ang_w": _trunc_normal(rng, (3, d)),
        "ang_b": np.zeros(d),
        "pos_emb": _trunc_normal(rng, (cfg.max_n, d)),
    }
    for axis in ("t", "s"):
        p[f"time_{axis}.w1"] = _trunc_normal(rng, (dt, d))
        p[f"time_{axis}.b1"] = np.zeros(d)
        p[f"time_{axis}.w2"] = _trunc_normal(rng, (d, d))
        p[f"time_{axis}.b2"] = np.zeros(d)
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        p[pre + "ada_w"] = np.zeros((d, 6 * d))
        p[pre + "ada_b"] = np.zeros(6 * d)
        p[pre + "qkv_w"] = _trunc_normal(rng, (d, 3 * d))
        p[pre + "qkv_b"] = np.zeros(3 * d)
        p[pre + "proj_w"] = _trunc_normal(rng, (d, d))
        p[pre + "proj_b"] = np.zeros(d)
        p[pre + "fc1_w"] = _trunc_normal(rng, (d, hidden))
        p[pre + "fc1_b"] = np.zeros(hidden)
        p[pre + "fc2_w"] = _trunc_normal(rng, (hidden, d))
        p[pre + "fc2_b"] = np.zeros(d)
    p["final.ada_w"] = np.zeros((d, 2 * d))
    p["final.ada_b"] = np.zeros(2 * d)
    for name, width in (("head_A", k), ("head_F", 3), ("head_Ll", 3), ("head_La", 3)):
        p[f"{name}.w"] = np.zeros((d, width))
        p[f"{name}.b"] = np.zeros(width)
    return p


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


# --------------------------------------------------------------------------
# primitive layers (forward returns output + cache; backward returns grads)
# --------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    sg = _sigmoid(x)
    return sg * (1.0 + x * (1.0 - sg))


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x):
    th = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)


def _layer_norm(x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + _LN_EPS)
    y = xc * inv
    return y, (y, inv)


def _layer_norm_back(dy, cache):
    y, inv = cache
    return inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))


def _linear_grads(x, dy, grads, w_name, b_name):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads[w_name] = grads.get(w_name, 0.0) + x2.T @ dy2
    grads[b_name] = grads.get(b_name, 0.0) + dy2.sum(axis=0)


def time_features(time, cfg: BackboneConfig) -> np.ndarray:
    """Sinusoidal features with frequencies ``10000^(-2k/d_time)``.

    Times are clamped to ``[0, time_clip]`` first so the network only sees the
    time range covered in training.
    """
    x = np.clip(np.asarray(time, dtype=float), 0.0, cfg.time_clip) * cfg.time_scale
    half = cfg.d_time // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / cfg.d_time)
    args = x[..., None] * freqs
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

def coord_features(frac, harmonics: int = 1) -> np.ndarray:
    """``[sin 2 pi k f, cos 2 pi k f]`` for ``k = 1..harmonics``; periodic, so
    continuous across the cell boundary. Shape ``(..., 6 * harmonics)``."""
    f = np.asarray(frac, dtype=float)
    ang = 2.0 * np.pi * f[..., None, :] * np.arange(1, harmonics + 1)[:, None]
    ang = ang.reshape(*f.shape[:-1], 3 * harmonics)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def embed(batch: BatchInput, params, cfg: BackboneConfig) -> np.ndarray:
    """Token embeddings ``(B, N, d)``; lattice terms broadcast to every token."""
    b, n = batch.atoms.shape
    if n > cfg.max_n:
        raise SequenceLengthError(f"sequence length {n} exceeds max_n={cfg.max_n}")
    lat = (
        batch.lengths @ params["len_w"] + params["len_b"]
        + batch.angles @ params["ang_w"] + params["ang_b"]
    )
    return (
        params["atom_emb"][batch.atoms]
        + coord_features(batch.frac, cfg.coord_harmonics) @ params["coord_w"] + params["coord_b"]
        + lat[:, None, :]
        + params["pos_emb"][None, :n]
    )


def _time_mlp(feat, params, axis):
    pre = feat @ params[f"time_{axis}.w1"] + params[f"time_{axis}.b1"]
    out = _silu(pre) @ params[f"time_{axis}.w2"] + params[f"time_{axis}.b2"]
    return out, (feat, pre)


def condition(t, s, params, cfg: BackboneConfig) -> np.ndarray:
    """``TimeEmb_t(t) + TimeEmb_s(s)``."""
    ct, _ = _time_mlp(time_features(t, cfg), params, "t")
    cs, _ = _time_mlp(time_features(s, cfg), params, "s")
    return ct + cs


def _check_finite(x, layer):
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite activation", layer)


def _attention(xm, mask, params, pre, cfg):
    b, n, d = xm.shape
    h = cfg.n_heads
    dh = d // h
    qkv = xm @ params[pre + "qkv_w"] + params[pre + "qkv_b"]
    q, k, v = (qkv[..., i * d:(i + 1) * d].reshape(b, n, h, dh).transpose(0, 2, 1, 3) for i in range(3))
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    scores = np.where(mask[:, None, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=-1, keepdims=True)
    ctx = (w @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    out = ctx @ params[pre + "proj_w"] + params[pre + "proj_b"]
    return out, (xm, q, k, v, w, ctx)


def _attention_back(dout, cache, params, pre, cfg, grads):
    xm, q, k, v, w, ctx = cache
    b, n, d = xm.shape
    h = cfg.n_heads
    dh = d // h
    _linear_grads(ctx, dout, grads, pre + "proj_w", pre + "proj_b")
    dctx = (dout @ params[pre + "proj_w"].T).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    dw = dctx @ v.transpose(0, 1, 3, 2)
    dv = w.transpose(0, 1, 3, 2) @ dctx
    dscores = w * (dw - np.sum(dw * w, axis=-1, keepdims=True)) / np.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dqkv = np.concatenate(
        [g.transpose(0, 2, 1, 3).reshape(b, n, d) for g in (dq, dk, dv)], axis=-1
    )
    _linear_grads(xm, dqkv, grads, pre + "qkv_w", pre + "qkv_b")
    return dqkv @ params[pre + "qkv_w"].T


def forward(batch: BatchInput, params, cfg: BackboneConfig) -> ForwardOutput:
    mask = np.asarray(batch.mask, dtype=bool)
    if not np.all(mask.any(axis=1)):
        raise ValueError("every crystal needs at least one real site")
    x = embed(batch, params, cfg)
    _check_finite(x, "embed")

    feat_t = time_features(batch.t, cfg)
    feat_s = time_features(batch.s, cfg)
    ct, cache_t = _time_mlp(feat_t, params, "t")
    cs, cache_s = _time_mlp(feat_s, params, "s")
    c = ct + cs
    sc = _silu(c)
    d = cfg.d_model

    blocks = []
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        mod = sc @ params[pre + "ada_w"] + params[pre + "ada_b"]
        sh1, sc1, g1, sh2, sc2, g2 = (mod[:, j * d:(j + 1) * d][:, None, :] for j in range(6))
        xn1, ln1 = _layer_norm(x)
        xm1 = xn1 * (1.0 + sc1) + sh1
        att, att_cache = _attention(xm1, mask, params, pre, cfg)
        x1 = x + g1 * att
        xn2, ln2 = _layer_norm(x1)
        xm2 = xn2 * (1.0 + sc2) + sh2
        u = xm2 @ params[pre + "fc1_w"] + params[pre + "fc1_b"]
        mlp = _gelu(u) @ params[pre + "fc2_w"] + params[pre + "fc2_b"]
        x2 = x1 + g2 * mlp
        _check_finite(x2, i)
        blocks.append((mod, xn1, ln1, att, att_cache, xn2, ln2, xm2, u, mlp))
        x = x2

    fmod = sc @ params["final.ada_w"] + params["final.ada_b"]
    fsh, fsc = fmod[:, None, :d], fmod[:, None, d:]
    xnf, lnf = _layer_norm(x)
    hidden = xnf * (1.0 + fsc) + fsh
    _check_finite(hidden, "final")

    maskf = mask.astype(float)[..., None]
    counts = maskf.sum(axis=1)
    hbar = (hidden * maskf).sum(axis=1) / counts

    logits = hidden @ params["head_A.w"] + params["head_A.b"]
    frac = batch.frac + hidden @ params["head_F.w"] + params["head_F.b"]
    lengths = batch.lengths + hbar @ params["head_Ll.w"] + params["head_Ll.b"]
    angles = batch.angles + hbar @ params["head_La.w"] + params["head_La.b"]
    cache = dict(
        batch=batch, c=c, sc=sc, cache_t=cache_t, cache_s=cache_s, blocks=blocks,
        fmod=fmod, xnf=xnf, lnf=lnf, hidden=hidden, hbar=hbar, maskf=maskf, counts=counts,
    )
    return ForwardOutput(logits, frac, lengths, angles, hidden, cache)


def backward(out: ForwardOutput, params, cfg: BackboneConfig, grad_logits=None, grad_frac=None,
             grad_lengths=None, grad_angles=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its adjoints with respect to the four
    head outputs. Missing adjoints are treated as zero."""
    cache = out.cache
    batch: BatchInput = cache["batch"]
    b, n = batch.atoms.shape
    d = cfg.d_model
    hidden, hbar, maskf, counts = cache["hidden"], cache["hbar"], cache["maskf"], cache["counts"]
    zeros = np.zeros
    g_logits = zeros(out.logits.shape) if grad_logits is None else grad_logits
    g_frac = zeros(out.frac.shape) if grad_frac is None else grad_frac
    g_len = zeros((b, 3)) if grad_lengths is None else grad_lengths
    g_ang = zeros((b, 3)) if grad_angles is None else grad_angles

    grads: dict[str, np.ndarray] = {}
    _linear_grads(hidden, g_logits, grads, "head_A.w", "head_A.b")
    _linear_grads(hidden, g_frac, grads, "head_F.w", "head_F.b")
    _linear_grads(hbar, g_len, grads, "head_Ll.w", "head_Ll.b")
    _linear_grads(hbar, g_ang, grads, "head_La.w", "head_La.b")
    dh = g_logits @ params["head_A.w"].T + g_frac @ params["head_F.w"].T
    dhbar = g_len @ params["head_Ll.w"].T + g_ang @ params["head_La.w"].T
    dh = dh + (dhbar / counts)[:, None, :] * maskf

    # final modulated norm
    fsc = cache["fmod"][:, None, d:]
    dfmod = np.concatenate([dh.sum(axis=1), (dh * cache["xnf"]).sum(axis=1)], axis=-1)
    dx = _layer_norm_back(dh * (1.0 + fsc), cache["lnf"])
    sc = cache["sc"]
    _linear_grads(sc, dfmod, grads, "final.ada_w", "final.ada_b")
    dsc = dfmod @ params["final.ada_w"].T

    for i in reversed(range(cfg.n_layers)):
        pre = f"blocks.{i}."
        mod, xn1, ln1, att, att_cache, xn2, ln2, xm2, u, mlp = cache["blocks"][i]
        sh1, sc1, g1, sh2, sc2, g2 = (mod[:, j * d:(j + 1) * d][:, None, :] for j in range(6))
        dmod = np.empty_like(mod)
        # x2 = x1 + g2 * mlp
        dmod[:, 5 * d:6 * d] = (dx * mlp).sum(axis=1)
        dmlp = dx * g2
        _linear_grads(_gelu(u), dmlp, grads, pre + "fc2_w", pre + "fc2_b")
        du = (dmlp @ params[pre + "fc2_w"].T) * _gelu_grad(u)
        _linear_grads(xm2, du, grads, pre + "fc1_w", pre + "fc1_b")
        dxm2 = du @ params[pre + "fc1_w"].T
        dmod[:, 3 * d:4 * d] = dxm2.sum(axis=1)
        dmod[:, 4 * d:5 * d] = (dxm2 * xn2).sum(axis=1)
        dx1 = dx + _layer_norm_back(dxm2 * (1.0 + sc2), ln2)
        # x1 = x + g1 * att
        dmod[:, 2 * d:3 * d] = (dx1 * att).sum(axis=1)
        dxm1 = _attention_back(dx1 * g1, att_cache, params, pre, cfg, grads)
        dmod[:, 0:d] = dxm1.sum(axis=1)
        dmod[:, d:2 * d] = (dxm1 * xn1).sum(axis=1)
        dx = dx1 + _layer_norm_back(dxm1 * (1.0 + sc1), ln1)
        _linear_grads(sc, dmod, grads, pre + "ada_w", pre + "ada_b")
        dsc = dsc + dmod @ params[pre + "ada_w"].T

    # conditioning
    dc = dsc * _silu_grad(cache["c"])
    for axis, (feat, pre_act) in (("t", cache["cache_t"]), ("s", cache["cache_s"])):
        _linear_grads(_silu(pre_act), dc, grads, f"time_{axis}.w2", f"time_{axis}.b2")
        dpre = (dc @ params[f"time_{axis}.w2"].T) * _silu_grad(pre_act)
        _linear_grads(feat, dpre, grads, f"time_{axis}.w1", f"time_{axis}.b1")

    # embeddings
    g_atom = np.zeros_like(params["atom_emb"])
    np.add.at(g_atom, batch.atoms.reshape(-1), dx.reshape(-1, d))
    grads["atom_emb"] = g_atom
    _linear_grads(coord_features(batch.frac, cfg.coord_harmonics), dx, grads, "coord_w", "coord_b")
    dlat = dx.sum(axis=1)
    _linear_grads(batch.lengths, dlat, grads, "len_w", "len_b")
    _linear_grads(batch.angles, dlat, grads, "ang_w", "ang_b")
    g_pos = np.zeros_like(params["pos_emb"])
    g_pos[:n] = dx.sum(axis=0)
    grads["pos_emb"] = g_pos

    return {k: np.asarray(grads.get(k, np.zeros_like(v)), dtype=float).reshape(v.shape) for k, v in params.items()}
