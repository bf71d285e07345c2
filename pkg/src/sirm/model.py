"""The skim/intensive reading classifier.

Skim path: parallel multi-width valid convolutions with ReLU and
average-over-time pooling whose concatenated output g summarizes the whole
paragraph. Intensive path: two levels (sentence, then paragraph) where every
position is re-encoded from its own embedding, a zero-padded near-neighbor
convolution, and g, through one ReLU affine layer followed by mean pooling.
An auxiliary two-class head reads g through a gradient-reversal node so that
training-set-specific skim features are suppressed.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T


class ConfigError(ValueError):
    """Architecture hyperparameters are inconsistent."""


@dataclass
class SIRMConfig:
    vocab_size: int
    d_e: int = 64
    d_c: int = 16
    src_windows: tuple = (1, 2, 3, 4)
    k: int = 1
    d_ns: int = 64
    d_np: int = 64
    d_as: int = 64
    d_ap: int = 64
    lambda_adv: float = 1e-6
    m: int = 8
    n: int = 32
    mask_aware_pooling: bool = False

    def __post_init__(self):
        self.src_windows = tuple(sorted(self.src_windows))
        self.validate()

    def validate(self):
        dims = (self.vocab_size, self.d_e, self.d_c, self.k, self.d_ns,
                self.d_np, self.d_as, self.d_ap, self.m, self.n)
        if any(d < 1 for d in dims):
            raise ConfigError("all dimensions must be >= 1")
        if self.lambda_adv < 0:
            raise ConfigError("lambda_adv must be >= 0")
        if not self.src_windows:
            raise ConfigError("src_windows must be non-empty")
        if max(self.src_windows) > self.m * self.n:
            raise ConfigError("largest skim window exceeds grid size m*n")
        if self.d_e % 2 or self.d_as % 2:
            raise ConfigError("d_e and d_as must be even (position encoding parity)")

    @property
    def g_width(self):
        return len(self.src_windows) * self.d_c

    def to_dict(self):
        d = asdict(self)
        d["src_windows"] = list(self.src_windows)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "src_windows" in d:
            d["src_windows"] = tuple(d["src_windows"])
        return cls(**d)


@dataclass
class SIRMParams:
    """Every trainable tensor of the model, named."""

    embedding: T.Tensor
    src_filters: dict          # window size -> (weight, bias)
    sent_neighbor: tuple       # (weight (2k+1, d_e, d_ns), bias)
    sent_dense: tuple          # (weight (|g|+d_ns+d_e, d_as), bias)
    para_neighbor: tuple       # (weight (2k+1, d_as, d_np), bias)
    para_dense: tuple          # (weight (|g|+d_np+d_as, d_ap), bias)
    out_head: tuple            # (weight (d_ap+|g|, 1), bias)
    adv_head: tuple            # (weight (|g|, 2), bias)

    def named_tensors(self):
        items = [("embedding", self.embedding)]
        for h in sorted(self.src_filters):
            w, b = self.src_filters[h]
            items += [(f"src_filters.{h}.weight", w), (f"src_filters.{h}.bias", b)]
        for name in ("sent_neighbor", "sent_dense", "para_neighbor",
                     "para_dense", "out_head", "adv_head"):
            w, b = getattr(self, name)
            items += [(f"{name}.weight", w), (f"{name}.bias", b)]
        return items

    def tensors(self):
        return [t for _, t in self.named_tensors()]


def _glorot(rng, shape, dtype):
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return T.Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                    requires_grad=True)


def _zeros(shape, dtype):
    return T.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_sirm_params(config, seed=0, dtype=np.float32):
    """Glorot-uniform weights, zero biases, N(0, 1) embeddings.

    Unit-scale embeddings keep word content comparable to the unit-amplitude
    position encodings; smaller scales bury the content signal and stall
    training at the default learning rate.
    """
    rng = np.random.default_rng(seed)
    emb = T.Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, config.d_e)).astype(dtype),
                   requires_grad=True)
    gw = config.g_width
    src = {h: (_glorot(rng, (h, config.d_e, config.d_c), dtype), _zeros(config.d_c, dtype))
           for h in config.src_windows}
    win = 2 * config.k + 1
    return SIRMParams(
        embedding=emb,
        src_filters=src,
        sent_neighbor=(_glorot(rng, (win, config.d_e, config.d_ns), dtype),
                       _zeros(config.d_ns, dtype)),
        sent_dense=(_glorot(rng, (gw + config.d_ns + config.d_e, config.d_as), dtype),
                    _zeros(config.d_as, dtype)),
        para_neighbor=(_glorot(rng, (win, config.d_as, config.d_np), dtype),
                       _zeros(config.d_np, dtype)),
        para_dense=(_glorot(rng, (gw + config.d_np + config.d_as, config.d_ap), dtype),
                    _zeros(config.d_ap, dtype)),
        out_head=(_glorot(rng, (config.d_ap + gw, 1), dtype), _zeros(1, dtype)),
        adv_head=(_glorot(rng, (gw, 2), dtype), _zeros(2, dtype)),
    )


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass, kept for inspection."""

    s_prime: T.Tensor    # (m, n, d_e)
    g: T.Tensor          # (|g|,)
    u_sent: T.Tensor     # (m, n, d_ns)
    o_sent: T.Tensor     # (m, d_as)
    o_prime: T.Tensor    # (m, d_as)
    u_para: T.Tensor     # (m, d_np)
    o_para: T.Tensor     # (d_ap,)
    y_prime: T.Tensor    # scalar in (0, 1)
    y_dprime: T.Tensor   # (2,), sums to 1


def positional_encoding(length, d, dtype=np.float64):
    """Sinusoidal position table: out[p, 2i]=sin(p/10000^{2i/d}), 2i+1=cos."""
    if d % 2:
        raise ConfigError(f"position encoding width must be even, got {d}")
    if length < 1:
        raise ConfigError("position encoding length must be >= 1")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / d)
    out = np.empty((length, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return T.Tensor(out.astype(dtype))


def embed_paragraph(grid, params, config):
    """Word embedding lookup plus per-sentence position encoding.

    Returns the position-augmented embeddings flattened to (m*n, d_e); PAD
    positions embed like any other token.
    """
    dtype = params.embedding.dtype
    ids = grid.token_ids.reshape(-1)
    emb = T.embedding_lookup(params.embedding, ids)
    pos = positional_encoding(config.n, config.d_e, dtype)
    tiled = T.Tensor(np.tile(pos.data, (config.m, 1)))
    return T.add(emb, tiled)


def skim_forward(s_prime_flat, params, config):
    """Multi-width valid convolutions + ReLU + average-over-time pooling."""
    pooled = []
    for h in config.src_windows:
        w, b = params.src_filters[h]
        fm = T.relu(T.conv1d(s_prime_flat, w, b, padding="valid"))
        pooled.append(T.mean_pool(fm, denominator="fixed_L"))
    return T.concat_lastaxis(pooled)


def near_neighbor_encode(x, weight, bias, k):
    """Zero-padded window-(2k+1) convolution with ReLU; length preserved."""
    if weight.data.shape[0] != 2 * k + 1:
        raise T.ShapeError(f"near-neighbor weight window {weight.data.shape[0]} != 2k+1")
    return T.relu(T.conv1d(x, weight, bias, padding="same_zero"))


def dense_connect_pool(x_prime, u, g, weight, bias, mask=None,
                       denominator="fixed_L"):
    """Per position: relu(W [g + u_j + x'_j] + b), then mean over positions."""
    L = x_prime.data.shape[0]
    t = T.concat_lastaxis([T.repeat_row(g, L), u, x_prime])
    rows = T.relu(T.add_bias(T.matmul(t, weight), bias))
    return T.mean_pool(rows, mask=mask, denominator=denominator)


def sirm_forward(grid, params, config, reverse_gradients=True):
    """Full forward pass; returns a ForwardTrace of all intermediates.

    reverse_gradients=False bypasses the gradient-reversal node (identity
    backward), used to measure the adversarial branch in isolation.
    """
    m, n = config.m, config.n
    dtype = params.embedding.dtype
    mask_aware = config.mask_aware_pooling
    denom = "mask_count" if mask_aware else "fixed_L"

    s_flat = embed_paragraph(grid, params, config)          # (m*n, d_e)
    g = skim_forward(s_flat, params, config)                # (|g|,)

    nb_w, nb_b = params.sent_neighbor
    ds_w, ds_b = params.sent_dense
    sent_u = []
    sent_o = []
    for i in range(m):
        x_i = T.slice_rows(s_flat, i * n, (i + 1) * n)
        u_i = near_neighbor_encode(x_i, nb_w, nb_b, config.k)
        mask_i = grid.word_mask[i] if (mask_aware and grid.word_mask[i].any()) else None
        sent_u.append(u_i)
        sent_o.append(dense_connect_pool(
            x_i, u_i, g, ds_w, ds_b,
            mask=mask_i, denominator=denom if mask_i is not None else "fixed_L"))
    o_sent = T.stack_rows(sent_o)                            # (m, d_as)
    pos_m = positional_encoding(m, config.d_as, dtype)
    o_prime = T.add(o_sent, pos_m)                           # (m, d_as)

    pn_w, pn_b = params.para_neighbor
    pd_w, pd_b = params.para_dense
    u_para = near_neighbor_encode(o_prime, pn_w, pn_b, config.k)
    sent_mask = grid.sentence_mask if mask_aware else None
    o_para = dense_connect_pool(o_prime, u_para, g, pd_w, pd_b,
                                mask=sent_mask,
                                denominator=denom if sent_mask is not None else "fixed_L")

    ow, ob = params.out_head
    logit = T.add_bias(T.matmul(T.reshape(T.concat_lastaxis([o_para, g]),
                                          (1, -1)), ow), ob)
    y_prime = T.reshape(T.sigmoid(logit), ())

    g_adv = T.grad_reverse(g, config.lambda_adv) if reverse_gradients else g
    aw, ab = params.adv_head
    y_dprime = T.reshape(
        T.softmax_lastaxis(T.add_bias(T.matmul(T.reshape(g_adv, (1, -1)), aw), ab)),
        (2,))

    return ForwardTrace(
        s_prime=T.reshape(s_flat, (m, n, config.d_e)),
        g=g,
        u_sent=T.reshape(T.vstack(sent_u), (m, n, config.d_ns)),
        o_sent=o_sent,
        o_prime=o_prime,
        u_para=u_para,
        o_para=o_para,
        y_prime=y_prime,
        y_dprime=y_dprime,
    )


def sirm_loss(trace, y, config=None):
    """BCE of the main head plus cross entropy of the adversarial head.

    The adversarial scale factor lives in the gradient-reversal node inside
    the forward pass, so the loss value is exactly BCE + CE; only gradients
    upstream of g see the -lambda factor.
    """
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    return T.add(T.bce_loss(trace.y_prime, y), T.nll_loss(trace.y_dprime, y))


def param_count(params, include_embeddings=False):
    total = 0
    for name, t in params.named_tensors():
        if name == "embedding" and not include_embeddings:
            continue
        total += t.data.size
    return total
