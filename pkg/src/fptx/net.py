"""Decoder-style transformer forward pass under simulated finite precision.

Every elementary operation is computed in reference (double) arithmetic and
immediately rounded to the requested precision, so the evaluation at
``PrecisionSpec.native()`` doubles as the exact reference path with the
identical operation order.  The operation order is fixed and documented so
that first-order rounding-error bounds apply to this exact algorithm:

* all sums and matrix-vector products accumulate left to right
  (recursive summation), rounding after every addition and every product;
* layer normalization: centring, squares, recursive sum, divide by d,
  sqrt, per-entry divide;
* RMS normalization: squares, recursive sum, sqrt, then per entry a
  multiply by sqrt(d) and a divide;
* similarity scores: the query vector first, then one inner product per
  key column, then one scaling division by sqrt(d);
* softmax: exponentials, recursive-sum denominator, per-entry divide,
  with no max subtraction unless explicitly requested;
* attention column t: scores, softmax, then X_t @ psi followed by W_v @ (.);
* residual branches: a single rounded addition per entry.

Scalar constants such as sqrt(d) are evaluated once in reference
arithmetic and treated as exact reals: each use incurs exactly one
rounding, matching the per-entry operation counts of the error bounds.
Layer inputs and weights are plain doubles shared by all precisions; the
measured error of a low-precision pass is therefore purely the accumulated
rounding of the computation, not of the data representation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError
from .fparith import EXP_OVERFLOW_LIMIT, NATIVE, PrecisionSpec, rounder


class NormVariant(enum.Enum):
    LAYER = "ln"
    RMS = "rms"


class NormPlacement(enum.Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class TransformerConfig:
    """Parameters of one transformer block.

    a1 (D x d), b1 (D), a2 (d x D), b2 (d) define the two-layer
    perceptron; wq, wk, wv (d x d) parametrize the self-attention.
    """

    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        d = self.wq.shape[0]
        hid = self.a1.shape[0]
        if self.wq.shape != (d, d) or self.wk.shape != (d, d) or self.wv.shape != (d, d):
            raise ValueError("attention matrices must be square and share d")
        if self.a1.shape != (hid, d) or self.b1.shape != (hid,):
            raise ValueError("first perceptron layer has inconsistent shape")
        if self.a2.shape != (d, hid) or self.b2.shape != (d,):
            raise ValueError("second perceptron layer has inconsistent shape")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.a1.shape[0]


@dataclass(frozen=True)
class DeepConfig:
    """A stack of transformer blocks sharing d and D, plus the
    normalization variant and its placement relative to the attention."""

    blocks: tuple[TransformerConfig, ...]
    variant: NormVariant = NormVariant.LAYER
    placement: NormPlacement = NormPlacement.PRE

    def __post_init__(self):
        dims = {(b.d, b.hidden) for b in self.blocks}
        if len(dims) > 1:
            raise ValueError("all blocks must share d and D")

    @property
    def depth(self) -> int:
        return len(self.blocks)


# ---------------------------------------------------------------------------
# rounded building blocks
#
# The private helpers below operate column-batched: a (d, n) array is n
# independent columns, and every vectorized operation is elementwise per
# column, so batched evaluation is bit-identical to per-column evaluation.


def _recsum(rnd, terms: np.ndarray) -> np.ndarray:
    """Left-to-right recursive sum over axis 0, rounding each addition."""
    acc = terms[0]
    for k in range(1, terms.shape[0]):
        acc = rnd(acc + terms[k])
    return acc


def _matvec(rnd, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """a @ x with rounded products and left-to-right rounded accumulation.

    ``x`` may be a vector (k,) or a column batch (k, n).
    """
    if x.ndim == 1:
        prods = rnd(a * x[None, :])
        return _recsum(rnd, prods.T)
    prods = rnd(a[:, :, None] * x[None, :, :])
    acc = prods[:, 0, :]
    for k in range(1, x.shape[0]):
        acc = rnd(acc + prods[:, k, :])
    return acc


def _affine(rnd, a, b, x):
    y = _matvec(rnd, a, x)
    if x.ndim == 1:
        return rnd(y + b)
    return rnd(y + b[:, None])


def _centring_cols(x: np.ndarray, rnd) -> np.ndarray:
    d = x.shape[0]
    total = _recsum(rnd, x)
    mu = rnd(total / d)
    return rnd(x - mu)


def _layer_norm_cols(x: np.ndarray, rnd) -> np.ndarray:
    d = x.shape[0]
    c = _centring_cols(x, rnd)
    sq = rnd(c * c)
    ss = _recsum(rnd, sq)
    nu = rnd(ss / d)
    if np.any(nu == 0.0):
        raise DegenerateInputError("layer normalization of a constant vector")
    root = rnd(np.sqrt(nu))
    return rnd(c / root)


def _rms_norm_cols(x: np.ndarray, rnd) -> np.ndarray:
    d = x.shape[0]
    sq = rnd(x * x)
    ss = _recsum(rnd, sq)
    if np.any(ss == 0.0):
        raise DegenerateInputError("RMS normalization of the zero vector")
    root = rnd(np.sqrt(ss))
    num = rnd(math.sqrt(d) * x)
    return rnd(num / root)


def _norm_cols(x: np.ndarray, rnd, variant: NormVariant) -> np.ndarray:
    if variant is NormVariant.RMS:
        return _rms_norm_cols(x, rnd)
    return _layer_norm_cols(x, rnd)


def _tlp_cols(cfg: TransformerConfig, x: np.ndarray, rnd) -> np.ndarray:
    y = _affine(rnd, cfg.a1, cfg.b1, x)
    z = np.maximum(y, 0.0)  # exact in floating point
    return _affine(rnd, cfg.a2, cfg.b2, z)


# ---------------------------------------------------------------------------
# public single-input operations


def centring(x: np.ndarray, ctx: PrecisionSpec = NATIVE) -> np.ndarray:
    """x - mean(x) * e, mean by recursive summation and one division."""
    return _centring_cols(np.asarray(x, dtype=np.float64), rounder(ctx))


def layer_norm(x: np.ndarray, ctx: PrecisionSpec = NATIVE) -> np.ndarray:
    """(x - mean) / sqrt(biased variance); fails on constant vectors."""
    return _layer_norm_cols(np.asarray(x, dtype=np.float64), rounder(ctx))


def rms_norm(x: np.ndarray, ctx: PrecisionSpec = NATIVE) -> np.ndarray:
    """sqrt(d) * x / ||x||_2; fails on the zero vector."""
    return _rms_norm_cols(np.asarray(x, dtype=np.float64), rounder(ctx))


def two_layer_perceptron(cfg: TransformerConfig, x: np.ndarray,
                         ctx: PrecisionSpec = NATIVE) -> np.ndarray:
    """a2 @ relu(a1 @ x + b1) + b2; the ReLU itself is exact."""
    return _tlp_cols(cfg, np.asarray(x, dtype=np.float64), rounder(ctx))


def similarity_scores(wq: np.ndarray, wk: np.ndarray, x: np.ndarray,
                      ctx: PrecisionSpec = NATIVE) -> np.ndarray:
    """(1/sqrt(d)) (wk @ X)^T (wq @ x_last) for X with t columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    rnd = rounder(ctx)
    d = x.shape[0]
    q = _matvec(rnd, np.asarray(wq, dtype=np.float64), x[:, -1])
    keys = _matvec(rnd, np.asarray(wk, dtype=np.float64), x)
    prods = rnd(keys * q[:, None])
    raw = _recsum(rnd, prods)
    return rnd(raw / math.sqrt(d))


def softmax(s: np.ndarray, ctx: PrecisionSpec = NATIVE, shifted: bool = False) -> np.ndarray:
    """exp(s_i) / sum_j exp(s_j) with a recursive-sum denominator.

    The default algorithm does not subtract the maximum; arguments with
    |s_i| > 700 would overflow the reference exponential and raise.  The
    ``shifted`` variant subtracts max(s) (one extra rounded subtraction
    per entry) and is safe for any magnitude.
    """
    s = np.asarray(s, dtype=np.float64)
    rnd = rounder(ctx)
    if shifted:
        z = rnd(s - np.max(s))
        ex = rnd(np.exp(z))
    else:
        if np.max(np.abs(s)) > EXP_OVERFLOW_LIMIT:
            raise DomainError("softmax argument overflows exp; use shifted=True")
        ex = rnd(np.exp(s))
    den = ex[0]
    for k in range(1, ex.shape[0]):
        den = rnd(den + ex[k])
    return rnd(ex / den)


def self_attention(wq: np.ndarray, wk: np.ndarray, wv: np.ndarray, x: np.ndarray,
                   ctx: PrecisionSpec = NATIVE, shifted: bool = False) -> np.ndarray:
    """Causal single-head self-attention.

    Output column t is wv @ (X_t @ psi(S(X_t))) where X_t keeps the first
    t input columns.  The implementation batches all columns but performs,
    for every output column, exactly the same rounded operations in the
    same order as the column-by-column definition.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    wq = np.asarray(wq, dtype=np.float64)
    wk = np.asarray(wk, dtype=np.float64)
    wv = np.asarray(wv, dtype=np.float64)
    rnd = rounder(ctx)
    d, n = x.shape
    sq = math.sqrt(d)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        keys = _matvec(rnd, wk, x)     # (d, n)
        queries = _matvec(rnd, wq, x)  # (d, n)

        # scores[i, t] = sum_j keys[j, i] * queries[j, t], left to right in j
        acc = rnd(keys[0, :, None] * queries[0, None, :])
        for j in range(1, d):
            acc = rnd(acc + rnd(keys[j, :, None] * queries[j, None, :]))
        scores = rnd(acc / sq)

        causal = np.tril(np.ones((n, n), dtype=bool)).T  # [i, t] valid iff i <= t
        if shifted:
            masked = np.where(causal, scores, -np.inf)
            shift = np.max(masked, axis=0)
            ex = rnd(np.exp(rnd(scores - shift[None, :])))
        else:
            if np.max(np.abs(scores[causal])) > EXP_OVERFLOW_LIMIT:
                raise DomainError("attention scores overflow exp; use shifted=True")
            ex = rnd(np.exp(scores))

        # denominator for column t: recursive sum of ex[0..t, t]
        den = np.empty(n)
        acc = ex[0, :].copy()
        den[0] = acc[0]
        for i in range(1, n):
            acc = rnd(acc + ex[i, :])
            den[i] = acc[i]
        psi = rnd(ex / den[None, :])

        # value combination: out[:, t] = wv @ (X_t @ psi_t)
        combo = np.empty_like(x)
        acc = rnd(x[:, 0, None] * psi[0, None, :])
        combo[:, 0] = acc[:, 0]
        for i in range(1, n):
            acc = rnd(acc + rnd(x[:, i, None] * psi[i, None, :]))
            combo[:, i] = acc[:, i]
        return _matvec(rnd, wv, combo)


def transformer_block(cfg: TransformerConfig, x: np.ndarray,
                      ctx: PrecisionSpec = NATIVE,
                      variant: NormVariant = NormVariant.LAYER,
                      placement: NormPlacement = NormPlacement.PRE,
                      shifted: bool = False) -> np.ndarray:
    """One block: residual attention sub-block then residual perceptron
    sub-block.  PRE normalizes the attention input; POST normalizes the
    attention output instead (the perceptron half keeps prenorm)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    rnd = rounder(ctx)
    if placement is NormPlacement.PRE:
        att = self_attention(cfg.wq, cfg.wk, cfg.wv, _norm_cols(x, rnd, variant),
                             ctx, shifted)
        y = rnd(x + att)
    else:
        att = self_attention(cfg.wq, cfg.wk, cfg.wv, x, ctx, shifted)
        y = rnd(x + _norm_cols(att, rnd, variant))
    out = rnd(y + _tlp_cols(cfg, _norm_cols(y, rnd, variant), rnd))
    return out


def deep_transformer(deep: DeepConfig, x: np.ndarray,
                     ctx: PrecisionSpec = NATIVE,
                     collect: bool = False, shifted: bool = False):
    """Compose the blocks of ``deep``; with ``collect`` also return the
    intermediate outputs X^(1), ..., X^(L)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    taps = []
    for cfg in deep.blocks:
        x = transformer_block(cfg, x, ctx, deep.variant, deep.placement, shifted)
        if collect:
            taps.append(x)
    return (x, taps) if collect else x


def residual_attention(cfg: TransformerConfig, x: np.ndarray,
                       ctx: PrecisionSpec = NATIVE,
                       variant: NormVariant = NormVariant.RMS,
                       shifted: bool = False) -> np.ndarray:
    """The attention sub-block X + A(norm*(X)) on its own."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    rnd = rounder(ctx)
    att = self_attention(cfg.wq, cfg.wk, cfg.wv, _norm_cols(x, rnd, variant),
                         ctx, shifted)
    return rnd(x + att)


def residual_perceptron(cfg: TransformerConfig, x: np.ndarray,
                        ctx: PrecisionSpec = NATIVE,
                        variant: NormVariant = NormVariant.RMS) -> np.ndarray:
    """The perceptron sub-block x + M(norm(x)) on its own."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    rnd = rounder(ctx)
    out = rnd(x + _tlp_cols(cfg, _norm_cols(x, rnd, variant), rnd))
    return out[:, 0] if squeeze else out
