"""Closed-form Jacobians of the network layers and a finite-difference oracle.

Jacobians are taken with respect to the layer input in the standard bases,
with matrices vectorized column by column (column-major), so Kronecker
formulas transcribe directly.  All evaluation here is exact (reference
arithmetic).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import net
from .errors import KinkCrossingError, NonGenericError
from .fparith import NATIVE

# Lemma hypotheses like "the pre-activation is generic" are exact-zero
# conditions; numerically we refuse inputs with entries this close to the
# kink/singularity (relative to the natural scale) instead of silently
# differentiating across it.
TAU_GEN = 1e-8


class LayerKind(enum.Enum):
    CENTRING = "centring"
    RMSNORM = "rmsnorm"
    LAYERNORM = "layernorm"
    AFFINE = "affine"
    TLP = "tlp"
    SIMSCORES = "simscores"
    SOFTMAX = "softmax"
    ATTENTION = "attention"
    MATMUL = "matmul"


@dataclass(frozen=True)
class LayerPoint:
    """A differentiation point: a layer kind, its input, and whatever
    parameters the kind needs (a TransformerConfig for TLP / scores /
    attention, an explicit (A, b) pair for affine maps, a matrix pair
    for MATMUL)."""

    kind: LayerKind
    x: object
    cfg: net.TransformerConfig | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    @classmethod
    def centring(cls, x):
        return cls(LayerKind.CENTRING, np.asarray(x, float))

    @classmethod
    def rmsnorm(cls, x):
        return cls(LayerKind.RMSNORM, np.asarray(x, float))

    @classmethod
    def layernorm(cls, x):
        return cls(LayerKind.LAYERNORM, np.asarray(x, float))

    @classmethod
    def affine(cls, a, b, x):
        return cls(LayerKind.AFFINE, np.asarray(x, float),
                   a=np.asarray(a, float), b=np.asarray(b, float))

    @classmethod
    def tlp(cls, cfg, x):
        return cls(LayerKind.TLP, np.asarray(x, float), cfg=cfg)

    @classmethod
    def simscores(cls, cfg, x):
        return cls(LayerKind.SIMSCORES, np.asarray(x, float), cfg=cfg)

    @classmethod
    def softmax(cls, s):
        return cls(LayerKind.SOFTMAX, np.asarray(s, float))

    @classmethod
    def attention(cls, cfg, x):
        return cls(LayerKind.ATTENTION, np.asarray(x, float), cfg=cfg)

    @classmethod
    def matmul(cls, x, y):
        return cls(LayerKind.MATMUL, (np.asarray(x, float), np.asarray(y, float)))


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorization (stack columns)."""
    return np.asarray(a).flatten(order="F")


def point_input_vec(pt: LayerPoint) -> np.ndarray:
    if pt.kind is LayerKind.MATMUL:
        x, y = pt.x
        return np.concatenate([vec(x), vec(y)])
    return vec(pt.x)


def layer_apply(pt: LayerPoint, arg=None) -> np.ndarray:
    """Evaluate the layer map exactly at ``arg`` (default: the stored input)."""
    x = pt.x if arg is None else arg
    k = pt.kind
    if k is LayerKind.CENTRING:
        return net.centring(x, NATIVE)
    if k is LayerKind.RMSNORM:
        return net.rms_norm(x, NATIVE)
    if k is LayerKind.LAYERNORM:
        return net.layer_norm(x, NATIVE)
    if k is LayerKind.AFFINE:
        return pt.a @ x + pt.b
    if k is LayerKind.TLP:
        return net.two_layer_perceptron(pt.cfg, x, NATIVE)
    if k is LayerKind.SIMSCORES:
        return net.similarity_scores(pt.cfg.wq, pt.cfg.wk, x, NATIVE)
    if k is LayerKind.SOFTMAX:
        return net.softmax(x, NATIVE)
    if k is LayerKind.ATTENTION:
        return net.self_attention(pt.cfg.wq, pt.cfg.wk, pt.cfg.wv, x, NATIVE)
    if k is LayerKind.MATMUL:
        a, b = x
        return a @ b
    raise ValueError(k)


def _score_matrix(cfg: net.TransformerConfig) -> np.ndarray:
    return (cfg.wk.T @ cfg.wq) / math.sqrt(cfg.d)


def preactivation_signature(pt: LayerPoint, arg=None):
    """Discrete data that must not change across a finite-difference
    stencil: the ReLU sign pattern for the perceptron, nothing for the
    smooth layers."""
    x = pt.x if arg is None else arg
    if pt.kind is LayerKind.TLP:
        return tuple(np.sign(pt.cfg.a1 @ x + pt.cfg.b1).astype(int))
    return None


def analytic_jacobian(pt: LayerPoint) -> np.ndarray:
    """The closed-form Jacobian at ``pt``; raises NonGenericError when the
    differentiability hypothesis fails (naming the violated condition)."""
    k = pt.kind
    x = pt.x

    if k is LayerKind.CENTRING:
        d = x.shape[0]
        return np.eye(d) - np.ones((d, d)) / d

    if k is LayerKind.RMSNORM:
        d = x.shape[0]
        nx = np.linalg.norm(x)
        if nx <= TAU_GEN * max(1.0, np.max(np.abs(x)) if x.size else 0.0):
            raise NonGenericError("RMS normalization requires x != 0")
        return (math.sqrt(d) / nx) * (np.eye(d) - np.outer(x, x) / nx**2)

    if k is LayerKind.LAYERNORM:
        d = x.shape[0]
        c = x - np.mean(x)
        nc = np.linalg.norm(c)
        if nc <= TAU_GEN * max(1.0, np.max(np.abs(x))):
            raise NonGenericError("layer normalization requires centring(x) != 0")
        return (math.sqrt(d) / nc) * (
            np.eye(d) - np.ones((d, d)) / d - np.outer(c, c) / nc**2)

    if k is LayerKind.AFFINE:
        return pt.a.copy()

    if k is LayerKind.TLP:
        cfg = pt.cfg
        y1 = cfg.a1 @ x + cfg.b1
        scale = np.max(np.abs(cfg.a1) @ np.abs(x) + np.abs(cfg.b1))
        if np.min(np.abs(y1)) <= TAU_GEN * max(1.0, scale):
            raise NonGenericError(
                "perceptron pre-activation is not generic (entry too close to the ReLU kink)")
        omega = y1 > 0
        return cfg.a2[:, omega] @ cfg.a1[omega, :]

    if k is LayerKind.SIMSCORES:
        b = _score_matrix(pt.cfg)
        xm = x if x.ndim == 2 else x[:, None]
        d, n = xm.shape
        xn = xm[:, -1]
        en = np.zeros((1, n))
        en[0, -1] = 1.0
        return np.kron(np.eye(n), (b @ xn)[None, :]) + np.kron(en, xm.T @ b)

    if k is LayerKind.SOFTMAX:
        psi = net.softmax(x, NATIVE)
        return np.diag(psi) - np.outer(psi, psi)

    if k is LayerKind.ATTENTION:
        cfg = pt.cfg
        b = _score_matrix(cfg)
        xm = x if x.ndim == 2 else x[:, None]
        d, n = xm.shape
        jac = np.zeros((d * n, d * n))
        for t in range(1, n + 1):
            xt = xm[:, :t]
            s = net.similarity_scores(cfg.wq, cfg.wk, xt, NATIVE)
            psi = net.softmax(s, NATIVE)
            jpsi = np.diag(psi) - np.outer(psi, psi)
            et = np.zeros((1, t))
            et[0, -1] = 1.0
            js = np.kron(np.eye(t), (b @ xt[:, -1])[None, :]) + np.kron(et, xt.T @ b)
            ht = np.kron(psi[None, :], cfg.wv) + cfg.wv @ xt @ jpsi @ js
            jac[(t - 1) * d: t * d, : t * d] = ht
        return jac

    if k is LayerKind.MATMUL:
        xa, xb = x
        m = xa.shape[0]
        n = xb.shape[1]
        return np.hstack([np.kron(xb.T, np.eye(m)), np.kron(np.eye(n), xa)])

    raise ValueError(k)


def finite_difference_jacobian(f, u, step: float | None = None,
                               signature=None) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``u`` in the same bases as
    the analytic formulas (column-major vectorization).

    ``signature``, when given, maps an input to a discrete pattern that
    must agree at both stencil points of every coordinate; a mismatch
    raises KinkCrossingError so the caller can retry with a smaller step.
    """
    u = np.asarray(u, dtype=np.float64)
    if step is None:
        step = 1e-6 * (1.0 + float(np.max(np.abs(u))))
    flat = vec(u)
    cols = []
    for j in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[j] += step
        dn[j] -= step
        a_up = up.reshape(u.shape, order="F")
        a_dn = dn.reshape(u.shape, order="F")
        if signature is not None and signature(a_up) != signature(a_dn):
            raise KinkCrossingError(
                f"stencil for coordinate {j} crosses a kink; retry with a smaller step")
        cols.append((vec(f(a_up)) - vec(f(a_dn))) / (2.0 * step))
    return np.stack(cols, axis=1)


def fd_jacobian_for_point(pt: LayerPoint, step: float | None = None) -> np.ndarray:
    """Finite-difference oracle for a LayerPoint (MATMUL differentiates
    with respect to both factors, matching the analytic block layout)."""
    if pt.kind is LayerKind.MATMUL:
        xa, xb = pt.x
        ja = finite_difference_jacobian(lambda a: a @ xb, xa, step)
        jb = finite_difference_jacobian(lambda b: xa @ b, xb, step)
        return np.hstack([ja, jb])
    sig = None
    if pt.kind is LayerKind.TLP:
        sig = lambda a: preactivation_signature(pt, a)
    return finite_difference_jacobian(lambda a: layer_apply(pt, a), pt.x, step, sig)


def jacobian_kernel_checks(pt: LayerPoint) -> dict[str, float]:
    """Residuals of the structural kernel identities and the spectral norm
    of the analytic Jacobian, for comparison with the closed forms."""
    from .tensor import sv_extremes  # local import to avoid cycles

    jac = analytic_jacobian(pt)
    out: dict[str, float] = {}
    if pt.kind in (LayerKind.RMSNORM, LayerKind.LAYERNORM):
        x = pt.x if pt.kind is LayerKind.RMSNORM else pt.x - np.mean(pt.x)
        out["J_times_x"] = float(np.max(np.abs(jac @ x)))
    if pt.kind in (LayerKind.CENTRING, LayerKind.LAYERNORM, LayerKind.SOFTMAX):
        e = np.ones(jac.shape[1])
        out["J_times_ones"] = float(np.max(np.abs(jac @ e)))
    if pt.kind is LayerKind.SOFTMAX:
        out["row_sums"] = float(np.max(np.abs(jac.sum(axis=1))))
    out["spectral_norm"] = sv_extremes(jac)[1]
    return out
