"""Condition numbers and amplification factors of the network layers.

Condition numbers come in three flavours: normwise (a (p, q) pair of
vector norms on input and output), mixed (componentwise in, normwise out)
and componentwise.  Each is available generically from the Jacobian and,
where a closed form or closed-form upper bound exists, from that formula.

The xi amplification factors are the ratios of the cancellation-free
(absolute-value) evaluation of an expression to the absolute value of its
true result; they are >= 1 and become infinite under exact cancellation.
Infinity is an ordinary reported value, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import net
from .errors import SingularityError
from .fparith import NATIVE
from .jacobians import LayerKind, LayerPoint, analytic_jacobian, layer_apply, point_input_vec, vec
from .tensor import induced_norm, min_abs, sv_extremes, vec_norm

INF = math.inf

# Relative threshold below which the key-query product counts as singular.
TAU_SING = 1e-12


@dataclass(frozen=True)
class CondReport:
    kind: str                  # "normwise" | "mixed" | "componentwise"
    value: float               # possibly inf
    method: str                # "generic" | "closed_form" | "closed_form_upper_bound"
    p: float | None = None
    q: float | None = None
    note: str = ""


@dataclass(frozen=True)
class XiFactor:
    which: str
    value: float               # >= 1 when finite; inf under exact cancellation


def _ratio_max(num: np.ndarray, den: np.ndarray) -> float:
    """max |num_i| / |den_i| with 0/0 = 0 and y/0 = inf."""
    num = np.abs(np.asarray(num, float)).ravel()
    den = np.abs(np.asarray(den, float)).ravel()
    zero = den == 0.0
    if np.any(num[zero] != 0.0):
        return INF
    keep = ~zero
    if not np.any(keep):
        return 0.0
    return float(np.max(num[keep] / den[keep]))


# Exact-map evaluations used by the amplification factors and bounds.
# These are mathematical quantities of the exact layers, so they may be
# computed with plain matrix products (and a shift-stabilized softmax,
# which changes nothing in exact arithmetic) instead of the fixed
# operation order of the simulated evaluation path.


def exact_softmax(s: np.ndarray) -> np.ndarray:
    z = np.exp(s - np.max(s))
    return z / np.sum(z)


def exact_scores(cfg: net.TransformerConfig, xt: np.ndarray) -> np.ndarray:
    return (xt.T @ (cfg.wk.T @ (cfg.wq @ xt[:, -1]))) / math.sqrt(cfg.d)


def exact_norm_cols(x: np.ndarray, variant: net.NormVariant) -> np.ndarray:
    d = x.shape[0]
    if variant is net.NormVariant.RMS:
        norms = np.linalg.norm(x, axis=0)
        if np.any(norms == 0.0):
            from .errors import DegenerateInputError
            raise DegenerateInputError("RMS normalization of the zero vector")
        return math.sqrt(d) * x / norms[None, :]
    c = x - np.mean(x, axis=0)[None, :]
    norms = np.linalg.norm(c, axis=0)
    if np.any(norms == 0.0):
        from .errors import DegenerateInputError
        raise DegenerateInputError("layer normalization of a constant vector")
    return math.sqrt(d) * c / norms[None, :]


def exact_attention(cfg: net.TransformerConfig, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for t in range(1, x.shape[1] + 1):
        xt = x[:, :t]
        psi = exact_softmax(exact_scores(cfg, xt))
        out[:, t - 1] = cfg.wv @ (xt @ psi)
    return out


def exact_tlp(cfg: net.TransformerConfig, x: np.ndarray) -> np.ndarray:
    return cfg.a2 @ np.maximum(cfg.a1 @ x + (cfg.b1[:, None] if x.ndim == 2 else cfg.b1), 0.0) \
        + (cfg.b2[:, None] if x.ndim == 2 else cfg.b2)


def condition_generic(pt: LayerPoint, kind: str, p=2, q=2) -> CondReport:
    """Condition number from the Jacobian at ``pt``.

    normwise: ||J||_{p,q} ||u||_p / ||f(u)||_q;
    mixed:    ||J diag(u)||_{inf,inf} / ||f(u)||_inf;
    componentwise: ||diag(f(u))^-1 J diag(u)||_{inf,inf}, defined only for
    generic outputs (otherwise the report carries value inf).
    """
    jac = analytic_jacobian(pt)
    fu = vec(layer_apply(pt))
    u = point_input_vec(pt)
    if kind == "normwise":
        val = induced_norm(jac, p, q) * vec_norm(u, p) / vec_norm(fu, q)
        return CondReport("normwise", float(val), "generic", p, q)
    scaled = jac * u[None, :]
    if kind == "mixed":
        val = induced_norm(scaled, INF, INF) / vec_norm(fu, INF)
        return CondReport("mixed", float(val), "generic")
    if kind == "componentwise":
        if np.any(fu == 0.0):
            return CondReport("componentwise", INF, "generic",
                              note="output is not generic")
        val = induced_norm(scaled / fu[:, None], INF, INF)
        return CondReport("componentwise", float(val), "generic")
    raise ValueError(f"unknown condition kind {kind!r}")


def condition_closed_form(pt: LayerPoint, kind: str, p=2, q=2) -> CondReport:
    """Per-layer closed form (equality) or closed-form upper bound."""
    k = pt.kind
    x = pt.x

    if k is LayerKind.CENTRING:
        c = x - np.mean(x)
        d = x.shape[0]
        if kind == "normwise" and (p, q) == (2, 2):
            return CondReport("normwise", np.linalg.norm(x) / np.linalg.norm(c),
                              "closed_form", 2, 2)
        if kind == "mixed":
            val = (vec_norm(x, 1) + (d - 2) * vec_norm(x, INF)) / (d * vec_norm(c, INF))
            return CondReport("mixed", val, "closed_form")
        if kind == "componentwise":
            num = vec_norm(x, 1) + (d - 2) * np.abs(x)
            val = _ratio_max(num, d * c)
            return CondReport("componentwise", val, "closed_form")

    elif k is LayerKind.RMSNORM:
        d = x.shape[0]
        nx = np.linalg.norm(x)
        if kind == "normwise" and (p, q) == (2, 2):
            return CondReport("normwise", 1.0, "closed_form", 2, 2)
        if kind == "mixed":
            val = 2.0 / vec_norm(x, INF) * float(np.max(np.abs(x) * (1 - x**2 / nx**2)))
            return CondReport("mixed", val, "closed_form")
        if kind == "componentwise":
            val = 2.0 * (1.0 - min_abs(x) ** 2 / nx**2)
            return CondReport("componentwise", val, "closed_form")

    elif k is LayerKind.LAYERNORM:
        c = x - np.mean(x)
        d = x.shape[0]
        nc = np.linalg.norm(c)
        if kind == "normwise" and (p, q) == (2, 2):
            return CondReport("normwise", np.linalg.norm(x) / nc, "closed_form", 2, 2)
        centr_term = (np.abs(c) @ np.abs(x)) / nc**2
        if kind == "mixed":
            val = centr_term + (vec_norm(x, 1) + (d - 2) * vec_norm(x, INF)) / (d * vec_norm(c, INF))
            return CondReport("mixed", val, "closed_form_upper_bound")
        if kind == "componentwise":
            two_term = centr_term + _ratio_max(vec_norm(x, 1) + (d - 2) * np.abs(x), d * c)
            coarse = 3.0 * vec_norm(x, INF) / min_abs(c) if min_abs(c) > 0 else INF
            return CondReport("componentwise", min(two_term, coarse),
                              "closed_form_upper_bound")

    elif k is LayerKind.AFFINE:
        fx = pt.a @ x + pt.b
        rowabs = np.abs(pt.a) @ np.abs(x)
        if kind == "normwise":
            val = induced_norm(pt.a, p, q) * vec_norm(x, p) / vec_norm(fx, q)
            return CondReport("normwise", val, "closed_form", p, q)
        if kind == "mixed":
            val = float(np.max(rowabs)) / vec_norm(fx, INF)
            return CondReport("mixed", val, "closed_form")
        if kind == "componentwise":
            return CondReport("componentwise", _ratio_max(rowabs, fx), "closed_form")

    elif k is LayerKind.SOFTMAX:
        s = x
        psi = net.softmax(s, NATIVE)
        inner = np.abs(s) * (1.0 - 2.0 * psi) + psi @ np.abs(s)
        if kind == "mixed":
            val = float(np.max(psi * inner)) / vec_norm(psi, INF)
            return CondReport("mixed", val, "closed_form")
        if kind == "componentwise":
            return CondReport("componentwise", float(np.max(inner)), "closed_form")

    elif k is LayerKind.SIMSCORES:
        xm = x if x.ndim == 2 else x[:, None]
        b = (pt.cfg.wk.T @ pt.cfg.wq) / math.sqrt(pt.cfg.d)
        xn = xm[:, -1]
        bxn = np.abs(b @ xn)
        num = np.abs(xm).T @ bxn + np.abs(xm.T @ b) @ np.abs(xn)
        scores = xm.T @ b @ xn
        if kind == "mixed":
            val = float(np.max(num)) / vec_norm(scores, INF)
            return CondReport("mixed", val, "closed_form_upper_bound")
        if kind == "componentwise":
            return CondReport("componentwise", _ratio_max(num, scores),
                              "closed_form_upper_bound")

    elif k is LayerKind.ATTENTION:
        cfg = pt.cfg
        xm = x if x.ndim == 2 else x[:, None]
        b = (cfg.wk.T @ cfg.wq) / math.sqrt(cfg.d)
        n = xm.shape[1]
        out = net.self_attention(cfg.wq, cfg.wk, cfg.wv, xm, NATIVE)
        worst_num = np.zeros_like(out)
        for t in range(1, n + 1):
            xt = xm[:, :t]
            psi = net.softmax(net.similarity_scores(cfg.wq, cfg.wk, xt, NATIVE), NATIVE)
            inner = vec_norm(np.abs(xt).T @ np.abs(b @ xt[:, -1])
                             + np.abs(xt.T @ b) @ np.abs(xt[:, -1]), INF)
            col = (np.abs(cfg.wv) @ np.abs(xt) @ psi
                   + 2.0 * np.abs(cfg.wv @ xt) @ psi * inner)
            worst_num[:, t - 1] = col
        if kind == "mixed":
            val = float(np.max(worst_num)) / induced_norm(out, 1, INF)
            return CondReport("mixed", val, "closed_form_upper_bound")
        if kind == "componentwise":
            return CondReport("componentwise", _ratio_max(worst_num, out),
                              "closed_form_upper_bound")

    raise ValueError(f"no closed form for {k.value} condition number of kind {kind!r}"
                     + (f" with (p,q)=({p},{q})" if kind == "normwise" else ""))


# ---------------------------------------------------------------------------
# xi amplification factors


def xi_tlp(cfg: net.TransformerConfig, x: np.ndarray) -> XiFactor:
    """Cancellation factor of the perceptron at x."""
    y1 = cfg.a1 @ x + cfg.b1
    omega = y1 > 0
    num = (np.abs(cfg.a2[:, omega]) @ (np.abs(cfg.a1[omega, :]) @ np.abs(x)
                                       + np.abs(cfg.b1[omega]))
           + np.abs(cfg.b2))
    den = exact_tlp(cfg, x)
    return XiFactor("M", _ratio_max(num, den))


def xi_simscores(cfg: net.TransformerConfig, x: np.ndarray) -> XiFactor:
    xm = x if x.ndim == 2 else x[:, None]
    d = cfg.d
    num = (np.abs(xm).T @ (np.abs(cfg.wk).T @ (np.abs(cfg.wq) @ np.abs(xm[:, -1])))
           / math.sqrt(d))
    den = exact_scores(cfg, xm)
    return XiFactor("S", _ratio_max(num, den))


def xi_attention(cfg: net.TransformerConfig, x: np.ndarray) -> XiFactor:
    xm = x if x.ndim == 2 else x[:, None]
    n = xm.shape[1]
    worst = 0.0
    for t in range(1, n + 1):
        xt = xm[:, :t]
        psi = exact_softmax(exact_scores(cfg, xt))
        num = np.abs(cfg.wv) @ (np.abs(xt) @ psi)
        den = cfg.wv @ (xt @ psi)
        worst = max(worst, _ratio_max(num, den))
        if worst == INF:
            break
    return XiFactor("A", worst)


def _xi_residual(x: np.ndarray, fx: np.ndarray, branch: np.ndarray, which: str) -> XiFactor:
    return XiFactor(which, _ratio_max(np.abs(x) + np.abs(branch), fx))


def xi_residual_attention(cfg: net.TransformerConfig, x: np.ndarray,
                          variant: net.NormVariant) -> XiFactor:
    """xi of X + A(norm*(X)); 'f_A' for the RMS variant, 'g_A' for layer norm."""
    xm = x if x.ndim == 2 else x[:, None]
    branch = exact_attention(cfg, exact_norm_cols(xm, variant))
    which = "f_A" if variant is net.NormVariant.RMS else "g_A"
    return _xi_residual(xm, xm + branch, branch, which)


def xi_residual_perceptron(cfg: net.TransformerConfig, x: np.ndarray,
                           variant: net.NormVariant) -> XiFactor:
    """xi of x + M(norm(x)); 'f_M' for the RMS variant, 'g_M' for layer norm."""
    xv = x if x.ndim == 2 else x[:, None]
    branch = exact_tlp(cfg, exact_norm_cols(xv, variant))
    which = "f_M" if variant is net.NormVariant.RMS else "g_M"
    out = _xi_residual(xv, xv + branch, branch, which)
    return out


def xi_factor(which: str, cfg: net.TransformerConfig, x: np.ndarray) -> XiFactor:
    """Dispatch by name: M, S, A, f_A, g_A, f_M, g_M."""
    if which == "M":
        return xi_tlp(cfg, x)
    if which == "S":
        return xi_simscores(cfg, x)
    if which == "A":
        return xi_attention(cfg, x)
    if which in ("f_A", "g_A"):
        variant = net.NormVariant.RMS if which == "f_A" else net.NormVariant.LAYER
        return xi_residual_attention(cfg, x, variant)
    if which in ("f_M", "g_M"):
        variant = net.NormVariant.RMS if which == "f_M" else net.NormVariant.LAYER
        return xi_residual_perceptron(cfg, x, variant)
    raise ValueError(f"unknown xi factor {which!r}")


def key_query_spectral(wq: np.ndarray, wk: np.ndarray) -> tuple[float, float, float]:
    """(sigma_max(|Wk|^T |Wq|), sigma_max(Wk^T Wq), sigma_min(Wk^T Wq))."""
    prod = wk.T @ wq
    absprod = np.abs(wk).T @ np.abs(wq)
    smin, smax = sv_extremes(prod)
    return sv_extremes(absprod)[1], smax, smin


def xi_simscores_spectral_bound(wq: np.ndarray, wk: np.ndarray) -> float:
    """Input-independent bound on xi(S, .): sigma_max(|Wk|^T |Wq|) / sigma_min(Wk^T Wq)."""
    abs_smax, smax, smin = key_query_spectral(wq, wk)
    if smin <= TAU_SING * smax:
        raise SingularityError("key-query product is singular to working tolerance")
    return abs_smax / smin


def attention_cond_bound(cfg: net.TransformerConfig, x: np.ndarray,
                         normalized: bool = False) -> float:
    """Upper bound on the componentwise condition number of attention:
    xi(A, X) [1 + 4 ||B||_{2,2} max_t ||x_t||_2^2], with the max replaced
    by d when the input is known to be normalized."""
    xm = x if np.asarray(x).ndim == 2 else np.asarray(x)[:, None]
    xi = xi_attention(cfg, xm).value
    if xi == INF:
        return INF
    bnorm = sv_extremes((cfg.wk.T @ cfg.wq) / math.sqrt(cfg.d))[1]
    colsq = float(cfg.d) if normalized else float(np.max(np.sum(xm**2, axis=0)))
    return xi * (1.0 + 4.0 * bnorm * colsq)
