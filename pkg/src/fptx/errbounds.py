"""First-order rounding-error bounds for layers, blocks and deep stacks.

Every bound drops the quadratic remainders in the unit roundoff u and in
the incoming perturbation rho and returns the explicit first-order
coefficient; reports record this.  All xi factors, norm ratios and
spectral quantities are computed from exact (reference-arithmetic)
intermediates.  Lemma hypotheses are evaluated explicitly and reported;
a failed hypothesis marks the bound not applicable rather than raising.
Amplification factors may be infinite, in which case the bound is too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net
from .conditioning import (key_query_spectral, xi_attention, xi_residual_attention,
                           xi_residual_perceptron, xi_simscores, xi_tlp)
from .errors import PrecisionError
from .fparith import NATIVE, PrecisionSpec, gamma_value, unit_roundoff
from .jacobians import LayerKind
from .tensor import min_abs, rel_dist_columnwise, rel_dist_componentwise, vec_norm

INF = math.inf

# Hypotheses of the perturbed bounds are alpha-strengthened versions of
# the fresh ones ("sufficiently generic"); the strengthening factor is
# otherwise unspecified and checked at this default.
ALPHA_DEFAULT = 2.0

# Geometric-series constants of the deep bounds: per-block perturbation
# amplification 9 (RMS variant) and 16 (layer-norm variant).
RMS_BLOCK_RHO_FACTOR = 9.0
LN_BLOCK_RHO_FACTOR = 16.0


@dataclass
class BoundReport:
    """A first-order bound c_u * u + c_rho * rho_in with its ingredients.

    ``assumptions`` maps each checked hypothesis to a boolean;
    ``applicable`` is their conjunction.  ``value`` is the evaluated
    first-order bound (inf when an ingredient is infinite).
    """

    target: str
    u: float
    rho_in: float
    value: float
    coeff_u: float
    coeff_rho: float
    ingredients: dict = field(default_factory=dict)
    assumptions: dict = field(default_factory=dict)
    note: str = "first-order bound; O(u^2) and O(rho^2) remainders dropped"

    @property
    def applicable(self) -> bool:
        return all(self.assumptions.values())


def _report(target, u, rho_in, coeff_u, coeff_rho, ingredients, assumptions):
    # guard inf * 0 when an amplification factor is infinite
    value = coeff_u * u
    if rho_in:
        value += coeff_rho * rho_in
    return BoundReport(target, u, rho_in, value, coeff_u, coeff_rho,
                       ingredients, assumptions)


def _resolve_u(u) -> float:
    if isinstance(u, PrecisionSpec):
        return unit_roundoff(u)
    return float(u)


# ---------------------------------------------------------------------------
# building-block constants


def summation_bound(d: int, u) -> float:
    """Backward-error constant of recursive summation of d terms."""
    return gamma_value(d - 1, _resolve_u(u)) if d > 1 else 0.0


def matvec_bound(d: int, u) -> float:
    """Backward-error constant of a length-d matrix-vector product."""
    return gamma_value(d, _resolve_u(u))


def affine_bound(d: int, u) -> float:
    """Backward-error constant on A for the map x -> Ax + b."""
    u = _resolve_u(u)
    return u + (1.0 + u) * gamma_value(d, u)


# ---------------------------------------------------------------------------
# per-layer bounds


def bound_layer_fresh(kind: LayerKind, u, x=None, cfg=None) -> BoundReport:
    """First-order bound on the componentwise error of one layer evaluated
    at an exact input."""
    return bound_layer_perturbed(kind, u, 0.0, x=x, cfg=cfg, alpha=1.0)


def bound_layer_perturbed(kind: LayerKind, u, rho_in: float, x=None, cfg=None,
                          alpha: float = ALPHA_DEFAULT) -> BoundReport:
    """First-order bound on the componentwise error of one layer whose
    input carries a componentwise relative error ``rho_in``.

    With rho_in = 0 this reduces exactly to the fresh-input bound.
    """
    u = _resolve_u(u)
    if rho_in < 0 or not math.isfinite(rho_in):
        raise ValueError("rho_in must be finite and nonnegative")
    x = np.asarray(x, dtype=np.float64)

    if kind is LayerKind.RMSNORM:
        d = x.shape[0]
        ok = bool(np.any(x != 0.0))
        asm = {"x != 0": ok, "rho_in < 1": rho_in < 1.0}
        return _report("rmsnorm", u, rho_in, d / 2.0 + 3.0, 2.0, {"d": d}, asm)

    if kind is LayerKind.CENTRING:
        c = x - np.mean(x)
        mc = min_abs(c)
        asm = {"centring(x) generic": mc > 0.0}
        ratio = vec_norm(x, 1) / mc if mc > 0 else INF
        return _report("centring", u, rho_in, 1.0 + ratio, 1.0,
                       {"norm1_over_minabs": ratio}, asm)

    if kind is LayerKind.LAYERNORM:
        d = x.shape[0]
        c = x - np.mean(x)
        mc = min_abs(c)
        thresh = alpha * 2.0 * (1.0 + u) * gamma_value(d, u) * vec_norm(x, INF)
        asm = {"min|centring(x)| > alpha*2(1+u)gamma_d*max|x|": mc > thresh}
        if rho_in > 0:
            from .conditioning import condition_closed_form
            from .jacobians import LayerPoint
            kappa = condition_closed_form(LayerPoint.centring(x), "componentwise").value
            asm["rho_in <= (alpha-1)/(1+alpha*kappa)"] = (
                rho_in <= (alpha - 1.0) / (1.0 + alpha * kappa) if math.isfinite(kappa) else False)
        ratio1 = vec_norm(x, 1) / mc if mc > 0 else INF
        ratio_inf = vec_norm(x, INF) / mc if mc > 0 else INF
        return _report("layernorm", u, rho_in, d / 2.0 + 5.0 + 2.0 * ratio1,
                       3.0 * ratio_inf,
                       {"norm1_over_minabs": ratio1, "norminf_over_minabs": ratio_inf,
                        "remark_coeff": 3.0 * (1.0 + ratio_inf) * d}, asm)

    if kind is LayerKind.TLP:
        d = x.shape[0]
        y1 = cfg.a1 @ x + cfg.b1
        margin = affine_bound(d, u) * (np.abs(cfg.a1) @ np.abs(x) + np.abs(cfg.b1))
        ok = bool(np.all(np.abs(y1) > alpha * margin))
        omega = int(np.count_nonzero(y1 > 0))
        xi = xi_tlp(cfg, x).value
        asm = {"|L1(x)| > alpha*(u+(1+u)gamma_d)(|A1||x|+|b1|)": ok}
        if rho_in > 0:
            asm["output generic"] = xi < INF
        return _report("tlp", u, rho_in, xi * (d + omega + 2.0), xi,
                       {"xi_M": xi, "omega": omega, "d": d}, asm)

    if kind is LayerKind.SIMSCORES:
        xm = x if x.ndim == 2 else x[:, None]
        d = xm.shape[0]
        xi = xi_simscores(cfg, xm).value
        return _report("simscores", u, rho_in, xi * (3.0 * d + 1.0), xi,
                       {"xi_S": xi, "d": d}, {"scores generic": xi < INF})

    if kind is LayerKind.SOFTMAX:
        n = x.shape[0]
        sinf = vec_norm(x, INF)
        return _report("softmax", u, rho_in, n + 3.0, 2.0 * sinf,
                       {"n": n, "max_abs_score": sinf}, {})

    if kind is LayerKind.ATTENTION:
        return _bound_attention(u, rho_in, x, cfg)

    raise ValueError(f"no rounding-error bound for layer kind {kind}")


def _bound_attention(u: float, rho_in: float, x: np.ndarray,
                     cfg: net.TransformerConfig) -> BoundReport:
    xm = x if x.ndim == 2 else x[:, None]
    d, n = xm.shape
    xi_a = xi_attention(cfg, xm).value
    asm = {"attention output generic": xi_a < INF, "d >= 2": d >= 2}

    # fresh part: max over t of (2t + d + 3 + 2 ||S(X_t)||_inf xi(S, X_t) (3d+1))
    worst = 0.0
    for t in range(1, n + 1):
        xt = xm[:, :t]
        scores = net.similarity_scores(cfg.wq, cfg.wk, xt, NATIVE)
        xi_s = xi_simscores(cfg, xt).value
        term = 2.0 * t + d + 3.0 + 2.0 * vec_norm(scores, INF) * xi_s * (3.0 * d + 1.0)
        worst = max(worst, term)
    coeff_u = xi_a * worst

    ingredients = {"xi_A": xi_a, "fresh_coefficient": worst}
    if rho_in > 0:
        abs_smax, smax, smin = key_query_spectral(cfg.wq, cfg.wk)
        nonsing = smin > 0.0
        asm["WkWq nonsingular"] = nonsing
        colsq = float(np.max(np.sum(xm**2, axis=0)))
        spectral = 1.0 + (4.0 / math.sqrt(d)) * abs_smax * (smax / smin if nonsing else INF) * colsq
        # the admissible perturbation radius is non-constructive; the
        # surrogate rho_in <= 0.5 / kappa_cc is checked instead, with the
        # closed-form upper bound standing in for kappa (conservative)
        from .conditioning import attention_cond_bound
        kappa_ub = attention_cond_bound(cfg, xm)
        asm["rho_in <= 0.5/kappa_cc (surrogate radius)"] = (
            math.isfinite(kappa_ub) and rho_in <= 0.5 / kappa_ub)
        coeff_u = xi_a * spectral * (2.0 * n + 3.0 * d)
        coeff_rho = xi_a * spectral
        ingredients.update({"spectral_term": spectral, "max_col_norm_sq": colsq,
                            "sigma_max_abs": abs_smax, "sigma_max": smax,
                            "sigma_min": smin, "kappa_cc_upper_bound": kappa_ub})
        return _report("attention", u, rho_in, coeff_u, coeff_rho, ingredients, asm)
    return _report("attention", u, rho_in, coeff_u, 0.0, ingredients, asm)


# ---------------------------------------------------------------------------
# residual sub-blocks


def _spectral_term(cfg: net.TransformerConfig) -> tuple[float, dict, bool]:
    abs_smax, smax, smin = key_query_spectral(cfg.wq, cfg.wk)
    nonsing = smin > 0.0
    term = 1.0 + 4.0 * math.sqrt(cfg.d) * abs_smax * (smax / smin) if nonsing else INF
    return term, {"sigma_max_abs": abs_smax, "sigma_max": smax, "sigma_min": smin}, nonsing


def _ln_ratio(v: np.ndarray) -> float:
    c = v - np.mean(v)
    mc = min_abs(c)
    return vec_norm(v, INF) / mc if mc > 0 else INF


def _centring_hyp(v: np.ndarray, u: float, alpha: float) -> bool:
    c = v - np.mean(v)
    d = v.shape[0]
    return min_abs(c) > alpha * 2.0 * (1.0 + u) * gamma_value(d, u) * vec_norm(v, INF)


def bound_residual_attention(cfg: net.TransformerConfig, x: np.ndarray, u,
                             variant: net.NormVariant, rho_in: float = 0.0,
                             alpha: float = ALPHA_DEFAULT) -> BoundReport:
    """Bound for the attention sub-block X + A(norm*(X))."""
    u = _resolve_u(u)
    xm = np.asarray(x, dtype=np.float64)
    if xm.ndim == 1:
        xm = xm[:, None]
    d, n = xm.shape
    spectral, spec_ing, nonsing = _spectral_term(cfg)
    xi_fa = xi_residual_attention(cfg, xm, variant).value
    normed = net.rms_norm(xm, NATIVE) if variant is net.NormVariant.RMS \
        else net.layer_norm(xm, NATIVE)
    xi_a = xi_attention(cfg, normed).value
    asm = {"WkWq nonsingular": nonsing, "d >= 2": d >= 2,
           "A(norm(X)) generic": xi_a < INF}
    ing = {"xi_residual": xi_fa, "xi_A": xi_a, "spectral_term": spectral, **spec_ing}

    if variant is net.NormVariant.RMS:
        base = xi_fa * xi_a * spectral
        return _report("residual_attention_rms", u, rho_in, base * (2.0 * n + 6.0 * d),
                       base * 3.0, ing, asm)

    ratio = max(_ln_ratio(xm[:, t]) for t in range(n))
    asm["centring hypothesis at every column"] = all(
        _centring_hyp(xm[:, t], u, alpha) for t in range(n))
    ing["max_ln_ratio"] = ratio
    base = xi_fa * xi_a * spectral * (1.0 + ratio)
    return _report("residual_attention_ln", u, rho_in, base * (2.0 * n + 7.0 * d),
                   base * 4.0, ing, asm)


def bound_residual_perceptron(cfg: net.TransformerConfig, x: np.ndarray, u,
                              variant: net.NormVariant, rho_in: float = 0.0,
                              alpha: float = ALPHA_DEFAULT) -> BoundReport:
    """Bound for the perceptron sub-block x + M(norm(x)) at one column."""
    u = _resolve_u(u)
    xv = np.asarray(x, dtype=np.float64).ravel()
    d = xv.shape[0]
    normed = net.rms_norm(xv, NATIVE) if variant is net.NormVariant.RMS \
        else net.layer_norm(xv, NATIVE)
    y1 = cfg.a1 @ normed + cfg.b1
    omega = int(np.count_nonzero(y1 > 0))
    margin = affine_bound(d, u) * (np.abs(cfg.a1) @ np.abs(normed) + np.abs(cfg.b1))
    hyp_tlp = bool(np.all(np.abs(y1) > alpha * margin))
    xi_fm = xi_residual_perceptron(cfg, xv, variant).value
    xi_m = xi_tlp(cfg, normed).value
    asm = {"|L1(norm(x))| sufficiently generic": hyp_tlp,
           "M(norm(x)) generic": xi_m < INF}
    ing = {"xi_residual": xi_fm, "xi_M": xi_m, "omega": omega}

    if variant is net.NormVariant.RMS:
        base = xi_fm * xi_m
        return _report("residual_perceptron_rms", u, rho_in, base * (5.0 * d + omega),
                       base * 3.0, ing, asm)

    asm["centring hypothesis"] = _centring_hyp(xv, u, alpha)
    ratio = _ln_ratio(xv)
    ing["ln_ratio"] = ratio
    base = xi_fm * xi_m * (1.0 + ratio)
    return _report("residual_perceptron_ln", u, rho_in, base * (6.0 * d + omega),
                   base * 4.0, ing, asm)


# ---------------------------------------------------------------------------
# block and deep bounds


@dataclass
class BlockProfile:
    """u-independent ingredients of one block's bound: the amplification
    factor, genericity flags, and the hypothesis margins whose thresholds
    depend on the unit roundoff.

    ``centring_margin`` is the minimum over columns of
    min|centring(v)| / ||v||_inf at X and Y (layer-norm variant only) and
    must exceed alpha * 2 (1+u) gamma_d; ``tlp_margin`` is the minimum
    entrywise ratio |L1(norm(y_t))| / (|A1||norm(y_t)| + |b1|) and must
    exceed alpha * (u + (1+u) gamma_d).
    """

    d: int
    n: int
    factor: float
    ingredients: dict
    generic: dict
    centring_margin: float  # inf for the RMS variant
    tlp_margin: float


def _min_centring_margin(x: np.ndarray) -> float:
    c = x - np.mean(x, axis=0)[None, :]
    num = np.min(np.abs(c), axis=0)
    den = np.max(np.abs(x), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(den > 0, num / den, 0.0)
    return float(np.min(ratios))


def block_profile(cfg: net.TransformerConfig, x: np.ndarray,
                  variant: net.NormVariant) -> BlockProfile:
    """Compute one block's amplification factor and hypothesis margins from
    exact intermediates (the factor is the product of xi factors, the
    spectral term and, for the layer-norm variant, the two norm-ratio
    terms)."""
    from .conditioning import exact_norm_cols, exact_attention

    xm = x if x.ndim == 2 else x[:, None]
    d, n = xm.shape
    rms = variant is net.NormVariant.RMS
    spectral, spec_ing, nonsing = _spectral_term(cfg)
    generic = {"WkWq nonsingular": nonsing, "d >= 2": d >= 2}
    ing = {"spectral_term": spectral, **spec_ing}

    normalizable = bool(np.all(np.any(xm != 0.0, axis=0))) if rms else \
        bool(np.all(np.std(xm, axis=0) > 0.0))
    generic["normalizable columns at X"] = normalizable
    if not normalizable:
        return BlockProfile(d, n, INF, ing, generic, 0.0, 0.0)

    normed = exact_norm_cols(xm, variant)
    xi_a = xi_attention(cfg, normed).value
    xi_ra = xi_residual_attention(cfg, xm, variant).value
    generic["A(norm(X)) generic"] = xi_a < INF

    y = xm + exact_attention(cfg, normed)
    normalizable_y = bool(np.all(np.any(y != 0.0, axis=0))) if rms else \
        bool(np.all(np.std(y, axis=0) > 0.0))
    generic["normalizable columns at Y"] = normalizable_y
    if not normalizable_y:
        return BlockProfile(d, n, INF, ing, generic, 0.0, 0.0)

    ynorm = exact_norm_cols(y, variant)
    y1 = cfg.a1 @ ynorm + cfg.b1[:, None]
    denom = np.abs(cfg.a1) @ np.abs(ynorm) + np.abs(cfg.b1)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(denom > 0, np.abs(y1) / denom, INF)
    tlp_margin = float(np.min(ratios))

    xi_m_worst = 0.0
    for t in range(n):
        xi_m_worst = max(xi_m_worst,
                         xi_residual_perceptron(cfg, y[:, t], variant).value
                         * xi_tlp(cfg, ynorm[:, t]).value)

    factor = xi_m_worst * xi_ra * xi_a * spectral
    ing.update({"xi_A": xi_a, "xi_residual_attention": xi_ra,
                "max_xi_perceptron_product": xi_m_worst})
    centring_margin = INF
    if not rms:
        rx = max(_ln_ratio(xm[:, t]) for t in range(n))
        ry = max(_ln_ratio(y[:, t]) for t in range(n))
        factor *= (1.0 + rx) * (1.0 + ry)
        ing["ln_ratio_x"] = rx
        ing["ln_ratio_y"] = ry
        centring_margin = min(_min_centring_margin(xm), _min_centring_margin(y))
    return BlockProfile(d, n, factor, ing, generic, centring_margin, tlp_margin)


def block_hypotheses(profile: BlockProfile, u: float,
                     alpha: float = ALPHA_DEFAULT) -> dict:
    """Evaluate the u-dependent lemma hypotheses recorded in a profile."""
    asm = dict(profile.generic)
    if not all(asm.values()):
        asm["centring hypothesis"] = False
        asm["perceptron pre-activation sufficiently generic"] = False
        return asm
    if math.isfinite(profile.centring_margin):
        asm["centring hypothesis"] = (
            profile.centring_margin > alpha * 2.0 * (1.0 + u) * gamma_value(profile.d, u))
    asm["perceptron pre-activation sufficiently generic"] = (
        profile.tlp_margin > alpha * affine_bound(profile.d, u))
    return asm


def block_coeffs(d: int, n: int, hidden: int, variant: net.NormVariant) -> tuple[float, float]:
    """(u-coefficient, rho-coefficient) of the block bound."""
    if variant is net.NormVariant.RMS:
        return 6.0 * n + 23.0 * d + hidden, RMS_BLOCK_RHO_FACTOR
    return 8.0 * n + 34.0 * d + hidden, LN_BLOCK_RHO_FACTOR


def bound_block(cfg: net.TransformerConfig, x: np.ndarray, u,
                variant: net.NormVariant = net.NormVariant.LAYER,
                rho_in: float = 0.0, alpha: float = ALPHA_DEFAULT) -> BoundReport:
    """First-order bound on the componentwise error of one transformer block."""
    u = _resolve_u(u)
    xm = np.asarray(x, dtype=np.float64)
    if xm.ndim == 1:
        xm = xm[:, None]
    d, n = xm.shape
    profile = block_profile(cfg, xm, variant)
    asm = block_hypotheses(profile, u, alpha)
    cu, crho = block_coeffs(d, n, cfg.hidden, variant)
    name = "block_rms" if variant is net.NormVariant.RMS else "block_ln"
    return _report(name, u, rho_in, profile.factor * cu, profile.factor * crho,
                   profile.ingredients, asm)


def deep_profiles(deep: net.DeepConfig, x0: np.ndarray) -> list[BlockProfile]:
    """Per-layer block profiles along the exact trajectory of the stack."""
    xm = np.asarray(x0, dtype=np.float64)
    if xm.ndim == 1:
        xm = xm[:, None]
    profiles = []
    current = xm
    for cfg in deep.blocks:
        profiles.append(block_profile(cfg, current, deep.variant))
        current = net.transformer_block(cfg, current, NATIVE, deep.variant,
                                        deep.placement)
    return profiles


def deep_bound_from_profiles(profiles: list[BlockProfile], hidden: int,
                             variant: net.NormVariant, u: float,
                             alpha: float = ALPHA_DEFAULT):
    """(per-prefix bounds, per-prefix applicability) at unit roundoff u.

    The bound after l blocks is prod_{k<=l} factor_k * geom^l/(geom-1) * c u
    with geom = 9 (RMS) / 16 (layer norm) and c the block coefficient; a
    prefix is applicable when every constituent layer's hypotheses hold.
    """
    rms = variant is net.NormVariant.RMS
    geom = RMS_BLOCK_RHO_FACTOR if rms else LN_BLOCK_RHO_FACTOR
    bounds, applicable = [], []
    prod, ok = 1.0, True
    for l, prof in enumerate(profiles, start=1):
        cu, _ = block_coeffs(prof.d, prof.n, hidden, variant)
        prod *= prof.factor
        ok = ok and all(block_hypotheses(prof, u, alpha).values())
        bounds.append(prod * (geom ** l / (geom - 1.0)) * cu * u)
        applicable.append(ok)
    return bounds, applicable


def bound_deep(deep: net.DeepConfig, x0: np.ndarray, u,
               alpha: float = ALPHA_DEFAULT, per_layer: bool = False) -> BoundReport:
    """First-order bound for the deep stack (exact input at the first layer).

    With ``per_layer`` the report's ingredients carry the bound after each
    prefix of blocks, evaluated with the same per-layer factors.
    """
    u = _resolve_u(u)
    profiles = deep_profiles(deep, x0)
    hidden = deep.blocks[0].hidden if deep.blocks else 0
    bounds, applicable = deep_bound_from_profiles(profiles, hidden, deep.variant,
                                                  u, alpha)
    assumptions = {}
    for l, prof in enumerate(profiles, start=1):
        for key, val in block_hypotheses(prof, u, alpha).items():
            assumptions[f"layer {l}: {key}"] = val
    value = bounds[-1] if bounds else 0.0
    geom = RMS_BLOCK_RHO_FACTOR if deep.variant is net.NormVariant.RMS \
        else LN_BLOCK_RHO_FACTOR
    ing = {"per_layer_factors": [p.factor for p in profiles],
           "geometric_base": geom}
    if per_layer:
        ing["per_layer_bounds"] = bounds
        ing["per_layer_applicable"] = applicable
    name = "deep_rms" if deep.variant is net.NormVariant.RMS else "deep_ln"
    return BoundReport(name, u, 0.0, value, value / u if u else 0.0, 0.0,
                       ing, assumptions)


# ---------------------------------------------------------------------------
# measurement


def measure_error(evaluate, spec_low: PrecisionSpec,
                  spec_ref: PrecisionSpec = NATIVE) -> tuple[float, float]:
    """Run ``evaluate(spec)`` under both precisions and return the
    componentwise and columnwise-l2 relative distances of the outputs.

    The reference must be at least six orders of magnitude finer than the
    simulated precision for the measurement to be meaningful (identical
    specs are allowed and give exact zeros).
    """
    u_low = unit_roundoff(spec_low)
    u_ref = unit_roundoff(spec_ref)
    if spec_low != spec_ref and u_ref > u_low * 1e-6:
        raise PrecisionError(
            f"reference precision (u={u_ref:g}) is not sufficiently finer "
            f"than the simulated one (u={u_low:g})")
    low = np.asarray(evaluate(spec_low), dtype=np.float64)
    ref = np.asarray(evaluate(spec_ref), dtype=np.float64)
    return rel_dist_componentwise(low, ref), rel_dist_columnwise(low, ref)
