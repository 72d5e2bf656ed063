"""Experiment harness: random instances, the four experiments, summary
statistics and CSV emission.

Reproducibility contract: every random quantity is a deterministic
function of (seed, rep_index).  Streams are Philox counter-based with the
128-bit key (seed, rep_index), and normal variates come from a frozen
Box-Muller transform of the uniform stream, so results do not depend on
library internals, evaluation order across reps, or the number of worker
processes.

CSV schema (one header row, comma-separated):

    experiment, seed, rep_count, precision_mode, precision_value, variant,
    placement, grid_name, grid_value, layer, metric, stat, value, count_inf

``metric`` is cw (componentwise) or nw (columnwise l2).  ``stat`` is one
of mean, median, p5, p95, std, bound_mean, or hist_count for the
final-layer histogram rows of the depth sweep (there ``grid_name`` is
log10_err_bin and ``grid_value`` the bin centre).  ``count_inf``
discloses how many non-finite samples were excluded from the statistic.
Row order is deterministic: precision, then grid value, then layer.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import errbounds, net
from .errors import DegenerateInputError, DomainError, EmptyStatsError
from .fparith import NATIVE, PrecisionSpec, unit_roundoff
from .tensor import rel_dist_componentwise, rel_dist_normwise

INF = math.inf

EXPERIMENTS = ("depth_sweep", "wkwq_scaling", "attention_input_scaling",
               "normalization_placement")

CSV_COLUMNS = ("experiment", "seed", "rep_count", "precision_mode",
               "precision_value", "variant", "placement", "grid_name",
               "grid_value", "layer", "metric", "stat", "value", "count_inf")

HIST_BINS = 40

_FIGURE_NAMES = {1: "depth_sweep", 2: "wkwq_scaling",
                 3: "attention_input_scaling", 4: "normalization_placement"}


@dataclass(frozen=True)
class ExperimentSpec:
    """Complete description of one experiment run; the seed fully
    determines all randomness."""

    which: str
    d: int
    n: int
    hidden: int
    depth: int
    precisions: tuple[PrecisionSpec, ...]
    reps: int
    seed: int
    variant: net.NormVariant = net.NormVariant.LAYER
    grid: tuple[float, ...] = ()
    depths: tuple[int, ...] = ()       # wkwq_scaling sweeps these depths
    shifted_softmax: bool = False
    compute_bounds: bool = True

    def __post_init__(self):
        if self.which not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.which!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.which in ("wkwq_scaling", "attention_input_scaling") and not self.grid:
            raise ValueError("this experiment needs a nonempty grid")
        if self.which == "wkwq_scaling":
            if not self.depths:
                raise ValueError("wkwq_scaling needs a nonempty depths list")
            if max(self.depths) > self.depth:
                raise ValueError("swept depths cannot exceed the instance depth")

    @classmethod
    def figure(cls, fig: int, **overrides) -> "ExperimentSpec":
        """Default desk-scale configuration for one of the four figures."""
        dec = lambda *digits: tuple(PrecisionSpec.decimal(s) for s in digits)
        if fig == 1:
            base = dict(which="depth_sweep", d=20, n=20, hidden=20, depth=40,
                        precisions=dec(4, 6, 8), reps=200, seed=2024)
        elif fig == 2:
            # one decade of key-query scalings, placed below the softmax
            # saturation point of this instance family
            base = dict(which="wkwq_scaling", d=20, n=20, hidden=20, depth=20,
                        precisions=dec(6), reps=100, seed=2024,
                        grid=tuple(float(g) for g in
                                   np.round(10.0 ** np.linspace(np.log10(0.05),
                                                                np.log10(0.5), 7), 12)),
                        depths=(10, 20))
        elif fig == 3:
            base = dict(which="attention_input_scaling", d=10, n=10, hidden=10,
                        depth=1, precisions=dec(4, 6, 8), reps=100, seed=2024,
                        grid=tuple(float(g) for g in np.round(10.0 ** np.linspace(0, 3, 7), 12)),
                        shifted_softmax=True)
        elif fig == 4:
            base = dict(which="normalization_placement", d=10, n=10, hidden=10,
                        depth=20, precisions=dec(4, 6, 8), reps=100, seed=2024)
        else:
            raise ValueError("figure must be 1..4")
        base.update(overrides)
        return cls(**base)


@dataclass
class ErrorStats:
    """Summary of a sample of relative errors; statistics cover the finite
    samples only, with the number of excluded non-finite samples disclosed."""

    mean: float
    median: float
    p5: float
    p95: float
    std: float
    count: int
    count_inf: int
    hist_edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    hist_counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def summarize(samples, histogram: bool = False) -> ErrorStats:
    """Percentiles use linear interpolation of order statistics; the
    histogram covers log10 of the positive finite samples in 40 equal bins."""
    arr = np.asarray(list(samples), dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    count_inf = int(arr.size - finite.size)
    if finite.size == 0:
        raise EmptyStatsError("no finite samples to summarize")
    stats = ErrorStats(
        mean=float(np.mean(finite)),
        median=float(np.median(finite)),
        p5=float(np.percentile(finite, 5)),
        p95=float(np.percentile(finite, 95)),
        std=float(np.std(finite)),
        count=int(finite.size),
        count_inf=count_inf,
    )
    if histogram:
        pos = finite[finite > 0]
        if pos.size:
            logs = np.log10(pos)
            lo, hi = float(np.min(logs)), float(np.max(logs))
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
            counts, edges = np.histogram(logs, bins=HIST_BINS, range=(lo, hi))
            stats.hist_edges = edges
            stats.hist_counts = counts
    return stats


# ---------------------------------------------------------------------------
# randomness


def _stream(seed: int, rep: int) -> np.random.Generator:
    key = np.array([seed, rep], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal(rng: np.random.Generator, shape, mean: float = 0.0,
           std: float = 1.0) -> np.ndarray:
    """Frozen Box-Muller transform over the uniform stream."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)           # (0, 1]: keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(2.0 * np.pi * u2),
                        radius * np.sin(2.0 * np.pi * u2)])[:count]
    return (mean + std * z).reshape(shape)


def gen_instance(spec: ExperimentSpec, rep: int) -> tuple[net.DeepConfig, np.ndarray]:
    """Deterministic instance for (spec.seed, rep).

    depth_sweep / wkwq_scaling: attention matrices with unit-variance
    normal entries, key/query post-multiplied by diagonal matrices with
    uniform [1/4, 4] entries to worsen the key-query conditioning,
    perceptron matrices with variance 1/sqrt(d), zero biases, unit-variance
    normal input.  attention_input_scaling: identity weights and input
    entries distributed N(1, 0.01).  normalization_placement: all weight
    matrices with variance 0.1, unit-variance input.
    """
    rng = _stream(spec.seed, rep)
    d, n, hid = spec.d, spec.n, spec.hidden
    blocks = []
    if spec.which in ("depth_sweep", "wkwq_scaling"):
        perc_std = (1.0 / math.sqrt(d)) ** 0.5
        for _ in range(spec.depth):
            wq = normal(rng, (d, d))
            wk = normal(rng, (d, d))
            wv = normal(rng, (d, d))
            d1 = rng.random(d) * 3.75 + 0.25
            d2 = rng.random(d) * 3.75 + 0.25
            wk = wk * d1[None, :]
            wq = wq * d2[None, :]
            a1 = normal(rng, (hid, d), std=perc_std)
            a2 = normal(rng, (d, hid), std=perc_std)
            blocks.append(net.TransformerConfig(
                a1, np.zeros(hid), a2, np.zeros(d), wq, wk, wv))
        x0 = normal(rng, (d, n))
    elif spec.which == "attention_input_scaling":
        eye = np.eye(d)
        blocks.append(net.TransformerConfig(
            np.zeros((hid, d)), np.zeros(hid), np.zeros((d, hid)), np.zeros(d),
            eye.copy(), eye.copy(), eye.copy()))
        x0 = normal(rng, (d, n), mean=1.0, std=0.1)
    elif spec.which == "normalization_placement":
        wstd = math.sqrt(0.1)
        for _ in range(spec.depth):
            wq = normal(rng, (d, d), std=wstd)
            wk = normal(rng, (d, d), std=wstd)
            wv = normal(rng, (d, d), std=wstd)
            a1 = normal(rng, (hid, d), std=wstd)
            a2 = normal(rng, (d, hid), std=wstd)
            blocks.append(net.TransformerConfig(
                a1, np.zeros(hid), a2, np.zeros(d), wq, wk, wv))
        x0 = normal(rng, (d, n))
    else:
        raise ValueError(spec.which)
    deep = net.DeepConfig(tuple(blocks), spec.variant, net.NormPlacement.PRE)
    return deep, x0


# ---------------------------------------------------------------------------
# per-rep payloads (top-level functions so worker processes can pickle them)


def _nw_error(low: np.ndarray, ref: np.ndarray) -> float:
    worst = 0.0
    for t in range(ref.shape[1]):
        col = ref[:, t]
        if np.all(col == 0.0):
            if np.any(low[:, t] != 0.0):
                return INF
            continue
        if not np.all(np.isfinite(low[:, t])):
            return INF
        worst = max(worst, rel_dist_normwise(low[:, t], col))
    return worst


def _taps_errors(deep, x0, prec, ref_taps):
    """Per-layer (cw, nw) errors of a low-precision pass against reference
    taps; a degenerate failure at layer l marks layers l..L as infinite."""
    depth = deep.depth
    cw = np.full(depth, INF)
    nw = np.full(depth, INF)
    x = x0
    try:
        for l, cfg in enumerate(deep.blocks):
            x = net.transformer_block(cfg, x, prec, deep.variant, deep.placement)
            cw[l] = rel_dist_componentwise(x, ref_taps[l])
            nw[l] = _nw_error(x, ref_taps[l])
    except (DegenerateInputError, DomainError):
        pass
    return cw, nw


def _depth_sweep_rep(spec: ExperimentSpec, rep: int) -> dict:
    deep, x0 = gen_instance(spec, rep)
    try:
        _, ref_taps = net.deep_transformer(deep, x0, NATIVE, collect=True)
    except (DegenerateInputError, DomainError):
        # the exact pass itself is unevaluable under this model (e.g. the
        # unshifted softmax overflows); disclose the whole repetition
        bad = (np.full(spec.depth, INF), np.full(spec.depth, INF))
        payload = {"errors": {p.label: bad for p in spec.precisions}}
        if spec.compute_bounds:
            payload["bounds"] = {p.label: [INF] * spec.depth
                                 for p in spec.precisions}
        return payload
    payload = {"errors": {}}
    for prec in spec.precisions:
        payload["errors"][prec.label] = _taps_errors(deep, x0, prec, ref_taps)
    if spec.compute_bounds:
        # The per-layer amplification factors do not depend on u, so the
        # profile is computed once and the u-dependent hypothesis checks
        # are evaluated per precision.
        profiles = errbounds.deep_profiles(deep, x0)
        hidden = deep.blocks[0].hidden
        rep_bounds = {}
        for prec in spec.precisions:
            bounds, ok = errbounds.deep_bound_from_profiles(
                profiles, hidden, deep.variant, unit_roundoff(prec))
            rep_bounds[prec.label] = [b if good else INF
                                      for b, good in zip(bounds, ok)]
        payload["bounds"] = rep_bounds
    return payload


def _wkwq_rep(spec: ExperimentSpec, rep: int) -> dict:
    deep, x0 = gen_instance(spec, rep)
    out = {}
    for depth in spec.depths:
        trunc = net.DeepConfig(deep.blocks[:depth], deep.variant, deep.placement)
        for lam in spec.grid:
            scaled = net.DeepConfig(
                tuple(replace_wq(cfg, lam) for cfg in trunc.blocks),
                deep.variant, deep.placement)
            ref = _safe_pass(scaled, x0, NATIVE)
            for prec in spec.precisions:
                low = _safe_pass(scaled, x0, prec)
                if ref is None or low is None:
                    out[(depth, lam, prec.label)] = (INF, INF)
                else:
                    out[(depth, lam, prec.label)] = (
                        rel_dist_componentwise(low, ref), _nw_error(low, ref))
    return out


def replace_wq(cfg: net.TransformerConfig, lam: float) -> net.TransformerConfig:
    return net.TransformerConfig(cfg.a1, cfg.b1, cfg.a2, cfg.b2,
                                 lam * cfg.wq, cfg.wk, cfg.wv)


def _safe_pass(deep, x0, prec):
    try:
        return net.deep_transformer(deep, x0, prec)
    except (DegenerateInputError, DomainError):
        return None


def _attention_scaling_rep(spec: ExperimentSpec, rep: int) -> dict:
    deep, x0 = gen_instance(spec, rep)
    cfg = deep.blocks[0]
    out = {}
    for scale in spec.grid:
        x = scale * x0
        try:
            ref = net.self_attention(cfg.wq, cfg.wk, cfg.wv, x, NATIVE,
                                     shifted=spec.shifted_softmax)
        except DomainError:
            ref = None
        for prec in spec.precisions:
            if ref is None:
                out[(scale, prec.label)] = (INF, INF)
                continue
            try:
                low = net.self_attention(cfg.wq, cfg.wk, cfg.wv, x, prec,
                                         shifted=spec.shifted_softmax)
                out[(scale, prec.label)] = (
                    rel_dist_componentwise(low, ref), _nw_error(low, ref))
            except DomainError:
                out[(scale, prec.label)] = (INF, INF)
    return out


def _placement_rep(spec: ExperimentSpec, rep: int) -> dict:
    deep, x0 = gen_instance(spec, rep)
    out = {}
    for placement in (net.NormPlacement.PRE, net.NormPlacement.POST):
        placed = net.DeepConfig(deep.blocks, deep.variant, placement)
        try:
            _, ref_taps = net.deep_transformer(placed, x0, NATIVE, collect=True)
        except (DegenerateInputError, DomainError):
            bad = (np.full(spec.depth, INF), np.full(spec.depth, INF))
            for prec in spec.precisions:
                out[(placement.value, prec.label)] = bad
            continue
        for prec in spec.precisions:
            out[(placement.value, prec.label)] = _taps_errors(placed, x0, prec, ref_taps)
    return out


_REP_WORKERS = {
    "depth_sweep": _depth_sweep_rep,
    "wkwq_scaling": _wkwq_rep,
    "attention_input_scaling": _attention_scaling_rep,
    "normalization_placement": _placement_rep,
}


def _collect_reps(spec: ExperimentSpec, workers: int) -> list:
    worker = _REP_WORKERS[spec.which]
    reps = range(spec.reps)
    if workers <= 1:
        return [worker(spec, r) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, spec, r) for r in reps]
        return [f.result() for f in futures]   # rep order, not completion order


# ---------------------------------------------------------------------------
# experiment runners (each returns rows following the CSV schema)


def _base_row(spec: ExperimentSpec, prec: PrecisionSpec, placement="pre") -> dict:
    mode, _, value = (prec.label.partition(":"))
    return {
        "experiment": spec.which,
        "seed": spec.seed,
        "rep_count": spec.reps,
        "precision_mode": {"b": "binary", "d": "decimal"}.get(mode, "native"),
        "precision_value": value or "0",
        "variant": spec.variant.value,
        "placement": placement,
        "grid_name": "",
        "grid_value": "",
        "layer": "",
        "metric": "",
        "stat": "",
        "value": "",
        "count_inf": "0",
    }


def _fmt(v: float) -> str:
    return repr(float(v))


def _stat_rows(base: dict, stats: ErrorStats, metric: str) -> list[dict]:
    rows = []
    for stat in ("mean", "median", "p5", "p95", "std"):
        row = dict(base)
        row.update(metric=metric, stat=stat, value=_fmt(getattr(stats, stat)),
                   count_inf=str(stats.count_inf))
        rows.append(row)
    return rows


def _stat_rows_safe(base: dict, samples, metric: str, total: int) -> list[dict]:
    """Like _stat_rows, but an all-infinite sample produces a single row
    with an empty value and full count_inf instead of failing."""
    try:
        return _stat_rows(base, summarize(samples), metric)
    except EmptyStatsError:
        row = dict(base)
        row.update(metric=metric, stat="mean", value="", count_inf=str(total))
        return [row]


def run_depth_sweep(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Per-layer error statistics, per-layer mean bound, and a final-layer
    histogram, for every precision."""
    payloads = _collect_reps(spec, workers)
    rows: list[dict] = []
    for prec in spec.precisions:
        label = prec.label
        cw = np.stack([p["errors"][label][0] for p in payloads])  # (reps, L)
        nw = np.stack([p["errors"][label][1] for p in payloads])
        for layer in range(spec.depth):
            base = _base_row(spec, prec)
            base["layer"] = str(layer + 1)
            rows.extend(_stat_rows_safe(base, cw[:, layer], "cw", spec.reps))
            rows.extend(_stat_rows_safe(base, nw[:, layer], "nw", spec.reps))
            if spec.compute_bounds:
                vals = [p["bounds"][label][layer] for p in payloads]
                finite = [v for v in vals if math.isfinite(v)]
                row = dict(base)
                row.update(metric="cw", stat="bound_mean",
                           value=_fmt(np.mean(finite)) if finite else "",
                           count_inf=str(spec.reps - len(finite)))
                rows.append(row)
        # final-layer histogram
        try:
            stats = summarize(cw[:, -1], histogram=True)
        except EmptyStatsError:
            continue
        centres = 0.5 * (stats.hist_edges[:-1] + stats.hist_edges[1:])
        for centre, count in zip(centres, stats.hist_counts):
            row = _base_row(spec, prec)
            row.update(layer=str(spec.depth), metric="cw", stat="hist_count",
                       grid_name="log10_err_bin", grid_value=_fmt(centre),
                       value=_fmt(count), count_inf=str(stats.count_inf))
            rows.append(row)
    return rows


def run_wkwq_scaling(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Final-layer error statistics per (depth, lambda, precision); the
    layer column carries the depth at which the output is taken."""
    payloads = _collect_reps(spec, workers)
    rows: list[dict] = []
    for prec in spec.precisions:
        for lam in spec.grid:
            for depth in spec.depths:
                key = (depth, lam, prec.label)
                cw = [p[key][0] for p in payloads]
                nw = [p[key][1] for p in payloads]
                base = _base_row(spec, prec)
                base.update(grid_name="lambda", grid_value=_fmt(lam),
                            layer=str(depth))
                rows.extend(_stat_rows_safe(base, cw, "cw", spec.reps))
                rows.extend(_stat_rows_safe(base, nw, "nw", spec.reps))
    return rows


def run_attention_input_scaling(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Error statistics of a single attention application at X <- s X."""
    payloads = _collect_reps(spec, workers)
    rows: list[dict] = []
    for prec in spec.precisions:
        for scale in spec.grid:
            cw = [p[(scale, prec.label)][0] for p in payloads]
            nw = [p[(scale, prec.label)][1] for p in payloads]
            base = _base_row(spec, prec)
            base.update(grid_name="scale", grid_value=_fmt(scale), layer="1")
            rows.extend(_stat_rows_safe(base, cw, "cw", spec.reps))
            rows.extend(_stat_rows_safe(base, nw, "nw", spec.reps))
    return rows


def run_normalization_placement(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Per-layer statistics for the pre- and post-attention placements on
    identical instances (shared seed makes the comparison paired)."""
    payloads = _collect_reps(spec, workers)
    rows: list[dict] = []
    for prec in spec.precisions:
        for placement in ("pre", "post"):
            cw = np.stack([p[(placement, prec.label)][0] for p in payloads])
            nw = np.stack([p[(placement, prec.label)][1] for p in payloads])
            for layer in range(spec.depth):
                base = _base_row(spec, prec, placement=placement)
                base["layer"] = str(layer + 1)
                rows.extend(_stat_rows_safe(base, cw[:, layer], "cw", spec.reps))
                rows.extend(_stat_rows_safe(base, nw[:, layer], "nw", spec.reps))
    return rows


_RUNNERS = {
    "depth_sweep": run_depth_sweep,
    "wkwq_scaling": run_wkwq_scaling,
    "attention_input_scaling": run_attention_input_scaling,
    "normalization_placement": run_normalization_placement,
}


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    return _RUNNERS[spec.which](spec, workers)


# ---------------------------------------------------------------------------
# CSV and config files


def emit_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "which": spec.which,
        "dims": {"d": spec.d, "n": spec.n, "hidden": spec.hidden,
                 "depth": spec.depth},
        "precisions": [p.label for p in spec.precisions],
        "reps": spec.reps,
        "seed": spec.seed,
        "variant": spec.variant.value,
        "grid": [float(g) for g in spec.grid],
        "depths": [int(x) for x in spec.depths],
        "shifted_softmax": spec.shifted_softmax,
        "compute_bounds": spec.compute_bounds,
    }


def spec_from_dict(data: dict) -> ExperimentSpec:
    dims = data.get("dims", {})
    return ExperimentSpec(
        which=data["which"],
        d=int(dims.get("d", 8)),
        n=int(dims.get("n", 8)),
        hidden=int(dims.get("hidden", 8)),
        depth=int(dims.get("depth", 4)),
        precisions=tuple(PrecisionSpec.parse(p) for p in data.get("precisions", ["d:6"])),
        reps=int(data.get("reps", 100)),
        seed=int(data.get("seed", 0)),
        variant=net.NormVariant(data.get("variant", "ln")),
        grid=tuple(float(g) for g in data.get("grid", [])),
        depths=tuple(int(x) for x in data.get("depths", [])),
        shifted_softmax=bool(data.get("shifted_softmax", False)),
        compute_bounds=bool(data.get("compute_bounds", True)),
    )


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        return spec_from_dict(yaml.safe_load(fh))


def save_config(spec: ExperimentSpec, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(spec_to_dict(spec), fh, sort_keys=False)
