"""Stochastic metapopulation simulator and viability metrics.

This is the black-box oracle behind the optimization models: given the
patches of a habitat it runs seeded Monte Carlo population trajectories and
reports three viability metrics, namely the risk of total extinction, the
median time to extinction, and the expected minimum abundance.

Per-patch dynamics are Ricker growth with Poisson demographic noise and
lognormal environmental noise, coupled by binomial emigration spread over an
exponential distance kernel between patch centroids. Carrying capacity is
proportional to a patch's total habitat suitability, so larger, better
connected habitat supports larger populations. Every parameter of the
dynamics is configuration, so the simulator can be swapped out wholesale
without touching the optimization layers.

Reproducibility contract: a simulation batch is a pure function of
(patches, config, eval_seed). Replicates are processed in fixed blocks of
`REPLICATE_BLOCK`; block b draws from the generator seeded by
(eval_seed, spawn_key=(b,)), and results are reduced in block order, so the
outcome is bit-identical regardless of worker count or scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import IO, Sequence

import numpy as np

# Replicates per RNG block. Fixed: changing it changes every stochastic
# result, exactly like changing the seed would.
REPLICATE_BLOCK = 256


@dataclass(frozen=True)
class PvaConfig:
    """Simulation parameters. Defaults give a 100-year, 1000-replicate run."""

    horizon: int = 100
    replicates: int = 1000
    growth_rate: float = 0.6
    env_sigma: float = 0.3
    kappa: float = 2.0
    init_fraction: float = 1.0
    dispersal_rate: float = 0.1
    kernel_scale: float = 3.0
    extinction_threshold: int = 0
    ci_alpha: float = 0.05

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.env_sigma < 0.0:
            raise ValueError("env_sigma must be >= 0")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be > 0")
        if not 0.0 < self.init_fraction <= 1.0:
            raise ValueError("init_fraction must lie in (0, 1]")
        if not 0.0 <= self.dispersal_rate < 1.0:
            raise ValueError("dispersal_rate must lie in [0, 1)")
        if self.kernel_scale <= 0.0:
            raise ValueError("kernel_scale must be > 0")
        if self.extinction_threshold < 0:
            raise ValueError("extinction_threshold must be >= 0")
        if not 0.0 < self.ci_alpha < 1.0:
            raise ValueError("ci_alpha must lie in (0, 1)")


_INT_FIELDS = {"horizon", "replicates", "extinction_threshold"}


def config_to_text(cfg: PvaConfig) -> str:
    """Flat key=value serialization, one field per line."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={v:.17g}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> PvaConfig:
    known = {f.name for f in fields(PvaConfig)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
    cfg = PvaConfig(**kwargs)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class ReplicateOutcome:
    """Summary of one trajectory.

    extinct_year is the first year total abundance dropped to or below the
    extinction threshold, or horizon+1 if it never did. Extinction is
    absorbing: an extinct replicate has zero minimum and terminal abundance.
    """

    extinct_year: int
    min_total_abundance: int
    terminal_abundance: int


@dataclass(frozen=True)
class PvaMetrics:
    """Aggregate viability metrics for one simulation batch.

    time_median equal to horizon+1 encodes "no median extinction within the
    horizon" and is rendered as ">horizon".
    """

    risk: float
    time_median: float
    ema: float
    ci_halfwidth: float
    replicates_extinct: int


def ks_ci_halfwidth(replicates: int, alpha: float = 0.05) -> float:
    """Confidence half-width c(alpha)/sqrt(replicates) for a probability
    estimated from `replicates` Monte Carlo iterations.

    c(alpha) is the standard tabulated Kolmogorov-Smirnov critical
    coefficient (the asymptotic value sqrt(ln(2/alpha)/2) rounded to three
    decimals, e.g. c(0.05) = 1.358).
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    coeff = round(math.sqrt(math.log(2.0 / alpha) / 2.0), 3)
    return coeff / math.sqrt(replicates)


def risk_of_extinction(outcomes: Sequence[ReplicateOutcome], threshold: int) -> float:
    """Fraction of replicates whose terminal abundance is at or below
    `threshold`."""
    if not outcomes:
        raise ValueError("risk of extinction is undefined for an empty outcome list")
    hits = sum(1 for o in outcomes if o.terminal_abundance <= threshold)
    return hits / len(outcomes)


def median_time_to_extinction(outcomes: Sequence[ReplicateOutcome], horizon: int) -> float:
    """Median extinction year, with non-extinct replicates contributing the
    sentinel horizon+1.

    For an even count the lower of the two central order statistics is used,
    so the result is always an attained year. A return value of horizon+1
    means fewer than half the replicates went extinct (render as ">horizon").
    """
    if not outcomes:
        raise ValueError("median time to extinction is undefined for an empty outcome list")
    sentinel = horizon + 1
    years = sorted(o.extinct_year if o.extinct_year <= horizon else sentinel for o in outcomes)
    return float(years[(len(years) - 1) // 2])


def expected_minimum_abundance(outcomes: Sequence[ReplicateOutcome]) -> float:
    """Mean over replicates of the minimum yearly total abundance."""
    if not outcomes:
        raise ValueError("expected minimum abundance is undefined for an empty outcome list")
    return sum(o.min_total_abundance for o in outcomes) / len(outcomes)


def format_time(time_median: float, horizon: int) -> str:
    """Render a median time, using ">horizon" for the sentinel value."""
    if time_median >= horizon + 1:
        return f">{horizon}"
    if time_median == int(time_median):
        return str(int(time_median))
    return repr(time_median)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class _Params:
    """Precomputed per-patch quantities shared by every replicate."""

    capacity: np.ndarray        # K_i = max(1, round(kappa * THS_i))
    initial: np.ndarray         # round(init_fraction * K_i)
    kernel_cdf: np.ndarray      # row i: destination CDF for emigrants of patch i
    cfg: PvaConfig


def _prepare(patches, cfg: PvaConfig) -> _Params:
    ths = patches.ths_vector()
    capacity = np.maximum(1, np.rint(cfg.kappa * ths)).astype(np.int64)
    initial = np.rint(cfg.init_fraction * capacity).astype(np.int64)
    p = len(capacity)
    if p > 1:
        cents = patches.centroid_array()
        dist = np.linalg.norm(cents[:, None, :] - cents[None, :, :], axis=2)
        weights = np.exp(-dist / cfg.kernel_scale)
        np.fill_diagonal(weights, 0.0)
        kernel_cdf = np.cumsum(weights / weights.sum(axis=1, keepdims=True), axis=1)
    else:
        kernel_cdf = np.zeros((p, p))
    return _Params(capacity=capacity, initial=initial, kernel_cdf=kernel_cdf, cfg=cfg)


def _step_batch(state: np.ndarray, params: _Params, rng: np.random.Generator) -> np.ndarray:
    """Advance a (replicates, patches) abundance array by one year.

    Growth first: N' ~ Poisson(N * exp(r * (1 - N/K)) * eps) with lognormal
    environmental multiplier eps of mean one. Then dispersal: a binomial
    share of each patch's survivors emigrates and lands on other patches in
    proportion to the exponential kernel; with a single patch the emigrants
    die in transit.
    """
    cfg = params.cfg
    nb, p = state.shape
    if cfg.env_sigma > 0.0:
        z = rng.standard_normal((nb, p))
        eps = np.exp(cfg.env_sigma * z - 0.5 * cfg.env_sigma * cfg.env_sigma)
    else:
        eps = 1.0
    lam = state * np.exp(cfg.growth_rate * (1.0 - state / params.capacity)) * eps
    grown = rng.poisson(lam)
    if cfg.dispersal_rate == 0.0:
        return grown
    emig = rng.binomial(grown, cfg.dispersal_rate)
    if p == 1:
        return grown - emig
    arrivals = np.zeros_like(grown)
    rep_ids = np.arange(nb)
    for i in range(p):
        e_i = emig[:, i]
        total = int(e_i.sum())
        if total == 0:
            continue
        dest = np.searchsorted(params.kernel_cdf[i], rng.random(total), side="right")
        rep = np.repeat(rep_ids, e_i)
        arrivals += np.bincount(rep * p + dest, minlength=nb * p).reshape(nb, p)
    return grown - emig + arrivals


def step_year(abundance: np.ndarray, patches, cfg: PvaConfig,
              rng: np.random.Generator) -> np.ndarray:
    """One year of dynamics for a single replicate's per-patch abundances."""
    state = np.asarray(abundance, dtype=np.int64).reshape(1, -1)
    if np.any(state < 0):
        raise ValueError("abundances must be non-negative")
    return _step_batch(state, _prepare(patches, cfg), rng)[0]


def _simulate_block(block_index: int, size: int, params: _Params, eval_seed: int,
                    trace: list | None) -> tuple:
    """Run one block of replicates; returns (extinct_year, min, terminal)."""
    cfg = params.cfg
    sentinel = cfg.horizon + 1
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=eval_seed, spawn_key=(block_index,)))
    p = len(params.capacity)
    state = np.broadcast_to(params.initial, (size, p)).copy()
    total = state.sum(axis=1)
    extinct_year = np.full(size, sentinel, dtype=np.int64)
    min_total = total.copy()
    hit = total <= cfg.extinction_threshold
    extinct_year[hit] = 0
    state[hit] = 0
    min_total[hit] = 0
    if trace is not None:
        trace.append((0, state.copy()))
    for year in range(1, cfg.horizon + 1):
        if (extinct_year <= cfg.horizon).all():
            break
        state = _step_batch(state, params, rng)
        total = state.sum(axis=1)
        np.minimum(min_total, total, out=min_total)
        hit = (total <= cfg.extinction_threshold) & (extinct_year == sentinel)
        if hit.any():
            extinct_year[hit] = year
            state[hit] = 0
            min_total[hit] = 0
        if trace is not None:
            trace.append((year, state.copy()))
    terminal = state.sum(axis=1)
    terminal[extinct_year <= cfg.horizon] = 0
    return extinct_year, min_total, terminal


def run_replicates(patches, cfg: PvaConfig, eval_seed: int, workers: int = 1,
                   trace_file: IO[str] | None = None) -> list:
    """All replicate outcomes for one habitat, in replicate order.

    With an empty patch set every replicate is extinct at year zero. When
    `trace_file` is given, per-year per-patch abundances are dumped as CSV
    (columns replicate, year, patch_id, abundance); intended for debugging.
    """
    cfg.validate()
    reps = cfg.replicates
    if len(patches) == 0:
        return [ReplicateOutcome(0, 0, 0)] * reps
    params = _prepare(patches, cfg)
    blocks = [(bi, min(REPLICATE_BLOCK, reps - bi * REPLICATE_BLOCK))
              for bi in range((reps + REPLICATE_BLOCK - 1) // REPLICATE_BLOCK)]
    traces: dict[int, list] | None = {} if trace_file is not None else None

    def run(block) -> tuple:
        bi, size = block
        trace = [] if traces is not None else None
        out = _simulate_block(bi, size, params, eval_seed, trace)
        if traces is not None:
            traces[bi] = trace
        return out

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    outcomes = []
    for (bi, size), (ey, mt, term) in zip(blocks, results):
        for j in range(size):
            outcomes.append(ReplicateOutcome(int(ey[j]), int(mt[j]), int(term[j])))
    if trace_file is not None and traces is not None:
        trace_file.write("replicate,year,patch_id,abundance\n")
        for bi, size in blocks:
            base = bi * REPLICATE_BLOCK
            for year, state in traces[bi]:
                for j in range(size):
                    for pi in range(state.shape[1]):
                        trace_file.write(f"{base + j},{year},{pi + 1},{state[j, pi]}\n")
    return outcomes


def aggregate(outcomes: Sequence[ReplicateOutcome], cfg: PvaConfig) -> PvaMetrics:
    """Reduce replicate outcomes to PvaMetrics."""
    extinct = sum(1 for o in outcomes if o.extinct_year <= cfg.horizon)
    return PvaMetrics(
        risk=risk_of_extinction(outcomes, cfg.extinction_threshold),
        time_median=median_time_to_extinction(outcomes, cfg.horizon),
        ema=expected_minimum_abundance(outcomes),
        ci_halfwidth=min(1.0, ks_ci_halfwidth(cfg.replicates, cfg.ci_alpha)),
        replicates_extinct=extinct,
    )


def simulate(patches, cfg: PvaConfig, eval_seed: int, workers: int = 1,
             trace_file: IO[str] | None = None) -> PvaMetrics:
    """Run a full replicate batch for `patches` and aggregate the metrics.

    Deterministic in (patches, cfg, eval_seed): candidate habitats evaluated
    with the same eval_seed share random streams (common random numbers), so
    comparisons between candidates carry less Monte Carlo noise.
    """
    return aggregate(run_replicates(patches, cfg, eval_seed, workers, trace_file), cfg)
