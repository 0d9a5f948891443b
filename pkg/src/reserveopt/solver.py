"""Extended ant colony optimization over binary selection vectors.

The oracle is treated as expensive, noisy-looking and opaque: the solver
only ever asks "evaluate this bit vector" and ranks answers. Candidates are
sampled from a Gaussian multi-kernel built on an archive of the best
distinct selections seen so far; on the binary domain the continuous sample
is clamped to [0, 1] and rounded at 0.5.

Constraint handling is strictly lexicographic: lower total violation always
wins, objective value breaks ties, and the bit pattern itself breaks exact
ties so that results are fully deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np

# Sampling sigma never drops below this, so bits keep a small flip
# probability even once the archive has converged.
SIGMA_FLOOR = 0.1


class OracleError(RuntimeError):
    """Oracle evaluation failed; carries the offending selection."""

    def __init__(self, message: str, selection: np.ndarray):
        super().__init__(message)
        self.selection = selection


@dataclass(frozen=True)
class Evaluation:
    """Outcome of one oracle call.

    violations holds one non-negative entry per constraint (empty for
    unconstrained models); an evaluation is feasible iff total_violation is
    zero. metrics and cost carry the underlying simulation results through
    to reports and may be absent for synthetic oracles.
    """

    objective: float
    violations: tuple = ()
    total_violation: float = 0.0
    metrics: object = None
    cost: float = 0.0

    @classmethod
    def make(cls, objective: float, violations: Sequence[float] = (),
             metrics: object = None, cost: float = 0.0) -> "Evaluation":
        v = tuple(float(x) for x in violations)
        return cls(objective=float(objective), violations=v,
                   total_violation=float(sum(v)), metrics=metrics, cost=cost)

    @property
    def feasible(self) -> bool:
        return self.total_violation == 0.0


def lexicographic_less(a: Evaluation, b: Evaluation,
                       bits_a: np.ndarray | None = None,
                       bits_b: np.ndarray | None = None) -> bool:
    """True when `a` is strictly better: less violated, then cheaper, then
    (if the bit vectors are supplied) lexicographically earlier bits."""
    if len(a.violations) != len(b.violations):
        raise ValueError(
            f"violation arity mismatch: {len(a.violations)} vs {len(b.violations)}")
    if a.total_violation != b.total_violation:
        return a.total_violation < b.total_violation
    if a.objective != b.objective:
        return a.objective < b.objective
    if bits_a is not None and bits_b is not None:
        return bits_a.tobytes() < bits_b.tobytes()
    return False


class MemoizedOracle:
    """Caches oracle answers by exact bit pattern.

    Valid because oracles are deterministic for a fixed eval_seed; repeated
    selections cost zero oracle calls. `calls` counts real evaluations and
    `hits` counts cache lookups.
    """

    def __init__(self, oracle: Callable):
        self._oracle = oracle
        self.cache: dict[bytes, Evaluation] = {}
        self.calls = 0
        self.hits = 0

    def __call__(self, bits: np.ndarray) -> Evaluation:
        key = np.asarray(bits, dtype=np.uint8).tobytes()
        found = self.cache.get(key)
        if found is not None:
            self.hits += 1
            return found
        self.calls += 1
        try:
            result = self._oracle(bits)
        except Exception as exc:
            raise OracleError(f"oracle failed for selection {_bitstring(bits)}",
                              np.asarray(bits, dtype=np.uint8)) from exc
        self.cache[key] = result
        return result


def memoize(oracle: Callable) -> MemoizedOracle:
    if isinstance(oracle, MemoizedOracle):
        return oracle
    return MemoizedOracle(oracle)


def _bitstring(bits: np.ndarray) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).ravel())


@dataclass
class AcoConfig:
    """Solver parameters.

    ants_per_generation defaults to dim+1, which makes the total sample
    count exactly (dim+1) * (generations+1). archive_size defaults to
    min(ants_per_generation, 63).
    """

    generations: int = 20
    ants_per_generation: int | None = None
    archive_size: int | None = None
    q_influence: float = 1.0
    xi_spread: float = 1.0
    seed: int = 0
    eval_seed: int = 0

    def resolved_ants(self, dim: int) -> int:
        return self.ants_per_generation if self.ants_per_generation else dim + 1

    def resolved_archive(self, dim: int) -> int:
        return self.archive_size if self.archive_size else min(self.resolved_ants(dim), 63)

    def validate(self, dim: int) -> None:
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.resolved_ants(dim) < 1:
            raise ValueError("zero evaluation budget: ants_per_generation must be >= 1")
        if self.resolved_archive(dim) < 1:
            raise ValueError("archive_size must be >= 1")
        if self.q_influence <= 0.0 or self.xi_spread <= 0.0:
            raise ValueError("q_influence and xi_spread must be > 0")


@dataclass
class SolveResult:
    best_selection: np.ndarray
    best_eval: Evaluation
    evaluations_used: int
    history: list = field(default_factory=list)
    cache_hits: int = 0
    oracle_calls: int = 0


def solve(oracle: Callable, dim: int, cfg: AcoConfig,
          log_stream: IO[str] | None = None) -> SolveResult:
    """Minimize over {0,1}^dim with the archive-kernel ant colony sampler.

    Generation 0 is uniform random (each bit Bernoulli 0.5). Afterwards,
    every ant samples each bit by first picking an archive member with rank
    weight exp(-(rank-1)^2 / (2 q^2 k^2)), then drawing from a normal
    centred on that member's bit with spread xi times the archive's mean
    absolute deviation for the bit (floored at SIGMA_FLOOR), clamping to
    [0, 1] and rounding at 0.5. All sampling for a generation happens before
    any evaluation, from one generator stream, so results are independent of
    evaluation order.
    """
    cfg.validate(dim)
    ants = cfg.resolved_ants(dim)
    k = cfg.resolved_archive(dim)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    mem = memoize(oracle)
    started = time.monotonic()

    archive: dict[bytes, tuple] = {}   # key -> (total_violation, objective, bits)
    best_bits: np.ndarray | None = None
    best_eval: Evaluation | None = None
    history = []
    samples = 0
    dim_index = np.arange(dim)

    for gen in range(cfg.generations + 1):
        if gen == 0:
            batch = (rng.random((ants, dim)) < 0.5).astype(np.uint8)
        else:
            ranked = sorted(archive.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))[:k]
            member_bits = np.array([v[2] for _, v in ranked], dtype=np.float64)
            m = len(ranked)
            weights = np.exp(-np.arange(m) ** 2 / (2.0 * cfg.q_influence ** 2 * k ** 2))
            weights /= weights.sum()
            mad = np.abs(member_bits - member_bits.mean(axis=0)).mean(axis=0)
            sigma = np.maximum(SIGMA_FLOOR, cfg.xi_spread * mad)
            guides = rng.choice(m, size=(ants, dim), p=weights)
            mu = member_bits[guides, dim_index[None, :]]
            sampled = np.clip(rng.normal(mu, sigma[None, :]), 0.0, 1.0)
            batch = (sampled >= 0.5).astype(np.uint8)

        for row in batch:
            samples += 1
            ev = mem(row)
            key = row.tobytes()
            if key not in archive:
                archive[key] = (ev.total_violation, ev.objective, row.copy())
            if best_eval is None or lexicographic_less(ev, best_eval, row, best_bits):
                best_eval = ev
                best_bits = row.copy()
        # keep only the k best distinct selections
        archive = dict(sorted(archive.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))[:k])
        history.append((best_eval.objective, best_eval.total_violation))
        if log_stream is not None:
            log_stream.write(
                f"{gen}\t{best_eval.objective!r}\t{best_eval.total_violation!r}"
                f"\t{mem.calls}\t{mem.hits}\t{time.monotonic() - started:.3f}\n")

    assert best_bits is not None and best_eval is not None
    return SolveResult(best_selection=best_bits, best_eval=best_eval,
                       evaluations_used=samples, history=history,
                       cache_hits=mem.hits, oracle_calls=mem.calls)
