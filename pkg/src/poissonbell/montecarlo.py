"""Monte Carlo for the exit position ``X(T0)`` of the diffusion ``(X, Y)``.

``Y`` is a Brownian motion started at ``y0`` and run until it hits ``0``
(or ``R``).  Along the path we accumulate ``A = int a(Y) dt`` (atoms via
occupation of a band of half-width ``eps`` divided by ``2 eps``) and the Ito
integral ``B = int b(Y) dY``.  Given the path, ``X(T0) ~ Normal(B, A)``, so
``E e^{i xi X(T0)} 1{T0 < T_R} = phi_xi(y0)``.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .operators import OperatorSpec

HIT0, HITR, CENSORED = 0, 1, 2
OUTCOME_NAMES = {HIT0: "hit0", HITR: "hitR", CENSORED: "censored"}
CHUNK_SIZE = 10_000


@dataclass(frozen=True)
class PathConfig:
    spec: OperatorSpec
    y0: float
    dt: float = 1e-4
    max_time: float = 100.0
    seed: int = 0
    epsilon: Optional[float] = None  # atom band half-width, default sqrt(dt)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.y0 < self.spec.R:
            raise ValueError("y0 must lie in (0, R)")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")

    @property
    def eps(self) -> float:
        return math.sqrt(self.dt) if self.epsilon is None else self.epsilon


@dataclass(frozen=True)
class HitSample:
    outcome: str  # "hit0", "hitR" or "censored"
    x: float  # X(T0) for hit0, nan otherwise
    elapsed: float


@dataclass
class HitBatch:
    """Columnar results; ``A`` and ``B`` are the path functionals at exit."""

    outcome: np.ndarray
    x: np.ndarray
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __len__(self):
        return self.outcome.size

    def samples(self) -> list[HitSample]:
        return [HitSample(OUTCOME_NAMES[int(o)], float(x), float(t)) for o, x, t in zip(self.outcome, self.x, self.t)]

    @property
    def hits(self) -> np.ndarray:
        return self.x[self.outcome == HIT0]

    @staticmethod
    def concat(parts) -> "HitBatch":
        return HitBatch(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("outcome", "x", "t", "A", "B")))


def simulate_paths(config: PathConfig, n: int, rng: np.random.Generator) -> HitBatch:
    """Simulate ``n`` independent paths, vectorised over paths."""
    spec = config.spec
    dt, sdt = config.dt, math.sqrt(config.dt)
    R = spec.R
    eps = config.eps
    atoms = [(y, w) for y, w in spec.atoms if w > 0]
    n_steps = int(math.ceil(config.max_time / dt))

    y = np.full(n, float(config.y0))
    A = np.zeros(n)
    B = np.zeros(n)
    idx = np.arange(n)
    out_code = np.full(n, CENSORED, dtype=np.int8)
    out_t = np.full(n, config.max_time)
    out_A = np.zeros(n)
    out_B = np.zeros(n)

    for step in range(n_steps):
        if idx.size == 0:
            break
        dW = rng.standard_normal(idx.size) * sdt
        a_now = np.asarray(spec.a_density(y), dtype=float)
        b_now = np.asarray(spec.b(y), dtype=float)
        for ya, w in atoms:
            a_now = a_now + (w / (2 * eps)) * (np.abs(y - ya) < eps)
        y_new = y + dW
        u = rng.random(idx.size)
        with np.errstate(over="ignore", invalid="ignore"):
            p0 = np.where(y_new > 0, np.exp(-2.0 * y * y_new / dt), 1.0)
        hit0 = (y_new <= 0) | (u < p0)
        hitR = np.zeros_like(hit0)
        if math.isfinite(R):
            with np.errstate(over="ignore", invalid="ignore"):
                pR = np.where(y_new < R, np.exp(-2.0 * (R - y) * (R - y_new) / dt), 1.0)
            hitR = ~hit0 & ((y_new >= R) | (u > 1.0 - pR))
        A = A + a_now * dt
        # the last increment of B runs exactly to the boundary
        B = B + b_now * np.where(hit0, -y, dW)
        done = hit0 | hitR
        if np.any(done):
            j = idx[done]
            out_code[j] = np.where(hit0[done], HIT0, HITR)
            out_t[j] = (step + 1) * dt
            out_A[j] = A[done]
            out_B[j] = B[done]
            keep = ~done
            idx, y, A, B = idx[keep], y_new[keep], A[keep], B[keep]
        else:
            y = y_new
    if idx.size:
        out_A[idx] = A
        out_B[idx] = B
    x = np.full(n, np.nan)
    h = out_code == HIT0
    z = rng.standard_normal(n)
    x[h] = out_B[h] + np.sqrt(out_A[h]) * z[h]
    return HitBatch(out_code, x, out_t, out_A, out_B)


def simulate_hit(config: PathConfig, rng: np.random.Generator) -> HitSample:
    """One path."""
    return simulate_paths(config, 1, rng).samples()[0]


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk,)))


def _run_chunk(args):
    config, chunk, n = args
    return simulate_paths(config, n, _chunk_rng(config.seed, chunk))


# specs carry closures and cannot be pickled; forked workers inherit this
_FORK_CONFIG: Optional[PathConfig] = None


def _run_forked(args):
    chunk, n = args
    return _run_chunk((_FORK_CONFIG, chunk, n))


def default_workers() -> int:
    return max(1, int(os.environ.get("POISSONBELL_WORKERS", "1")))


def run_simulation(config: PathConfig, n_paths: int, workers: Optional[int] = None, chunk_size: int = CHUNK_SIZE) -> HitBatch:
    """Paths in fixed-size chunks with per-chunk seeds; output is independent of ``workers``."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    workers = default_workers() if workers is None else workers
    jobs = [(config, c, min(chunk_size, n_paths - c * chunk_size)) for c in range(math.ceil(n_paths / chunk_size))]
    if workers <= 1 or len(jobs) == 1 or "fork" not in mp.get_all_start_methods():
        parts = [_run_chunk(j) for j in jobs]
    else:
        global _FORK_CONFIG
        _FORK_CONFIG = config
        try:
            with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as ex:
                parts = list(ex.map(_run_forked, [(c, n) for _, c, n in jobs]))
        finally:
            _FORK_CONFIG = None
    return HitBatch.concat(parts)


def estimate_charfn(batch: HitBatch, xi, groups: int = 100):
    """Mean of ``e^{i xi X} 1{hit0}`` with grouped-jackknife standard errors.

    The standard error is that of the complex estimate (real and imaginary
    variances added).
    """
    n = len(batch)
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    hit = batch.outcome == HIT0
    xs = np.where(hit, batch.x, 0.0)
    vals = np.where(hit[:, None], np.exp(1j * xs[:, None] * xi[None, :]), 0.0)
    g = np.arange(n) % groups
    sums = np.stack([vals[g == k].sum(axis=0) for k in range(groups)])
    cnts = np.bincount(g, minlength=groups)
    total = sums.sum(axis=0)
    est = total / n
    loo = (total[None, :] - sums) / (n - cnts)[:, None]
    var = (groups - 1) / groups * np.sum(np.abs(loo - loo.mean(axis=0)) ** 2, axis=0)
    return est, np.sqrt(var)


def ks_test(x_samples, kernel_cdf):
    """Kolmogorov-Smirnov distance to a tabulated CDF ``(x, F)``."""
    xg, F = kernel_cdf
    xs = np.asarray(x_samples, dtype=float)
    if xs.size < 10:
        raise ValueError("too few samples")
    res = stats.kstest(xs, lambda s: np.interp(s, xg, F, left=0.0, right=1.0))
    return float(res.statistic)


def draw_x(batch: HitBatch, rng: np.random.Generator, n_draws: int):
    """Fresh draws of ``X(T0)`` per frozen path: shape ``(paths, n_draws)``."""
    h = batch.outcome == HIT0
    z = rng.standard_normal((int(h.sum()), n_draws))
    return batch.B[h][:, None] + np.sqrt(batch.A[h])[:, None] * z


def summary(batch: HitBatch) -> dict:
    n = len(batch)
    counts = {name: int(np.sum(batch.outcome == code)) for code, name in OUTCOME_NAMES.items()}
    p = counts["hit0"] / n
    return {
        "paths": n,
        "counts": counts,
        "hit_probability": p,
        "hit_probability_se": math.sqrt(p * (1 - p) / n),
    }
