"""Deterministic Monte Carlo engine for GBM and feedback-extended paths.

One step of the extended model adds a feedback correction to the plain GBM
log-return, driven by the same normal deviate:

    ln(P_{t+dt} / P_t) = m*dt + sigma*Z*sqrt(dt) + m*K*f_c(Z)*dt

where m is the drift scale: the raw drift mu by default, or the Ito-adjusted
alpha = mu + sigma^2/2 in the alternate mode.  K = 0 degenerates to GBM.

Randomness is counter-based: each path owns a Philox stream keyed by
(master_seed, path_index), and deviates come from the inverse normal CDF of
53-bit uniforms.  Output is therefore a pure function of the inputs and is
bit-identical no matter how many worker threads execute the paths.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, ResourceLimitError
from .feedback import FeedbackParams, eval_f

DEFAULT_SAMPLE_CAP = 100_000_000
_U64_MAX = 2**64 - 1


class DriftMode(Enum):
    """Which drift scales the deterministic and feedback terms."""

    MU_SCALED = "mu"
    ALPHA_SCALED = "alpha"


class SampleSource(Enum):
    SIMULATED = "Simulated"
    EMPIRICAL = "Empirical"


@dataclass(frozen=True)
class ProcessParams:
    """Drift mu (per unit time), volatility sigma (per sqrt time), step dt."""

    mu: float
    sigma: float
    dt: float
    drift_mode: DriftMode = DriftMode.MU_SCALED

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise DomainError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise DomainError(f"dt must be finite and > 0, got {self.dt}")

    @property
    def alpha(self) -> float:
        """Ito-adjusted drift, mu + sigma^2 / 2."""
        return self.mu + 0.5 * self.sigma * self.sigma

    @property
    def drift(self) -> float:
        """The drift actually wired into the step, per drift_mode."""
        return self.mu if self.drift_mode is DriftMode.MU_SCALED else self.alpha


@dataclass(frozen=True)
class SimConfig:
    """Path count, step count, master seed, and starting price level."""

    n_paths: int
    n_steps: int
    master_seed: int
    initial_price: float = 1.0
    sample_cap: int = DEFAULT_SAMPLE_CAP

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0 <= int(self.master_seed) <= _U64_MAX:
            raise DomainError("master_seed must be a 64-bit unsigned integer")
        if not (math.isfinite(self.initial_price) and self.initial_price > 0.0):
            raise DomainError(f"initial_price must be > 0, got {self.initial_price}")
        if self.n_paths * self.n_steps > self.sample_cap:
            raise ResourceLimitError(
                f"{self.n_paths} paths x {self.n_steps} steps exceeds the "
                f"sample cap of {self.sample_cap}"
            )


@dataclass(frozen=True)
class ReturnsSample:
    """A flat collection of log returns, simulated or empirical."""

    values: np.ndarray
    source: SampleSource

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1:
            raise DomainError("returns sample must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise DomainError("returns sample contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def count(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class PathSet:
    """Per-step log returns, one row per path, with the run's provenance.

    fb is None for a pure-GBM run.  prices, when materialized, satisfy
    prices[p, t+1] == prices[p, t] * exp(log_returns[p, t]) exactly.
    """

    log_returns: np.ndarray
    proc: ProcessParams
    fb: FeedbackParams | None
    cfg: SimConfig
    prices: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.log_returns.shape[0]

    @property
    def n_steps(self) -> int:
        return self.log_returns.shape[1]


def normal_stream(master_seed: int, path_index: int, n: int) -> np.ndarray:
    """n standard normal deviates from the (master_seed, path_index) substream.

    The substream is a Philox counter-based generator keyed directly by the
    pair, so streams for distinct indices are independent and the whole
    sequence is reproducible with no sequential seeding.  Uniforms are
    (w + 0.5) / 2^53 for a 53-bit word w, strictly inside (0, 1), and are
    mapped through the inverse normal CDF.
    """
    if not 0 <= int(master_seed) <= _U64_MAX:
        raise DomainError("master_seed must be a 64-bit unsigned integer")
    if not 0 <= int(path_index) <= _U64_MAX:
        raise DomainError("path_index must be a 64-bit unsigned integer")
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    key = np.array([master_seed, path_index], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    words = gen.integers(0, 1 << 53, size=int(n), dtype=np.uint64)
    u = (words.astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def step_log_return(z, proc: ProcessParams, fb: FeedbackParams):
    """One-step log return for deviate z (scalar or array).

    drift*dt + sigma*z*sqrt(dt) + drift*K*f_c(z)*dt, with drift = mu or
    alpha per proc.drift_mode.  K = 0 reduces exactly to the GBM step.
    """
    base = proc.drift * proc.dt + proc.sigma * math.sqrt(proc.dt) * np.asarray(z, dtype=float)
    if fb is not None and fb.k != 0.0:
        base = base + proc.drift * fb.k * proc.dt * eval_f(z, fb.c)
    return float(base) if np.isscalar(z) else base


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("IFBM_THREADS", "")
        workers = int(env) if env.strip() else 1
    if workers < 1:
        raise DomainError(f"worker count must be >= 1, got {workers}")
    return workers


def _fill_rows(out: np.ndarray, cfg: SimConfig, row_fn, workers: int) -> None:
    def fill_block(lo: int, hi: int) -> None:
        for p in range(lo, hi):
            z = normal_stream(cfg.master_seed, p, cfg.n_steps)
            out[p] = row_fn(z)

    if workers == 1 or cfg.n_paths == 1:
        fill_block(0, cfg.n_paths)
        return
    block = max(1, -(-cfg.n_paths // workers))
    bounds = [(lo, min(lo + block, cfg.n_paths)) for lo in range(0, cfg.n_paths, block)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # each block writes a disjoint slice of rows, so scheduling order is irrelevant
        for fut in [pool.submit(fill_block, lo, hi) for lo, hi in bounds]:
            fut.result()


def _materialize_prices(log_returns: np.ndarray, initial_price: float) -> np.ndarray:
    n_paths = log_returns.shape[0]
    factors = np.empty((n_paths, log_returns.shape[1] + 1))
    factors[:, 0] = initial_price
    np.exp(log_returns, out=factors[:, 1:])
    prices = np.multiply.accumulate(factors, axis=1)
    prices.setflags(write=False)
    return prices


def simulate(
    proc: ProcessParams,
    fb: FeedbackParams,
    cfg: SimConfig,
    workers: int | None = None,
    materialize_prices: bool = False,
) -> PathSet:
    """Generate the full feedback-model PathSet.

    The deviate driving the feedback term of a step is the same one driving
    its diffusion term.  Output is bit-identical for a fixed (proc, fb, cfg)
    regardless of the worker count.
    """
    workers = _resolve_workers(workers)
    out = np.empty((cfg.n_paths, cfg.n_steps))
    _fill_rows(out, cfg, lambda z: step_log_return(z, proc, fb), workers)
    out.setflags(write=False)
    prices = _materialize_prices(out, cfg.initial_price) if materialize_prices else None
    return PathSet(log_returns=out, proc=proc, fb=fb, cfg=cfg, prices=prices)


def simulate_gbm(
    proc: ProcessParams,
    cfg: SimConfig,
    workers: int | None = None,
    materialize_prices: bool = False,
) -> PathSet:
    """Generate a plain GBM PathSet: drift*dt + sigma*Z*sqrt(dt), nothing else.

    Kept as a separate code path (no feedback machinery touched) so the K = 0
    reduction of simulate() can be checked against it bit for bit.
    """
    workers = _resolve_workers(workers)
    sqrt_dt = math.sqrt(proc.dt)
    drift_term = proc.drift * proc.dt

    out = np.empty((cfg.n_paths, cfg.n_steps))
    _fill_rows(out, cfg, lambda z: drift_term + proc.sigma * sqrt_dt * z, workers)
    out.setflags(write=False)
    prices = _materialize_prices(out, cfg.initial_price) if materialize_prices else None
    return PathSet(log_returns=out, proc=proc, fb=None, cfg=cfg, prices=prices)


def pool_returns(ps: PathSet, horizon: int = 1) -> ReturnsSample:
    """Flatten all per-step returns into one sample, row-major.

    horizon > 1 first sums each run of `horizon` consecutive step returns
    within a path (non-overlapping; a trailing remainder shorter than the
    horizon is dropped), which is the h-step aggregate return.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    lr = ps.log_returns
    if horizon == 1:
        values = lr.ravel(order="C")
    else:
        m = (ps.n_steps // horizon) * horizon
        if m == 0:
            raise DomainError(
                f"horizon {horizon} exceeds the {ps.n_steps} steps per path"
            )
        values = lr[:, :m].reshape(ps.n_paths, -1, horizon).sum(axis=2).ravel(order="C")
    return ReturnsSample(values=values, source=SampleSource.SIMULATED)


# ---------------------------------------------------------------------------
# serialization


def _provenance_dict(ps: PathSet) -> dict:
    return {
        "model": "gbm" if ps.fb is None else "ifbm",
        "mu": ps.proc.mu,
        "sigma": ps.proc.sigma,
        "dt": ps.proc.dt,
        "alpha": ps.proc.alpha,
        "drift_mode": ps.proc.drift_mode.value,
        "k": None if ps.fb is None else ps.fb.k,
        "c": None if ps.fb is None else ps.fb.c,
        "n_paths": ps.cfg.n_paths,
        "n_steps": ps.cfg.n_steps,
        "master_seed": int(ps.cfg.master_seed),
        "initial_price": ps.cfg.initial_price,
    }


def write_pathset_csv(ps: PathSet, fh, prices: bool = False) -> None:
    """One row per path; '# key=value' comment lines carry the provenance."""
    for key, val in _provenance_dict(ps).items():
        fh.write(f"# {key}={val}\n")
    matrix = ps.prices if prices else ps.log_returns
    if matrix is None:
        raise DomainError("prices were not materialized for this PathSet")
    writer = csv.writer(fh, lineterminator="\n")
    for row in matrix:
        writer.writerow([f"{v:.17g}" for v in row])


def write_pathset_json(ps: PathSet, fh, metadata: dict | None = None) -> None:
    doc = {
        "provenance": _provenance_dict(ps),
        "log_returns": [[float(v) for v in row] for row in ps.log_returns],
    }
    if ps.prices is not None:
        doc["prices"] = [[float(v) for v in row] for row in ps.prices]
    if metadata:
        doc = {"metadata": metadata, **doc}
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def write_returns_csv(sample: ReturnsSample, fh, provenance: dict | None = None) -> None:
    """One value per line under a 'log_return' header."""
    for key, val in (provenance or {}).items():
        fh.write(f"# {key}={val}\n")
    fh.write("log_return\n")
    for v in sample.values:
        fh.write(f"{v:.17g}\n")


def write_returns_json(
    sample: ReturnsSample, fh, provenance: dict | None = None, metadata: dict | None = None
) -> None:
    doc: dict = {"source": sample.source.value, "count": sample.count}
    if provenance:
        doc["provenance"] = provenance
    doc["values"] = [float(v) for v in sample.values]
    if metadata:
        doc = {"metadata": metadata, **doc}
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def read_returns_file(path: str) -> ReturnsSample:
    """Read a returns file written by write_returns_csv or write_returns_json."""
    text = open(path, "r", encoding="utf-8").read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        source = SampleSource(doc.get("source", "Simulated"))
        return ReturnsSample(values=np.asarray(doc["values"], dtype=float), source=source)
    values = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line == "log_return":
            continue
        values.append(float(line))
    return ReturnsSample(values=np.asarray(values, dtype=float), source=SampleSource.SIMULATED)
