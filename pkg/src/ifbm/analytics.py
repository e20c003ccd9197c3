"""Distribution measurement: histograms, moments, and chi-square fit tests.

Two routes to the one-step return distribution live here side by side.  The
sampling route (build_histogram / sample_moments) measures simulated or
empirical data; the exact route (exact_step_moments, central_and_tail_mass)
integrates the deterministic transform r(Z) of a single standard normal
deviate directly, with Gauss-Hermite quadrature for moments and normal-CDF
mass of level sets for peak/tail probabilities.  Tests lean on the exact
route as the oracle for the sampling route.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, roots_hermite
from scipy.stats import chi2 as _chi2_dist

from .engine import ProcessParams, ReturnsSample, step_log_return
from .errors import DegenerateBinningError, DomainError, NumericalError
from .feedback import FeedbackParams, eval_f

# Gauss-Hermite node schedule: double from 64 until moments move < 1e-10
# relative (absolute below magnitude 1), cap at 1024.
_GH_START = 64
_GH_CAP = 1024
_GH_RTOL = 1e-10

# Classical Cochran rule: merge bins until every expected count reaches 5.
_MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class Histogram:
    """Half-open-bin counts: bin i covers [edges[i], edges[i+1]).

    Values below edges[0] count as underflow, values at or above edges[-1]
    as overflow.  total is the full sample size including both.
    """

    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int
    total: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise DomainError("edges must be strictly increasing with >= 2 entries")
        if counts.size != edges.size - 1:
            raise DomainError("counts length must be len(edges) - 1")
        if np.any(counts < 0) or self.underflow < 0 or self.overflow < 0:
            raise DomainError("counts must be non-negative")
        if int(counts.sum()) + self.underflow + self.overflow != self.total:
            raise DomainError("sum(counts) + underflow + overflow must equal total")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True)
class MomentSet:
    """First four standardized moments; n is the sample size or "exact"."""

    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    n: int | str

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "n": self.n,
        }


@dataclass(frozen=True)
class ChiSquareResult:
    """Pearson statistic after bin merging; merged_bins = effective bin count."""

    statistic: float
    dof: int
    merged_bins: int
    p_value: float

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "merged_bins": self.merged_bins,
            "p_value": self.p_value,
        }


def build_histogram(sample: ReturnsSample, bins="fd") -> Histogram:
    """Bin a returns sample.

    bins may be a numpy binning rule name ("fd" is the default), an integer
    bin count, or an explicit strictly-increasing edge array.  For rule- or
    count-derived edges the top edge is nudged one ulp above the sample
    maximum so the maximum lands in the last bin; explicit edges are applied
    strictly half-open, so a value equal to the top edge is overflow.
    """
    values = sample.values
    if values.size == 0:
        raise DomainError("cannot bin an empty sample")
    if isinstance(bins, (str, int, np.integer)):
        edges = np.histogram_bin_edges(values, bins=bins)
        edges = edges.copy()
        edges[-1] = np.nextafter(values.max(), np.inf)
        if not np.all(np.diff(edges) > 0):  # constant sample collapses the range
            v = float(values[0])
            edges = np.array([v - 0.5, np.nextafter(v, np.inf)])
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise DomainError("explicit edges must be strictly increasing with >= 2 entries")
    idx = np.searchsorted(edges, values, side="right") - 1
    n_bins = edges.size - 1
    underflow = int(np.count_nonzero(idx < 0))
    overflow = int(np.count_nonzero(idx >= n_bins))
    in_range = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[in_range], minlength=n_bins)
    return Histogram(
        edges=edges,
        counts=counts,
        underflow=underflow,
        overflow=overflow,
        total=int(values.size),
    )


def sample_moments(sample: ReturnsSample) -> MomentSet:
    """Unbiased mean/variance plus bias-corrected skewness and excess kurtosis.

    Skewness is the adjusted Fisher-Pearson estimator
    G1 = g1 * sqrt(n(n-1)) / (n-2), and excess kurtosis is
    G2 = ((n+1) g2 + 6) (n-1) / ((n-2)(n-3)), with g1, g2 the standardized
    biased central-moment ratios.  A zero-variance sample reports NaN for
    both shape moments (undefined).
    """
    x = sample.values
    n = x.size
    if n < 4:
        raise DomainError(f"need n >= 4 for kurtosis, got {n}")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d * d))
    variance = m2 * n / (n - 1)
    if m2 == 0.0:
        return MomentSet(mean=mean, variance=0.0, skewness=float("nan"),
                         excess_kurtosis=float("nan"), n=n)
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    g1 = m3 / m2**1.5
    g2 = m4 / (m2 * m2) - 3.0
    skew = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    exkurt = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
    return MomentSet(mean=mean, variance=variance, skewness=skew,
                     excess_kurtosis=exkurt, n=n)


def _gh_moments(proc: ProcessParams, fb: FeedbackParams, n_nodes: int) -> tuple:
    nodes, weights = roots_hermite(n_nodes)
    z = math.sqrt(2.0) * nodes
    w = weights / math.sqrt(math.pi)
    r = step_log_return(z, proc, fb)
    mean = float(w @ r)
    d = r - mean
    var = float(w @ (d * d))
    m3 = float(w @ (d**3))
    m4 = float(w @ (d**4))
    return mean, var, m3 / var**1.5, m4 / (var * var) - 3.0


def exact_step_moments(proc: ProcessParams, fb: FeedbackParams) -> MomentSet:
    """Exact moments of the one-step return r(Z), Z ~ N(0, 1).

    When the feedback coefficient drift*K*dt is exactly zero, r is affine in
    Z and the moments are returned in closed form (skewness and excess
    kurtosis exactly 0, or NaN for the fully degenerate sigma = 0 case).
    Otherwise Gauss-Hermite quadrature runs on a doubling node schedule
    (64 up to 1024) until every moment moves by less than 1e-10 relative
    between doublings; failure to settle raises NumericalError.
    """
    feedback_coeff = proc.drift * fb.k * proc.dt
    if feedback_coeff == 0.0:
        if proc.sigma == 0.0:
            return MomentSet(mean=proc.drift * proc.dt, variance=0.0,
                             skewness=float("nan"), excess_kurtosis=float("nan"),
                             n="exact")
        return MomentSet(mean=proc.drift * proc.dt,
                         variance=proc.sigma * proc.sigma * proc.dt,
                         skewness=0.0, excess_kurtosis=0.0, n="exact")

    prev = _gh_moments(proc, fb, _GH_START)
    n_nodes = _GH_START
    while n_nodes < _GH_CAP:
        n_nodes *= 2
        cur = _gh_moments(proc, fb, n_nodes)
        if all(abs(a - b) <= _GH_RTOL * max(1.0, abs(a)) for a, b in zip(cur, prev)):
            return MomentSet(mean=cur[0], variance=cur[1], skewness=cur[2],
                             excess_kurtosis=cur[3], n="exact")
        prev = cur
    raise NumericalError(
        f"step moments did not settle to {_GH_RTOL:g} relative within {_GH_CAP} nodes"
    )


def _merge_bins(observed: np.ndarray, expected: np.ndarray) -> tuple:
    obs_m, exp_m = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= _MIN_EXPECTED:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    # fold any light tail into the last merged bin so no data is dropped
    if acc_e > 0.0 or acc_o > 0.0:
        if exp_m:
            obs_m[-1] += acc_o
            exp_m[-1] += acc_e
        else:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
    return np.asarray(obs_m), np.asarray(exp_m)


def chi_square(observed: Histogram, expected, fitted_params: int) -> ChiSquareResult:
    """Pearson goodness of fit between an observed histogram and expecteds.

    expected is either a Histogram on the same edges (its counts are scaled
    to the observed total) or a vector of per-bin probabilities (scaled by
    the observed total).  Adjacent bins are merged left to right until every
    expected count reaches 5; dof = merged_bins - 1 - fitted_params.  The
    p-value is the chi-square survival function (regularized upper incomplete
    gamma).
    """
    obs = observed.counts.astype(float)
    if isinstance(expected, Histogram):
        if not np.array_equal(expected.edges, observed.edges):
            raise DomainError("observed and expected histograms must share edges")
        if expected.total <= 0:
            raise DomainError("expected histogram is empty")
        exp = expected.counts.astype(float) * (observed.total / expected.total)
    else:
        probs = np.asarray(expected, dtype=float)
        if probs.shape != (observed.n_bins,):
            raise DomainError(
                f"expected-probability vector must have {observed.n_bins} entries"
            )
        if np.any(probs < 0) or not np.all(np.isfinite(probs)) or probs.sum() <= 0:
            raise DomainError("expected probabilities must be non-negative, finite, not all zero")
        exp = probs * observed.total
    obs_m, exp_m = _merge_bins(obs, exp)
    if len(obs_m) < 2:
        raise DegenerateBinningError(
            f"only {len(obs_m)} effective bin(s) remain after merging to "
            f"expected >= {_MIN_EXPECTED:g}"
        )
    dof = len(obs_m) - 1 - int(fitted_params)
    if dof < 1:
        raise DegenerateBinningError(
            f"{len(obs_m)} effective bins leave dof={dof} after subtracting "
            f"{fitted_params} fitted parameters"
        )
    statistic = float(np.sum((obs_m - exp_m) ** 2 / exp_m))
    p_value = float(_chi2_dist.sf(statistic, dof))
    return ChiSquareResult(statistic=statistic, dof=dof,
                           merged_bins=len(obs_m), p_value=p_value)


def central_and_tail_mass(
    proc: ProcessParams,
    fb: FeedbackParams | None,
    inner: float = 0.5,
    outer: float = 3.0,
) -> tuple:
    """P(|r - drift*dt| < inner*sigma*sqrt(dt)) and P(... > outer*...).

    The deviation r - drift*dt equals h(Z) = sigma*sqrt(dt)*Z +
    drift*K*dt*f_c(Z), so each mass is the standard normal measure of a
    level set of h.  The level sets are found by a dense sign scan plus
    bisection on h -+ tau (h need not be monotone), then integrated with the
    normal CDF.  fb None or K = 0 is plain GBM and uses the closed form.
    """
    if proc.sigma <= 0.0:
        raise DomainError("central/tail masses require sigma > 0")
    if not 0.0 < inner < outer:
        raise DomainError(f"need 0 < inner < outer, got {inner}, {outer}")
    if fb is None or fb.k == 0.0 or proc.drift == 0.0:
        central = float(ndtr(inner) - ndtr(-inner))
        tail = float(2.0 * ndtr(-outer))
        return central, tail

    b = proc.sigma * math.sqrt(proc.dt)
    d = proc.drift * fb.k * proc.dt
    c = fb.c

    def h(zv):
        return b * zv + d * eval_f(zv, c)

    def inside_mass(width: float) -> float:
        tau = width * b
        z_max = (tau + abs(d) * math.pi / 2.0) / b + 6.0
        grid = np.linspace(-z_max, z_max, 20001)
        hv = h(grid)
        crossings = []
        for level in (tau, -tau):
            g = hv - level
            s = np.where(g >= 0.0, 1, -1)  # exact zeros count as positive
            hits = np.nonzero(s[:-1] * s[1:] < 0)[0]
            for i in hits:
                lo, hi = float(grid[i]), float(grid[i + 1])
                g_lo = h(lo) - level
                for _ in range(100):
                    mid = 0.5 * (lo + hi)
                    g_mid = h(mid) - level
                    if g_lo * g_mid <= 0.0:
                        hi = mid
                    else:
                        lo, g_lo = mid, g_mid
                    if hi - lo < 1e-14 * max(1.0, abs(mid)):
                        break
                crossings.append(0.5 * (lo + hi))
        pts = [-math.inf] + sorted(crossings) + [math.inf]
        mass = 0.0
        for a_pt, b_pt in zip(pts[:-1], pts[1:]):
            if math.isinf(a_pt) and math.isinf(b_pt):
                probe = 0.0
            elif math.isinf(a_pt):
                probe = b_pt - 1.0
            elif math.isinf(b_pt):
                probe = a_pt + 1.0
            else:
                probe = 0.5 * (a_pt + b_pt)
            if abs(h(probe)) < tau:
                mass += float(ndtr(b_pt) - ndtr(a_pt))
        return mass

    central = inside_mass(inner)
    tail = 1.0 - inside_mass(outer)
    return central, tail


# ---------------------------------------------------------------------------
# serialization


def write_histogram_csv(hist: Histogram, fh, metadata: dict | None = None) -> None:
    for key, val in (metadata or {}).items():
        fh.write(f"# {key}={val}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["edge_low", "edge_high", "count"])
    for lo, hi, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
        writer.writerow([f"{lo:.17g}", f"{hi:.17g}", f"{n:d}"])


def histogram_to_json_dict(hist: Histogram) -> dict:
    return {
        "edges": [float(e) for e in hist.edges],
        "counts": [int(n) for n in hist.counts],
        "underflow": hist.underflow,
        "overflow": hist.overflow,
        "total": hist.total,
    }


def write_histogram_json(hist: Histogram, fh, metadata: dict | None = None) -> None:
    doc = histogram_to_json_dict(hist)
    if metadata:
        doc = {"metadata": metadata, **doc}
    json.dump(doc, fh, indent=2)
    fh.write("\n")
