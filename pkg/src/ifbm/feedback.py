"""Analysis of the irrational-feedback function.

The base curve is

    f_c(z) = (2 * exp(-c * z**2 / 2) - 1) * arctan(z)

an odd function of the news shock z: a Gaussian envelope that flips sign at
|z| = sqrt(2 ln 2 / c) times a bounded sigmoid.  The market feedback term is
K * f_c(z); K < 0 is the contrarian (irrational) regime, where small shocks
are damped and large shocks amplified.  This module evaluates the curve and
its derivative, locates its roots and extrema, classifies the six sign/slope
regions of the K < 0 regime, and emits plot-ready curve and surface tables.

All functions here are pure; nothing in this module holds mutable state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError, NumericalError, UnsupportedRegimeError

# Absolute tolerance for deciding that z sits on a region boundary.
BOUNDARY_TOL = 1e-12
# Absolute tolerance of the stationary-point bisection.
STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class FeedbackParams:
    """The (K, c) pair: K weights the feedback, c shapes the envelope.

    K may be any finite real (K = 0 recovers plain GBM, K < 0 is the
    contrarian regime); c must be a positive finite real so the envelope
    exp(-c z^2 / 2) decays.
    """

    k: float
    c: float

    def __post_init__(self):
        if not math.isfinite(self.k):
            raise DomainError(f"K must be finite, got {self.k}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise DomainError(f"c must be a positive finite real (c > 0), got {self.c}")


class RegionLabel(Enum):
    """The six open intervals of the K < 0 taxonomy, plus their boundaries."""

    REGION1 = "Region1"  # (0, z_stat): damped small rallies
    REGION2 = "Region2"  # (z_stat, z_root): damped medium rallies
    REGION3 = "Region3"  # (z_root, +inf): amplified euphoria
    REGION4 = "Region4"  # (-z_stat, 0): damped small dips
    REGION5 = "Region5"  # (-z_root, -z_stat): damped medium dips
    REGION6 = "Region6"  # (-inf, -z_root): amplified panic
    BOUNDARY = "Boundary"


class FeedbackSign(Enum):
    """Sign of the product z * K * f_c(z)."""

    NEGATIVE_FEEDBACK = "NegativeFeedback"
    POSITIVE_FEEDBACK = "PositiveFeedback"
    ZERO = "Zero"


@dataclass(frozen=True)
class CriticalPoints:
    """Positive root and stationary point; negatives follow by oddness."""

    z_root_pos: float
    z_stat_pos: float

    @property
    def z_root_neg(self) -> float:
        return -self.z_root_pos

    @property
    def z_stat_neg(self) -> float:
        return -self.z_stat_pos

    def as_dict(self) -> dict:
        return {
            "z_root_pos": self.z_root_pos,
            "z_root_neg": self.z_root_neg,
            "z_stat_pos": self.z_stat_pos,
            "z_stat_neg": self.z_stat_neg,
        }


def _check_c(c: float) -> float:
    c = float(c)
    if not (math.isfinite(c) and c > 0):
        raise DomainError(f"c must be a positive finite real (c > 0), got {c}")
    return c


def _check_z(z):
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("z must be finite")
    return arr


def eval_f(z, c: float):
    """Evaluate f_c(z).  Accepts a scalar or an ndarray of z values."""
    c = _check_c(c)
    arr = _check_z(z)
    out = (2.0 * np.exp(-c * arr * arr / 2.0) - 1.0) * np.arctan(arr)
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def eval_feedback(z, params: FeedbackParams):
    """Evaluate the weighted feedback K * f_c(z); exactly zero when K = 0."""
    if params.k == 0.0:
        arr = _check_z(z)
        _check_c(params.c)
        zero = np.zeros_like(arr)
        return float(zero) if np.isscalar(z) or arr.ndim == 0 else zero
    f = eval_f(z, params.c)
    return params.k * f


def eval_f_derivative(z, c: float):
    """Analytic derivative of f_c.

    f'_c(z) = -2 c z exp(-c z^2/2) arctan(z) + (2 exp(-c z^2/2) - 1) / (1 + z^2)

    Even in z; equals 1 at z = 0 for every c.
    """
    c = _check_c(c)
    arr = _check_z(z)
    env = np.exp(-c * arr * arr / 2.0)
    out = -2.0 * c * arr * env * np.arctan(arr) + (2.0 * env - 1.0) / (1.0 + arr * arr)
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def _f_prime_scalar(z: float, c: float) -> float:
    # math-module version: called thousands of times inside the bisection
    env = math.exp(-c * z * z / 2.0)
    return -2.0 * c * z * env * math.atan(z) + (2.0 * env - 1.0) / (1.0 + z * z)


def find_roots(c: float) -> float:
    """Positive root of f_c, in closed form.

    The arctan factor vanishes only at z = 0, so the nontrivial root is where
    the envelope crosses zero: 2 exp(-c z^2 / 2) = 1, i.e. sqrt(2 ln 2 / c).
    """
    c = _check_c(c)
    return math.sqrt(2.0 * math.log(2.0) / c)


@lru_cache(maxsize=4096)
def _stationary_cached(c: float) -> float:
    z_root = math.sqrt(2.0 * math.log(2.0) / c)
    a, b = 1e-6, z_root - 1e-6
    fa, fb = _f_prime_scalar(a, c), _f_prime_scalar(b, c)
    if not (fa > 0.0 and fb < 0.0):
        raise NumericalError(
            f"stationary-point bracket ({a:g}, {b:g}) has no sign change for c={c:g}"
        )
    while b - a > STATIONARY_TOL:
        m = 0.5 * (a + b)
        if _f_prime_scalar(m, c) > 0.0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def find_stationary(c: float) -> float:
    """Positive stationary point of f_c, by bisection on the derivative.

    The bracket is (1e-6, z_root - 1e-6): f' is +1 at the origin and strictly
    negative just inside the root, so a sign change is guaranteed for any
    reasonable c (asserted over c in [0.05, 50] in the test suite).  Absolute
    tolerance 1e-10.  Independent of K by construction.
    """
    c = _check_c(c)
    return _stationary_cached(c)


def critical_points(c: float) -> CriticalPoints:
    """Root and stationary point bundled together."""
    return CriticalPoints(z_root_pos=find_roots(c), z_stat_pos=find_stationary(c))


def classify_region(z: float, params: FeedbackParams) -> RegionLabel:
    """Map z to one of the six K < 0 regions, or Boundary.

    Boundaries are the points {0, +-z_stat, +-z_root} within an absolute
    tolerance of 1e-12.  The taxonomy exists only for K < 0; K >= 0 raises
    UnsupportedRegimeError.
    """
    if params.k >= 0.0:
        raise UnsupportedRegimeError(
            f"region taxonomy is defined for K < 0 only, got K={params.k}"
        )
    z = float(z)
    if not math.isfinite(z):
        raise DomainError("z must be finite")
    cp = critical_points(params.c)
    az = abs(z)
    if (
        az <= BOUNDARY_TOL
        or abs(az - cp.z_stat_pos) <= BOUNDARY_TOL
        or abs(az - cp.z_root_pos) <= BOUNDARY_TOL
    ):
        return RegionLabel.BOUNDARY
    if z > 0:
        if z < cp.z_stat_pos:
            return RegionLabel.REGION1
        if z < cp.z_root_pos:
            return RegionLabel.REGION2
        return RegionLabel.REGION3
    if z > -cp.z_stat_pos:
        return RegionLabel.REGION4
    if z > -cp.z_root_pos:
        return RegionLabel.REGION5
    return RegionLabel.REGION6


def feedback_sign(z: float, params: FeedbackParams) -> FeedbackSign:
    """Sign of z * K * f_c(z): negative means the feedback opposes the shock.

    Exact zeros (z = 0, K = 0, or |z| at the root within 1e-12) report ZERO.
    """
    c = _check_c(params.c)
    z = float(z)
    if not math.isfinite(z):
        raise DomainError("z must be finite")
    if params.k == 0.0 or z == 0.0:
        return FeedbackSign.ZERO
    if abs(abs(z) - find_roots(c)) <= BOUNDARY_TOL:
        return FeedbackSign.ZERO
    product = z * params.k * eval_f(z, c)
    if product < 0.0:
        return FeedbackSign.NEGATIVE_FEEDBACK
    if product > 0.0:
        return FeedbackSign.POSITIVE_FEEDBACK
    return FeedbackSign.ZERO


@dataclass(frozen=True)
class FeedbackCurve:
    """Tabulated K * f_c(z) on an even grid, annotated with critical points."""

    z: np.ndarray
    values: np.ndarray
    params: FeedbackParams
    critical: CriticalPoints
    region_labels: tuple | None  # per-point labels, only for K < 0

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["z", "value"])
        for zi, vi in zip(self.z, self.values):
            writer.writerow([f"{zi:.17g}", f"{vi:.17g}"])

    def to_json_dict(self) -> dict:
        doc = {
            "k": self.params.k,
            "c": self.params.c,
            "critical_points": self.critical.as_dict(),
            "z": [float(v) for v in self.z],
            "value": [float(v) for v in self.values],
        }
        if self.region_labels is not None:
            doc["region"] = [lab.value for lab in self.region_labels]
        return doc


@dataclass(frozen=True)
class FeedbackSurface:
    """The same z-profile repeated over t: the travelling-kink table.

    The profile is time-invariant by construction, so only one copy is
    stored; rows() expands it to (t, z, value) triples.
    """

    t: np.ndarray
    z: np.ndarray
    profile: np.ndarray
    params: FeedbackParams

    def slice_at(self, t_index: int) -> np.ndarray:
        if not 0 <= t_index < len(self.t):
            raise DomainError(f"t index {t_index} outside 0..{len(self.t) - 1}")
        return self.profile.copy()

    def rows(self) -> Iterator[tuple]:
        for ti in self.t:
            for zi, vi in zip(self.z, self.profile):
                yield ti, zi, vi

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "z", "value"])
        for ti, zi, vi in self.rows():
            writer.writerow([f"{ti:d}", f"{zi:.17g}", f"{vi:.17g}"])

    def to_json_dict(self) -> dict:
        return {
            "k": self.params.k,
            "c": self.params.c,
            "t": [int(v) for v in self.t],
            "z": [float(v) for v in self.z],
            "profile": [float(v) for v in self.profile],
        }


def emit_curve(
    params: FeedbackParams, z_min: float, z_max: float, n_points: int
) -> FeedbackCurve:
    """Evaluate K * f_c on an even grid of n_points over [z_min, z_max]."""
    if not (math.isfinite(z_min) and math.isfinite(z_max) and z_min < z_max):
        raise DomainError(f"need finite z_min < z_max, got [{z_min}, {z_max}]")
    if n_points < 2:
        raise DomainError(f"n_points must be >= 2, got {n_points}")
    z = np.linspace(z_min, z_max, int(n_points))
    values = np.asarray(eval_feedback(z, params))
    labels = None
    if params.k < 0.0:
        labels = tuple(classify_region(zi, params) for zi in z)
    z.setflags(write=False)
    values.setflags(write=False)
    return FeedbackCurve(
        z=z,
        values=values,
        params=params,
        critical=critical_points(params.c),
        region_labels=labels,
    )


def emit_surface(
    params: FeedbackParams, z_grid: Sequence[float] | np.ndarray, t_steps: int
) -> FeedbackSurface:
    """Repeat the K * f_c profile over t_steps time slices."""
    if t_steps < 1:
        raise DomainError(f"t_steps must be >= 1, got {t_steps}")
    z = _check_z(np.asarray(z_grid, dtype=float))
    if z.ndim != 1 or z.size < 2:
        raise DomainError("z_grid must be a 1-d grid with at least 2 points")
    profile = np.asarray(eval_feedback(z, params))
    z.setflags(write=False)
    profile.setflags(write=False)
    t = np.arange(int(t_steps))
    t.setflags(write=False)
    return FeedbackSurface(t=t, z=z, profile=profile, params=params)


def write_curve_json(curve: FeedbackCurve, fh, metadata: dict | None = None) -> None:
    doc = curve.to_json_dict()
    if metadata:
        doc = {"metadata": metadata, **doc}
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def write_surface_json(surface: FeedbackSurface, fh, metadata: dict | None = None) -> None:
    doc = surface.to_json_dict()
    if metadata:
        doc = {"metadata": metadata, **doc}
    json.dump(doc, fh, indent=2)
    fh.write("\n")
