"""Guidance trajectories: the centre of the quadratic steering potential.

Three closed forms (linear interpolant between endpoint means, sinh arc for
mean-reverting base drift, constants for the independent-agent baselines)
plus a Picard fixed-point iteration retained for validation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import PwcSchedule, interval_of

__all__ = [
    "GuidanceTrajectory",
    "linear_guidance",
    "ou_guidance",
    "constant_guidance",
    "pwc_guidance",
    "sinh_ratio",
    "fixed_point_guidance",
    "FixedPointResult",
]

OU_LINEAR_FALLBACK = 1e-8


def sinh_ratio(kappa: float, t):
    """sinh(kappa*t)/sinh(kappa), stably via exp-scaling; -> t as kappa -> 0."""
    t = np.asarray(t, dtype=float)
    if kappa < OU_LINEAR_FALLBACK:
        return t.copy()
    # e^{kappa(t-1)} (1 - e^{-2 kappa t}) / (1 - e^{-2 kappa}); no overflow for large kappa
    return np.exp(kappa * (t - 1.0)) * (-np.expm1(-2.0 * kappa * t)) / (-np.expm1(-2.0 * kappa))


@dataclass
class GuidanceTrajectory:
    """Dense evaluator nu(t) -> (d,) plus its per-interval PWC representation."""

    kind: str  # "linear" | "sinh" | "constant" | "pwc"
    m_in: np.ndarray | None = None
    m_tar: np.ndarray | None = None
    kappa: float = 0.0
    values: np.ndarray | None = None  # (M, d) for kind == "pwc"
    schedule: PwcSchedule | None = field(default=None, repr=False)

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "linear":
            out = np.outer(1.0 - t_arr, self.m_in) + np.outer(t_arr, self.m_tar)
        elif self.kind == "sinh":
            out = np.outer(sinh_ratio(self.kappa, t_arr), self.m_tar)
        elif self.kind == "constant":
            out = np.broadcast_to(self.m_tar, (t_arr.size, self.m_tar.size)).copy()
        elif self.kind == "pwc":
            idx = interval_of(self.schedule, np.clip(t_arr, 0.0, 1.0))
            out = self.values[np.atleast_1d(idx)]
        else:
            raise ValueError(f"unknown guidance kind {self.kind!r}")
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out

    @property
    def dim(self) -> int:
        if self.kind == "pwc":
            return self.values.shape[1]
        return self.m_tar.size

    def pwc_values(self, schedule: PwcSchedule) -> np.ndarray:
        """Per-interval representative values, sampled at interval midpoints."""
        if self.kind == "pwc":
            if self.schedule is not None and not np.array_equal(
                self.schedule.breakpoints, schedule.breakpoints
            ):
                raise ValueError("pwc guidance defined on a different schedule")
            return self.values
        return np.atleast_2d(self(schedule.midpoints()))


def linear_guidance(m_in, m_tar) -> GuidanceTrajectory:
    """Exact interpolant nu(t) = (1-t) m_in + t m_tar between endpoint means."""
    m_in = np.atleast_1d(np.asarray(m_in, dtype=float))
    m_tar = np.atleast_1d(np.asarray(m_tar, dtype=float))
    if m_in.shape != m_tar.shape:
        raise ValueError(f"endpoint mean shapes differ: {m_in.shape} vs {m_tar.shape}")
    if not (np.all(np.isfinite(m_in)) and np.all(np.isfinite(m_tar))):
        raise ValueError("non-finite endpoint mean")
    return GuidanceTrajectory(kind="linear", m_in=m_in, m_tar=m_tar)


def ou_guidance(kappa: float, m_tar) -> GuidanceTrajectory:
    """Sinh arc nu(t) = m_tar sinh(kappa t)/sinh(kappa); delta start assumed."""
    m_tar = np.atleast_1d(np.asarray(m_tar, dtype=float))
    if kappa < OU_LINEAR_FALLBACK:
        return linear_guidance(np.zeros_like(m_tar), m_tar)
    return GuidanceTrajectory(kind="sinh", m_tar=m_tar, kappa=kappa)


def constant_guidance(value) -> GuidanceTrajectory:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return GuidanceTrajectory(kind="constant", m_tar=value)


def pwc_guidance(schedule: PwcSchedule, values) -> GuidanceTrajectory:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] != schedule.n_intervals:
        raise ValueError(f"need one value per interval: {values.shape[0]} vs {schedule.n_intervals}")
    return GuidanceTrajectory(kind="pwc", values=values, schedule=schedule)


@dataclass
class FixedPointResult:
    guidance: GuidanceTrajectory
    max_updates: list
    converged: bool
    n_iterations: int


def fixed_point_guidance(
    schedule: PwcSchedule,
    mean_map,
    nu0: np.ndarray,
    tol: float = 2e-4,
    max_iter: int = 15,
) -> FixedPointResult:
    """Plain Picard iteration of the self-consistency map on PWC values.

    ``mean_map`` takes per-interval guidance values (M, d) and returns the
    empirical ensemble means at the interval midpoints under that guidance.
    For a deterministic contraction the caller should evaluate the map with
    common random numbers across iterations.  Non-convergence returns the
    best iterate flagged converged=False.
    """
    nu = np.atleast_2d(np.asarray(nu0, dtype=float)).copy()
    updates = []
    for k in range(max_iter):
        nu_next = np.atleast_2d(mean_map(nu))
        if nu_next.shape != nu.shape:
            raise ValueError(f"mean_map changed shape: {nu_next.shape} vs {nu.shape}")
        delta = float(np.max(np.linalg.norm(nu_next - nu, axis=1)))
        updates.append(delta)
        nu = nu_next
        if delta < tol:
            return FixedPointResult(pwc_guidance(schedule, nu), updates, True, k + 1)
    return FixedPointResult(pwc_guidance(schedule, nu), updates, False, max_iter)
