"""Return estimators over teacher Q-surfaces, and their diagnostics.

Definitions used throughout, for a trajectory with steps t = 0..T (T is the
last step index):

    q[t] = q(s_t, a_t)                   Q-value of the action actually taken
    m[t] = max_a q(s_t, a)               best Q available at the visited state

The actual return accumulates induced rewards backward, with no continuation
term after the final action (the episode is over, whether by EOS or horizon):

    G[T] = q[T]
    G[t] = (q[t] - m[t+1]) + G[t+1]

The K-step return replaces runs of one-step differences with a single jump
whenever at least K steps remain, assuming near-optimal intermediate actions:

    Ghat[T] = q[T]
    Ghat[t] = (q[t] - m[t+1]) + Ghat[t+1]      if T - t < K
    Ghat[t] = (q[t] - m[t+K]) + Ghat[t+K]      otherwise

The two differ exactly by the Q-value shortfall of the skipped steps:
G[t] - Ghat[t] = sum over skipped j of (q[j] - m[j]), each term <= 0.  That
difference is the implied baseline, reported pre-clip so the decomposition
G = Ghat + baseline is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seqmdp import Trajectory
from .teacher import DEFAULT_CLIP_RANGE, TeacherQ


class InsufficientSampleError(ValueError):
    """Too few trajectories reach the requested step to form statistics."""


@dataclass(frozen=True)
class ReturnConfig:
    k: int = 1
    clip_range: tuple[float, float] = DEFAULT_CLIP_RANGE

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ValueError(f"bad clip range {self.clip_range}")


def clip_returns(values: np.ndarray, cfg: ReturnConfig) -> np.ndarray:
    lo, hi = cfg.clip_range
    return np.clip(values, lo, hi)


def trajectory_q_terms(traj: Trajectory, teacher: TeacherQ) -> tuple[np.ndarray, np.ndarray]:
    """(q_taken, max_q) per step state; one teacher evaluation per state."""
    n = traj.num_steps
    q_taken = np.empty(n, dtype=np.float64)
    max_q = np.empty(n, dtype=np.float64)
    for t, s in enumerate(traj.steps):
        qv = teacher.q_values(s.state)
        q_taken[t] = qv[s.action]
        max_q[t] = qv.max()
    return q_taken, max_q


def actual_return(traj: Trajectory, teacher: TeacherQ) -> np.ndarray:
    """Per-step cumulative induced reward G[t], unclipped."""
    q, m = trajectory_q_terms(traj, teacher)
    return actual_from_terms(q, m)


def actual_from_terms(q: np.ndarray, m: np.ndarray) -> np.ndarray:
    n = len(q)
    g = np.empty(n, dtype=np.float64)
    g[n - 1] = q[n - 1]
    for t in range(n - 2, -1, -1):
        g[t] = (q[t] - m[t + 1]) + g[t + 1]
    return g


def kstep_from_terms(q: np.ndarray, m: np.ndarray, k: int) -> np.ndarray:
    n = len(q)
    last = n - 1
    g = np.empty(n, dtype=np.float64)
    g[last] = q[last]
    for t in range(last - 1, -1, -1):
        if last - t < k:
            g[t] = (q[t] - m[t + 1]) + g[t + 1]
        else:
            g[t] = (q[t] - m[t + k]) + g[t + k]
    return g


def kstep_return_raw(traj: Trajectory, teacher: TeacherQ, k: int) -> np.ndarray:
    q, m = trajectory_q_terms(traj, teacher)
    return kstep_from_terms(q, m, k)


def kstep_return(traj: Trajectory, teacher: TeacherQ, cfg: ReturnConfig) -> np.ndarray:
    """K-step approximate return Ghat[t], clipped to cfg.clip_range."""
    return clip_returns(kstep_return_raw(traj, teacher, cfg.k), cfg)


def implied_baseline(traj: Trajectory, teacher: TeacherQ, cfg: ReturnConfig) -> np.ndarray:
    """The baseline the K-step estimator implicitly subtracts: G - Ghat, pre-clip."""
    q, m = trajectory_q_terms(traj, teacher)
    return actual_from_terms(q, m) - kstep_from_terms(q, m, cfg.k)


def skipped_step_gaps(traj: Trajectory, teacher: TeacherQ, k: int) -> np.ndarray:
    """Termwise form of the baseline: per t, the sum of (q[j] - m[j]) over the
    steps j the K-step recursion jumps over from t.  Equals implied_baseline."""
    q, m = trajectory_q_terms(traj, teacher)
    n = len(q)
    last = n - 1
    out = np.empty(n, dtype=np.float64)
    out[last] = 0.0
    for t in range(last - 1, -1, -1):
        if last - t < k:
            out[t] = out[t + 1]
        else:
            out[t] = np.sum(q[t + 1 : t + k] - m[t + 1 : t + k]) + out[t + k]
    return out


@dataclass(frozen=True)
class ReturnEstimate:
    """Per-step signals for one trajectory.

    ``g_hat`` and ``g_actual`` are pre-clip so that
    ``g_hat == g_actual - baseline`` holds identically; the clipped learning
    signals are exposed separately.
    """

    g_hat: np.ndarray
    g_actual: np.ndarray
    baseline: np.ndarray
    config: ReturnConfig

    @property
    def g_hat_clipped(self) -> np.ndarray:
        return clip_returns(self.g_hat, self.config)

    @property
    def g_actual_clipped(self) -> np.ndarray:
        return clip_returns(self.g_actual, self.config)


def estimate(traj: Trajectory, teacher: TeacherQ, cfg: ReturnConfig) -> ReturnEstimate:
    q, m = trajectory_q_terms(traj, teacher)
    g = actual_from_terms(q, m)
    g_hat = kstep_from_terms(q, m, cfg.k)
    return ReturnEstimate(g_hat=g_hat, g_actual=g, baseline=g - g_hat, config=cfg)


# -- sample statistics -----------------------------------------------------


@dataclass(frozen=True)
class EstimatorStats:
    n: int
    mean_g_hat: float
    var_g_hat: float
    mean_g: float
    var_g: float
    bias: float  # mean(Ghat - G)


def estimator_stats(
    trajs: Sequence[Trajectory], teacher: TeacherQ, cfg: ReturnConfig, at_step: int
) -> EstimatorStats:
    """Sample moments of the clipped estimators at one step index.

    Trajectories shorter than at_step+1 are excluded; at least two must
    survive for the unbiased variance to exist.
    """
    g_hat_vals: list[float] = []
    g_vals: list[float] = []
    for traj in trajs:
        if traj.num_steps <= at_step:
            continue
        est = estimate(traj, teacher, cfg)
        g_hat_vals.append(float(est.g_hat_clipped[at_step]))
        g_vals.append(float(est.g_actual_clipped[at_step]))
    n = len(g_hat_vals)
    if n < 2:
        raise InsufficientSampleError(
            f"need >= 2 trajectories with more than {at_step} steps, got {n}"
        )
    gh = np.array(g_hat_vals)
    g = np.array(g_vals)
    return EstimatorStats(
        n=n,
        mean_g_hat=float(gh.mean()),
        var_g_hat=float(gh.var(ddof=1)),
        mean_g=float(g.mean()),
        var_g=float(g.var(ddof=1)),
        bias=float((gh - g).mean()),
    )


# -- iid surrogate for the variance law -------------------------------------

# The variance comparison between G and Ghat has a closed form when the
# (q, max) pairs entering each summand are iid across steps.  Real MDP
# trajectories violate that, so the law is checked on this surrogate, which
# draws every q-term ~ N(0, var_sa) and every max-term ~ N(0, var_s)
# independently and assembles the two estimators from their term counts:
# num_terms for G, floor((num_terms-1)/k) + 1 for Ghat.


def iid_term_count_actual(num_terms: int) -> int:
    return num_terms


def iid_term_count_kstep(num_terms: int, k: int) -> int:
    return (num_terms - 1) // k + 1


def predicted_var_actual(num_terms: int, var_sa: float, var_s: float) -> float:
    return iid_term_count_actual(num_terms) * (var_sa + var_s)


def predicted_var_kstep(num_terms: int, k: int, var_sa: float, var_s: float) -> float:
    return iid_term_count_kstep(num_terms, k) * (var_sa + var_s)


def iid_gaussian_samples(
    num_terms: int,
    k: int,
    var_sa: float,
    var_s: float,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n_samples of (G, Ghat) from the iid construction."""
    if num_terms < 1 or k < 1:
        raise ValueError("num_terms and k must be >= 1")
    sd_q, sd_m = np.sqrt(var_sa), np.sqrt(var_s)
    c_actual = iid_term_count_actual(num_terms)
    c_kstep = iid_term_count_kstep(num_terms, k)
    g = sd_q * rng.standard_normal((n_samples, c_actual)).sum(axis=1)
    g -= sd_m * rng.standard_normal((n_samples, c_actual)).sum(axis=1)
    g_hat = sd_q * rng.standard_normal((n_samples, c_kstep)).sum(axis=1)
    g_hat -= sd_m * rng.standard_normal((n_samples, c_kstep)).sum(axis=1)
    return g, g_hat


# -- diagnostics -------------------------------------------------------------

DIAGNOSTICS_HEADER = ("traj_id", "t", "g_actual", "g_hat", "baseline", "K")


def write_diagnostics_csv(
    path: str | Path,
    trajs: Iterable[Trajectory],
    teacher: TeacherQ,
    cfg: ReturnConfig,
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTICS_HEADER)
        for traj_id, traj in enumerate(trajs):
            est = estimate(traj, teacher, cfg)
            for t in range(traj.num_steps):
                writer.writerow(
                    (
                        traj_id,
                        t,
                        repr(float(est.g_actual[t])),
                        repr(float(est.g_hat[t])),
                        repr(float(est.baseline[t])),
                        cfg.k,
                    )
                )
