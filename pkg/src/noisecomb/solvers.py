"""Guided reverse-diffusion solvers.

Two families share one stream layout so runs with equal seeds are paired:

* baselines (``DPS``, ``MPGD``, ``DDCM``) steer the trajectory through the
  mean term (gradient steps) or swap in a single selected codebook atom;
* combination variants (``NCS-DPS``, ``NCS-MPGD``, ``NCS-DDCM``) leave the
  DDPM mean untouched and put all guidance into the noise term, replacing
  the fresh Gaussian draw with the optimal unit-norm combination of codebook
  atoms aligned with the solver's measurement direction. This restriction is
  structural: the combination path has no code that modifies the mean.

Degenerate directions (no usable codebook projection) fall back to either a
fresh keyed Gaussian draw or the first codebook atom, per configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .combination import (
    DegenerateDirectionError,
    inner_products,
    optimal_weights,
    synthesize_noise,
    top_m_weights,
)
from .diffusion import (
    GaussianMixturePrior,
    Schedule,
    ddpm_step,
    score,
    tweedie_jacobian_apply,
)
from .operators import Observation, mpgd_direction
from .rng import Domain, StreamKey, build_codebook, derive_stream

__all__ = [
    "BASELINE_SOLVERS",
    "NCS_SOLVERS",
    "SolverConfig",
    "SolveResult",
    "ncs_solve",
    "baseline_solve",
    "solve",
]

BASELINE_SOLVERS = ("DPS", "MPGD", "DDCM")
NCS_SOLVERS = ("NCS-DPS", "NCS-MPGD", "NCS-DDCM")

# Recommended codebook sizes per task family. Guidance strength shrinks the
# usable noise subspace, so weakly constrained tasks get larger codebooks.
# Advisory defaults, not hard requirements; configs may name these instead of
# a number.
TASK_K_PRESETS = {
    "sr4": 512,
    "sr8": 64,
    "inpaint_box": 64,
    "inpaint_random": 512,
    "gaussian_deblur": 256,
    "motion_deblur": 512,
}


@dataclass(frozen=True)
class SolverConfig:
    solver: str
    T: int
    K: int = 64
    m: int | None = None  # None: combine over the full codebook
    seed: int = 0
    zeta: float = 1.0  # DPS guidance scale (normalized by the residual norm)
    lam: float = 0.1  # MPGD step size, scaled by sqrt(alpha_bar_t)
    fallback: str = "FreshNoise"

    def __post_init__(self) -> None:
        if self.solver not in BASELINE_SOLVERS + NCS_SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.m is not None and not 1 <= self.m <= self.K:
            raise ValueError(f"m must be in [1, {self.K}], got {self.m}")
        if self.fallback not in ("FreshNoise", "FirstAtom"):
            raise ValueError(f"unknown fallback {self.fallback!r}")


@dataclass(frozen=True)
class SolveResult:
    x0: np.ndarray
    degenerate_steps: int


def _init_latent(seed: int, T: int, d: int) -> np.ndarray:
    return derive_stream(StreamKey(seed, Domain.INIT_LATENT, T, 0)).standard_normal(d)


def _fresh_noise(seed: int, t: int, d: int) -> np.ndarray:
    return derive_stream(StreamKey(seed, Domain.FRESH_NOISE, t, 0)).standard_normal(d)


def _tweedie_from_score(schedule: Schedule, x, t: int, s) -> np.ndarray:
    ab = schedule.alpha_bar_at(t)
    return (x + (1.0 - ab) * s) / np.sqrt(ab)


def _direction(kind, prior, schedule, obs, x, t, x0_hat):
    """Measurement direction for a solver family, reusing the Tweedie estimate."""
    residual = obs.y - obs.operator.apply(x0_hat)
    pulled = obs.operator.adjoint(residual)
    if kind.endswith("DPS"):
        c = tweedie_jacobian_apply(prior, schedule, x, t, pulled)
        return c / schedule.sigma_at(t) ** 2
    return pulled


def ncs_solve(
    prior: GaussianMixturePrior,
    schedule: Schedule,
    obs: Observation,
    config: SolverConfig,
) -> SolveResult:
    """Algorithmic loop of the combination solvers.

    Per step: Tweedie estimate, measurement direction, optimal (or top-m)
    weights over the timestep codebook, synthesized noise, plain DDPM step.
    The final t=1 step is noiseless.
    """
    if config.solver not in NCS_SOLVERS:
        raise ValueError(f"ncs_solve requires a combination solver, got {config.solver!r}")
    if config.T != schedule.T:
        raise ValueError(f"config.T={config.T} != schedule.T={schedule.T}")
    d = prior.d
    x = _init_latent(config.seed, schedule.T, d)
    degenerate = 0
    for t in range(schedule.T, 0, -1):
        s = score(prior, schedule, x, t)
        if t == 1:
            x = ddpm_step(schedule, x, 1, np.zeros(d), s)
            break
        x0_hat = _tweedie_from_score(schedule, x, t, s)
        c = _direction(config.solver, prior, schedule, obs, x, t, x0_hat)
        codebook = build_codebook(config.seed, t, config.K, d)
        try:
            if config.m is None:
                weights = optimal_weights(c, codebook)
            else:
                weights = top_m_weights(c, codebook, config.m)
            eps = synthesize_noise(codebook, weights)
        except DegenerateDirectionError:
            degenerate += 1
            if config.fallback == "FreshNoise":
                eps = _fresh_noise(config.seed, t, d)
            else:
                eps = codebook.atoms[:, 0]
        x = ddpm_step(schedule, x, t, eps, s)
    return SolveResult(x0=x, degenerate_steps=degenerate)


def baseline_solve(
    prior: GaussianMixturePrior,
    schedule: Schedule,
    obs: Observation,
    config: SolverConfig,
) -> SolveResult:
    """Reference solvers guided through the mean term or one-hot atom choice.

    DPS subtracts ``zeta_t * grad ||y - A x0_hat||^2`` from the DDPM update
    with the residual-normalized step ``zeta_t = zeta / ||y - A x0_hat||``.
    MPGD moves the Tweedie estimate by ``2 lam sqrt(alpha_bar) A^T r`` and
    folds the shift back through the posterior-mean coefficient. DDCM swaps
    the step noise for the single best-aligned codebook atom.
    """
    if config.solver not in BASELINE_SOLVERS:
        raise ValueError(f"baseline_solve requires a baseline solver, got {config.solver!r}")
    if config.T != schedule.T:
        raise ValueError(f"config.T={config.T} != schedule.T={schedule.T}")
    d = prior.d
    x = _init_latent(config.seed, schedule.T, d)
    degenerate = 0
    for t in range(schedule.T, 0, -1):
        s = score(prior, schedule, x, t)
        x0_hat = _tweedie_from_score(schedule, x, t, s)
        residual = obs.y - obs.operator.apply(x0_hat)
        noise = _fresh_noise(config.seed, t, d) if t >= 2 else np.zeros(d)

        if config.solver == "DDCM":
            if t >= 2:
                codebook = build_codebook(config.seed, t, config.K, d)
                c = mpgd_direction(obs, x0_hat)
                b = inner_products(c, codebook)
                if np.linalg.norm(c) > 0:
                    noise = codebook.atoms[:, int(np.argmax(b))]
                else:
                    degenerate += 1
                    if config.fallback == "FirstAtom":
                        noise = codebook.atoms[:, 0]
            x = ddpm_step(schedule, x, t, noise, s)
            continue

        x_next = ddpm_step(schedule, x, t, noise, s)
        if config.solver == "DPS":
            rnorm = float(np.linalg.norm(residual))
            if rnorm > 0 and config.zeta != 0.0:
                grad = -2.0 * tweedie_jacobian_apply(
                    prior, schedule, x, t, obs.operator.adjoint(residual)
                )
                x_next = x_next - (config.zeta / rnorm) * grad
        else:  # MPGD
            if config.lam != 0.0:
                shift = 2.0 * config.lam * np.sqrt(schedule.alpha_bar_at(t)) * obs.operator.adjoint(residual)
                ab, ab_prev = schedule.alpha_bar_at(t), schedule.alpha_bar_prev(t)
                coef0 = np.sqrt(ab_prev) * schedule.beta_at(t) / (1.0 - ab)
                x_next = x_next + coef0 * shift
        x = x_next
    return SolveResult(x0=x, degenerate_steps=degenerate)


def solve(
    prior: GaussianMixturePrior,
    schedule: Schedule,
    obs: Observation,
    config: SolverConfig,
) -> SolveResult:
    """Dispatch on the solver family."""
    if config.solver in NCS_SOLVERS:
        return ncs_solve(prior, schedule, obs, config)
    return baseline_solve(prior, schedule, obs, config)
