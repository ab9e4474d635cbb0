"""Discrete variance-preserving diffusion with exact Gaussian-mixture scores.

The forward process follows the standard DDPM discretization: per-step noise
levels ``beta[t]``, ``alpha[t] = 1 - beta[t]``, ``alpha_bar[t]`` their running
product, and reverse-update stochasticity ``sigma[t] = sqrt(beta[t])``. With a
Gaussian-mixture data prior the time-t marginal is again a mixture, so the
score, the posterior mean (Tweedie estimate) and its Jacobian are all
available in closed form; no learned network is involved.

Convention: the canonical quantity is the true score ``s = grad log p_t``.
Where a noise-prediction form is needed it is ``eps_hat = -sqrt(1 -
alpha_bar[t]) * s``, which makes the Tweedie formula and the DDPM mean exact
simultaneously. Timesteps are 1-indexed (``t = 1 .. T``); the final ``t = 1``
reverse step adds no noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .rng import Domain, NoiseStream, StreamKey, derive_stream

__all__ = [
    "Schedule",
    "GaussianMixturePrior",
    "build_schedule",
    "marginal_params",
    "marginal_log_density",
    "score",
    "tweedie_estimate",
    "tweedie_jacobian",
    "tweedie_jacobian_apply",
    "ddpm_mean",
    "ddpm_step",
    "unconditional_sample",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Schedule:
    """Discrete VP/DDPM noise schedule; arrays indexed by ``t - 1``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1:
            raise ValueError("beta must be a nonempty 1-d array")
        if np.any((beta <= 0) | (beta >= 1)):
            raise ValueError("every beta must lie in (0, 1)")
        for name, arr, ref in (
            ("alpha", self.alpha, 1.0 - beta),
            ("alpha_bar", self.alpha_bar, np.cumprod(1.0 - beta)),
            ("sigma", self.sigma, np.sqrt(beta)),
        ):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != beta.shape or not np.allclose(arr, ref, rtol=1e-12, atol=0):
                raise ValueError(f"{name} is inconsistent with beta")

    @property
    def T(self) -> int:
        return len(self.beta)

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bar[t - 1])

    def alpha_bar_prev(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bar[t - 2]) if t >= 2 else 1.0

    def sigma_at(self, t: int) -> float:
        self._check(t)
        return float(self.sigma[t - 1])


def build_schedule(
    T: int, beta_min: float = 1e-4, beta_max: float = 0.02, kind: str = "linear"
) -> Schedule:
    """Linear beta schedule from ``beta_min`` at t=1 to ``beta_max`` at t=T."""
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    beta = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    alpha = 1.0 - beta
    return Schedule(
        beta=beta,
        alpha=alpha,
        alpha_bar=np.cumprod(alpha),
        sigma=np.sqrt(beta),
    )


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Mixture of Gaussians with diagonal or full covariances.

    ``variances`` has shape (k, d) when diagonal; ``covariances`` has shape
    (k, d, d) otherwise. Exactly one of the two is set.
    """

    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    variances: np.ndarray | None = None
    covariances: np.ndarray | None = None
    _chol: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        if w.ndim != 1 or len(w) != len(mu):
            raise ValueError("weights and means must have matching component counts")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("component weights must be positive and sum to 1 within 1e-12")
        if (self.variances is None) == (self.covariances is None):
            raise ValueError("exactly one of variances / covariances must be given")
        if self.variances is not None:
            v = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
            if v.shape != mu.shape:
                raise ValueError(f"variances shape {v.shape} != means shape {mu.shape}")
            if np.any(v <= 0):
                raise ValueError("diagonal variances must be positive")
            object.__setattr__(self, "variances", v)
        else:
            cov = np.asarray(self.covariances, dtype=np.float64)
            if cov.shape != (len(mu), self.d, self.d):
                raise ValueError(f"covariances must have shape (k, d, d), got {cov.shape}")
            chols = []
            for k in range(len(mu)):
                if not np.allclose(cov[k], cov[k].T, atol=1e-12):
                    raise ValueError(f"covariance {k} is not symmetric")
                try:
                    chols.append(cho_factor(cov[k], lower=True))
                except np.linalg.LinAlgError as exc:  # pragma: no cover
                    raise ValueError(f"covariance {k} is not positive-definite") from exc
            object.__setattr__(self, "covariances", cov)
            object.__setattr__(self, "_chol", tuple(chols))

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def diagonal(self) -> bool:
        return self.variances is not None

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixturePrior":
        """One-component prior; ``cov`` may be a scalar, a diagonal, or a matrix."""
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = np.full_like(mean, float(cov))
        if cov.ndim == 1:
            return cls(weights=np.array([1.0]), means=mean[None], variances=cov[None])
        return cls(weights=np.array([1.0]), means=mean[None], covariances=cov[None])

    def sample(self, n: int, stream: NoiseStream) -> np.ndarray:
        """Draw ``n`` points from the mixture; deterministic given the stream."""
        cum = np.cumsum(self.weights)
        out = np.empty((n, self.d))
        for j in range(n):
            u = (stream.raw(1)[0] >> np.uint64(12)).astype(np.float64) * 2.0**-52
            k = int(np.searchsorted(cum, u, side="right").clip(0, self.n_components - 1))
            z = stream.standard_normal(self.d)
            if self.diagonal:
                out[j] = self.means[k] + np.sqrt(self.variances[k]) * z
            else:
                L = np.linalg.cholesky(self.covariances[k])
                out[j] = self.means[k] + L @ z
        return out


def marginal_params(prior: GaussianMixturePrior, schedule: Schedule, t: int):
    """Component parameters of the time-t marginal mixture.

    Returns ``(weights, means, variances_or_covariances)`` in the prior's
    storage convention: means are scaled by ``sqrt(alpha_bar)`` and
    covariances shrink toward the identity as ``alpha_bar*Sigma + (1 -
    alpha_bar)*I``.
    """
    ab = schedule.alpha_bar_at(t)
    means = np.sqrt(ab) * prior.means
    if prior.diagonal:
        return prior.weights, means, ab * prior.variances + (1.0 - ab)
    eye = np.eye(prior.d)
    return prior.weights, means, ab * prior.covariances + (1.0 - ab) * eye


def _component_stats(prior, schedule, x, t):
    """Per-component log densities and score directions at x.

    Returns ``(log_w_pdf, g)`` where ``log_w_pdf[..., k]`` is
    ``log(w_k) + log N(x; m_k, C_k)`` of the time-t marginal and
    ``g[..., k, :]`` is ``-C_k^{-1} (x - m_k)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("state contains non-finite entries")
    if x.shape[-1] != prior.d:
        raise ValueError(f"state dimension {x.shape[-1]} != prior dimension {prior.d}")
    w, means, covs = marginal_params(prior, schedule, t)
    k = prior.n_components
    diff = x[..., None, :] - means  # (..., k, d)
    g = np.empty_like(diff)
    quad = np.empty(diff.shape[:-1])
    logdet = np.empty(k)
    if prior.diagonal:
        g[:] = -diff / covs
        quad[:] = np.sum(diff * diff / covs, axis=-1)
        logdet[:] = np.sum(np.log(covs), axis=-1)
    else:
        for j in range(k):
            dj = diff[..., j, :]
            cf = cho_factor(covs[j], lower=True)
            sol = cho_solve(cf, dj.reshape(-1, prior.d).T).T.reshape(dj.shape)
            g[..., j, :] = -sol
            quad[..., j] = np.sum(dj * sol, axis=-1)
            logdet[j] = 2.0 * np.sum(np.log(np.diag(cf[0])))
    log_w_pdf = np.log(w) - 0.5 * (quad + logdet + prior.d * _LOG_2PI)
    return log_w_pdf, g


def marginal_log_density(prior: GaussianMixturePrior, schedule: Schedule, x, t: int):
    """Log density of the time-t marginal mixture at x (batchable)."""
    log_w_pdf, _ = _component_stats(prior, schedule, x, t)
    return logsumexp(log_w_pdf, axis=-1)


def score(prior: GaussianMixturePrior, schedule: Schedule, x, t: int) -> np.ndarray:
    """Gradient of the log marginal density at x (batchable over leading axes)."""
    log_w_pdf, g = _component_stats(prior, schedule, x, t)
    resp = np.exp(log_w_pdf - logsumexp(log_w_pdf, axis=-1, keepdims=True))
    return np.einsum("...k,...kd->...d", resp, g)


def tweedie_estimate(prior: GaussianMixturePrior, schedule: Schedule, x_t, t: int) -> np.ndarray:
    """Posterior mean E[x_0 | x_t], via Tweedie's formula on the exact score."""
    ab = schedule.alpha_bar_at(t)
    s = score(prior, schedule, x_t, t)
    return (np.asarray(x_t, dtype=np.float64) + (1.0 - ab) * s) / np.sqrt(ab)


def _mixture_stats(prior, schedule, x, t):
    """Responsibilities, per-component directions, score, and precisions at one x."""
    log_w_pdf, g = _component_stats(prior, schedule, x, t)
    resp = np.exp(log_w_pdf - logsumexp(log_w_pdf, axis=-1, keepdims=True))
    s = np.einsum("...k,...kd->...d", resp, g)
    return resp, g, s


def tweedie_jacobian(prior: GaussianMixturePrior, schedule: Schedule, x_t, t: int) -> np.ndarray:
    """Exact d-by-d Jacobian of the Tweedie estimate at a single point.

    Uses the log-density Hessian ``H = sum_k r_k g_k g_k^T - s s^T -
    sum_k r_k C_k^{-1}``, giving ``J = (I + (1 - alpha_bar) H) / sqrt(alpha_bar)``.
    J is symmetric.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 1:
        raise ValueError("tweedie_jacobian expects a single state vector")
    resp, g, s = _mixture_stats(prior, schedule, x_t, t)
    ab = schedule.alpha_bar_at(t)
    _, _, covs = marginal_params(prior, schedule, t)
    H = np.einsum("k,kd,ke->de", resp, g, g) - np.outer(s, s)
    if prior.diagonal:
        H -= np.diag(resp @ (1.0 / covs))
    else:
        for j in range(prior.n_components):
            H -= resp[j] * np.linalg.inv(covs[j])
    return (np.eye(prior.d) + (1.0 - ab) * H) / np.sqrt(ab)


def tweedie_jacobian_apply(
    prior: GaussianMixturePrior, schedule: Schedule, x_t, t: int, v: np.ndarray
) -> np.ndarray:
    """Product J @ v without materializing J (J is symmetric, so J^T v = J v)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x_t.ndim != 1 or v.shape != x_t.shape:
        raise ValueError("tweedie_jacobian_apply expects matching 1-d state and vector")
    resp, g, s = _mixture_stats(prior, schedule, x_t, t)
    ab = schedule.alpha_bar_at(t)
    _, _, covs = marginal_params(prior, schedule, t)
    Hv = (resp * (g @ v)) @ g - s * (s @ v)
    if prior.diagonal:
        Hv -= np.einsum("k,kd->d", resp, v / covs)
    else:
        for j in range(prior.n_components):
            cf = cho_factor(covs[j], lower=True)
            Hv -= resp[j] * cho_solve(cf, v)
    return (v + (1.0 - ab) * Hv) / np.sqrt(ab)


def ddpm_mean(schedule: Schedule, x_t, t: int, score_value) -> np.ndarray:
    """Reverse-step mean: ``(x_t - beta/sqrt(1-alpha_bar) * eps_hat)/sqrt(alpha)``."""
    beta = schedule.beta_at(t)
    ab = schedule.alpha_bar_at(t)
    eps_hat = -np.sqrt(1.0 - ab) * np.asarray(score_value, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    return (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha_at(t))


def ddpm_step(schedule: Schedule, x_t, t: int, noise, score_value) -> np.ndarray:
    """One reverse step ``mean + sigma_t * noise``; the t=1 step is noiseless."""
    x_t = np.asarray(x_t, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x_t.shape:
        raise ValueError(f"noise shape {noise.shape} != state shape {x_t.shape}")
    mean = ddpm_mean(schedule, x_t, t, score_value)
    if t == 1:
        return mean
    return mean + schedule.sigma_at(t) * noise


def unconditional_sample(
    prior: GaussianMixturePrior, schedule: Schedule, seed: int
) -> np.ndarray:
    """Run the reverse process from a keyed N(0, I) latent down to x_0."""
    T = schedule.T
    x = derive_stream(StreamKey(seed, Domain.INIT_LATENT, T, 0)).standard_normal(prior.d)
    for t in range(T, 0, -1):
        s = score(prior, schedule, x, t)
        if t >= 2:
            noise = derive_stream(StreamKey(seed, Domain.FRESH_NOISE, t, 0)).standard_normal(prior.d)
        else:
            noise = np.zeros(prior.d)
        x = ddpm_step(schedule, x, t, noise, s)
    return x
