"""Prior-aware diffusion over SE(3)^N: schedules, forward noising, reverse steps, VLB terms.

Timesteps are indexed ``t = 1..T`` with ``alpha_bar[0] = 1``. Every pose-set
operation here acts scan-wise, so permuting scans permutes results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidArgumentError, PoseDiffError, SurrogateError
from .geometry import transform_scene
from .lie import PoseSet, RigidTransform, pose_interpolate


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances. ``beta``, ``alpha`` and ``beta_tilde`` are indexed by ``t - 1``;
    ``alpha_bar`` and ``one_minus_alpha_bar`` by ``t`` (length T + 1)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    one_minus_alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    @property
    def T(self):
        return len(self.beta)

    @classmethod
    def from_betas(cls, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.ndim != 1 or len(beta) < 1 or np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidArgumentError("betas must be a non-empty array in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
        # 1 - alpha_bar without cancellation near t = 1
        omab = np.concatenate([[0.0], -np.expm1(np.cumsum(np.log1p(-beta)))])
        return cls._finish(beta, alpha, alpha_bar, omab)

    @classmethod
    def from_alpha_bar(cls, alpha_bar, one_minus_alpha_bar=None):
        """Schedule with the given cumulative products (``alpha_bar[0]`` must be 1)."""
        alpha_bar = np.asarray(alpha_bar, dtype=float)
        if alpha_bar[0] != 1.0 or np.any(np.diff(alpha_bar) >= 0):
            raise InvalidArgumentError("alpha_bar must start at 1 and strictly decrease")
        omab = 1.0 - alpha_bar if one_minus_alpha_bar is None else np.asarray(one_minus_alpha_bar, float)
        alpha = alpha_bar[1:] / alpha_bar[:-1]
        return cls._finish(1.0 - alpha, alpha, alpha_bar, omab)

    @classmethod
    def _finish(cls, beta, alpha, alpha_bar, omab):
        beta_tilde = beta * omab[:-1] / omab[1:]
        arrays = [np.array(a, dtype=float) for a in (beta, alpha, alpha_bar, omab, beta_tilde)]
        for a in arrays:
            a.flags.writeable = False
        return cls(*arrays)

    def respace(self, timesteps):
        """Sub-schedule visiting only ``timesteps`` (ascending, 1-based).

        Step k of the result jumps from ``timesteps[k-1]`` to ``timesteps[k-2]``
        (or to 0 for k = 1), with coefficients derived from the original
        cumulative products.
        """
        ts = np.asarray(timesteps, dtype=int)
        if ts.ndim != 1 or len(ts) == 0 or ts[0] < 1 or ts[-1] > self.T or np.any(np.diff(ts) <= 0):
            raise InvalidArgumentError(f"bad timesteps for a schedule of length {self.T}")
        idx = np.concatenate([[0], ts])
        return NoiseSchedule.from_alpha_bar(self.alpha_bar[idx], self.one_minus_alpha_bar[idx])


@dataclass(frozen=True)
class DenoiseCoeffs:
    lambda0: float
    lambda1: float
    lambda2: float
    sigma: float


@dataclass(frozen=True)
class DiffusionConfig:
    gamma: float = 0.1
    train_steps: int = 200
    inference_steps: int = 10
    seed: int = 0
    noise_on: bool = True
    # "prior": start the reverse chain at the prior; "sample": Exp(noise) @ prior
    init: str = "prior"
    # per-component multipliers on the unit forward-noise twist (omega, v)
    noise_scales: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

    def validate(self):
        if self.gamma < 0:
            raise InvalidArgumentError("gamma must be non-negative")
        if not 1 <= self.inference_steps <= self.train_steps:
            raise InvalidArgumentError("need 1 <= inference_steps <= train_steps")
        if self.init not in ("prior", "sample"):
            raise InvalidArgumentError(f"unknown chain initialisation {self.init!r}")
        if len(self.noise_scales) != 6:
            raise InvalidArgumentError("noise_scales needs six entries")


def cosine_schedule(T, s=0.008, max_beta=0.999):
    """Cosine schedule: alpha_bar follows cos^2 of a shifted linear ramp."""
    if T < 1:
        raise InvalidArgumentError(f"need at least one step, got T={T}")
    steps = np.arange(T + 1) / T
    f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
    alpha_bar = f / f[0]
    beta = np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], max_beta)
    return NoiseSchedule.from_betas(beta)


def inference_timesteps(T, K):
    """K timesteps evenly spread over [1, T], descending, always ending at 1."""
    if not 1 <= K <= T:
        raise InvalidArgumentError(f"need 1 <= K <= T, got K={K}, T={T}")
    if K == 1:
        return np.array([1])
    ts = np.floor(np.linspace(1, T, K) + 0.5).astype(int)
    return ts[::-1]


def coeffs_at(s, t):
    """Posterior weights on (optimal pose, current pose, prior) and the step noise."""
    if not 1 <= t <= s.T:
        raise IndexError(f"timestep {t} outside 1..{s.T}")
    ab_t, ab_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    omab_t, omab_prev = s.one_minus_alpha_bar[t], s.one_minus_alpha_bar[t - 1]
    a_t, b_t = s.alpha[t - 1], s.beta[t - 1]
    sq_a, sq_prev, sq_t = math.sqrt(a_t), math.sqrt(ab_prev), math.sqrt(ab_t)
    lam0 = sq_prev * b_t / omab_t
    lam1 = sq_a * omab_prev / omab_t
    # 1 + (sqrt(ab_t) - 1)(sqrt(a_t) + sqrt(ab_prev)) / (1 - ab_t), with 1 - ab_t factored
    lam2 = 1.0 - (sq_a + sq_prev) / (1.0 + sq_t)
    return DenoiseCoeffs(lam0, lam1, lam2, math.sqrt(s.beta_tilde[t - 1]))


def _as_set(x):
    return PoseSet.from_transforms([x]) if isinstance(x, RigidTransform) else x


def _check_lengths(*sets):
    n = len(sets[0])
    if any(len(p) != n for p in sets):
        raise InvalidArgumentError(f"pose sets differ in length: {[len(p) for p in sets]}")


def diffuse_to(t0, prior, alpha_bar, gamma, rng, noise_scales=None):
    """Sample ``Exp(gamma sqrt(1 - alpha_bar) eps) F(sqrt(alpha_bar); t0, prior)`` scan-wise."""
    _check_lengths(t0, prior)
    interp = pose_interpolate(math.sqrt(alpha_bar), t0, prior)
    scale = gamma * math.sqrt(max(1.0 - alpha_bar, 0.0))
    if scale == 0.0:
        return interp
    eps = rng.standard_normal((len(t0), 6))
    if noise_scales is not None:
        eps = eps * np.asarray(noise_scales, dtype=float)
    return PoseSet.exp(scale * eps).compose(interp)


def forward_diffuse(t0, prior, t, gamma, rng, schedule, noise_scales=None):
    """Sample T^t from the prior-anchored forward process at step ``t`` (0..T)."""
    if not 0 <= t <= schedule.T:
        raise InvalidArgumentError(f"timestep {t} outside 0..{schedule.T}")
    return diffuse_to(t0, prior, schedule.alpha_bar[t], gamma, rng, noise_scales)


def _log(poses, what):
    try:
        return poses.log()
    except DomainError as exc:
        raise DomainError(f"{what}: logarithm undefined", exc.index) from exc


def _blend(c, anchor_log, current, prior):
    """``l0 anchor_log + l1 Log(current) + l2 Log(prior)``; pose arguments may be
    passed as precomputed tangent arrays."""
    tangent = c.lambda0 * anchor_log
    if c.lambda1 != 0.0:
        tangent = tangent + c.lambda1 * _maybe_log(current, "current pose")
    if c.lambda2 != 0.0:
        tangent = tangent + c.lambda2 * _maybe_log(prior, "prior pose")
    return tangent


def _maybe_log(x, what):
    return x if isinstance(x, np.ndarray) else _log(x, what)


def posterior_mean(t0, tt, prior, c):
    """``Exp(l0 Log T0 + l1 Log Tt + l2 Log prior)`` for single transforms or pose sets."""
    single = isinstance(t0, RigidTransform)
    t0, tt, prior = _as_set(t0), _as_set(tt), _as_set(prior)
    _check_lengths(t0, tt, prior)
    out = PoseSet.exp(_blend(c, _log(t0, "optimal pose"), tt, prior))
    return out[0] if single else out


def reverse_step(residuals, tt, prior, c, noise_on=False, rng=None):
    """One denoising step driven by surrogate residuals (world-frame, left-composed)."""
    _check_lengths(residuals, tt, prior)
    anchor = residuals.compose(tt)
    tangent = _blend(c, _log(anchor, "surrogate estimate"), tt, prior)
    if noise_on and c.sigma > 0.0:
        tangent = tangent + c.sigma * rng.standard_normal(tangent.shape)
    return PoseSet.exp(tangent)


def _call_surrogate(surrogate, scene, current, t, rng):
    scans_t = transform_scene(scene, current)
    try:
        out = surrogate.estimate(scans_t, current, scene, t=t, rng=rng)
    except SurrogateError:
        raise
    except PoseDiffError as exc:
        raise SurrogateError(f"surrogate failed: {exc}", step=t, scan=getattr(exc, "scan", None)) from exc
    if len(out.residuals) != len(current):
        raise SurrogateError("surrogate returned the wrong number of residuals", step=t)
    return out


def run_denoising(scene, prior, surrogate, schedule, cfg, rng):
    """Reverse chain from the prior over K strided timesteps.

    Returns the trajectory ``[state at t=T, ..., final state]`` (K + 1 pose sets).
    """
    cfg.validate()
    if cfg.inference_steps > schedule.T:
        raise InvalidArgumentError("more inference steps than schedule steps")
    ts = inference_timesteps(schedule.T, cfg.inference_steps)
    sub = schedule.respace(ts[::-1])
    if cfg.init == "sample":
        current = diffuse_to(prior, prior, schedule.alpha_bar[schedule.T], cfg.gamma, rng, cfg.noise_scales)
    else:
        current = prior
    trajectory = [current]
    for k in range(len(ts), 0, -1):
        t = int(ts[len(ts) - k])
        out = _call_surrogate(surrogate, scene, current, t, rng)
        try:
            current = reverse_step(out.residuals, current, prior, coeffs_at(sub, k), cfg.noise_on, rng)
        except DomainError as exc:
            raise SurrogateError(f"reverse step failed: {exc}", step=t, scan=exc.index) from exc
        trajectory.append(current)
    return trajectory


@dataclass(frozen=True, eq=False)
class VLBTerms:
    residual_term: float
    prior_matching_term: float
    denoising_terms: np.ndarray = field(repr=False)  # index k holds t = k + 2

    @property
    def total(self):
        return self.residual_term - self.prior_matching_term - float(np.sum(self.denoising_terms))


def prior_matching_kl(t0, prior, schedule, gamma):
    """KL between the terminal forward marginal and N(prior, gamma^2 I) on the tangent at the prior.

    Depends only on poses and the schedule, never on a surrogate.
    """
    if gamma <= 0:
        raise InvalidArgumentError("prior matching needs gamma > 0")
    T = schedule.T
    interp = pose_interpolate(math.sqrt(schedule.alpha_bar[T]), t0, prior)
    delta = _log(interp.compose(prior.inverse()), "terminal mean")
    ratio = schedule.one_minus_alpha_bar[T]  # q variance / p variance
    dim = delta.size
    return 0.5 * (dim * (ratio - 1.0 - math.log(ratio)) + float(np.sum(delta * delta)) / gamma**2)


def vlb_terms(scene, t0, prior, surrogate, schedule, rng, gamma=0.1):
    """Monte-Carlo (one draw per step) evaluation of the prior-aware variational bound.

    Posterior and model at step t share covariance ``beta_tilde_t I`` on the
    6N tangent space, so each denoising KL is ``|mu_post - mu_model|^2 / (2 beta_tilde_t)``
    with the means compared as tangent vectors. The residual term is a
    Gaussian log-density of ``Log(T0 mu^-1)`` with variance ``beta_1``.
    """
    _check_lengths(t0, prior)
    prior_term = prior_matching_kl(t0, prior, schedule, gamma)
    log_t0 = _log(t0, "optimal pose")
    log_prior = _log(prior, "prior pose")

    denoising = np.zeros(schedule.T - 1)
    for t in range(2, schedule.T + 1):
        tt = forward_diffuse(t0, prior, t, gamma, rng, schedule)
        log_tt = _log(tt, "current pose")
        c = coeffs_at(schedule, t)
        post = _blend(c, log_t0, log_tt, log_prior)
        out = _call_surrogate(surrogate, scene, tt, t, rng)
        model = _blend(c, _log(out.residuals.compose(tt), "surrogate estimate"), log_tt, log_prior)
        diff = post - model
        denoising[t - 2] = float(np.sum(diff * diff)) / (2.0 * schedule.beta_tilde[t - 1])

    t1 = forward_diffuse(t0, prior, 1, gamma, rng, schedule)
    out = _call_surrogate(surrogate, scene, t1, 1, rng)
    mean = reverse_step(out.residuals, t1, prior, coeffs_at(schedule, 1))
    x = _log(t0.compose(mean.inverse()), "residual")
    var = schedule.beta[0]
    residual = -0.5 * float(np.sum(x * x)) / var - 0.5 * x.size * math.log(2 * math.pi * var)
    return VLBTerms(residual, prior_term, denoising)
