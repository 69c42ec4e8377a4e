import math

import mpmath
import numpy as np
import pytest
import scipy.linalg as sla

from posediff.diffusion import (
    DenoiseCoeffs,
    DiffusionConfig,
    NoiseSchedule,
    coeffs_at,
    cosine_schedule,
    forward_diffuse,
    inference_timesteps,
    posterior_mean,
    prior_matching_kl,
    reverse_step,
    run_denoising,
    vlb_terms,
)
from posediff.errors import DomainError, InvalidArgumentError
from posediff.lie import PoseSet, RigidTransform, hat, pose_interpolate, sample_random_pose, so3_exp
from posediff.metrics import rotation_angle
from posediff.surrogate import KabschSurrogate, OracleSurrogate

from .conftest import random_poses, random_twists


# -- schedule

def test_cosine_schedule_invariants(schedule):
    s = schedule
    assert s.T == 200
    assert s.alpha_bar[0] == 1.0
    assert s.alpha_bar[-1] < 1e-3
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.beta > 0) & (s.beta <= 0.999))
    assert np.allclose(s.alpha_bar[1:], np.cumprod(s.alpha), atol=1e-12, rtol=0)
    bt = s.beta * (1 - s.alpha_bar[:-1]) / (1 - s.alpha_bar[1:])
    assert np.allclose(s.beta_tilde, bt, atol=1e-12, rtol=0)
    assert np.allclose(s.one_minus_alpha_bar, 1 - s.alpha_bar, atol=1e-15, rtol=0)


def test_cosine_schedule_matches_formula():
    T, sh = 50, 0.008
    s = cosine_schedule(T)
    f = [math.cos(((t / T + sh) / (1 + sh)) * math.pi / 2) ** 2 for t in range(T + 1)]
    ref = [min(1 - (f[t] / f[0]) / (f[t - 1] / f[0]), 0.999) for t in range(1, T + 1)]
    assert np.allclose(s.beta, ref, atol=1e-14, rtol=0)


def test_schedule_frozen_values():
    s = cosine_schedule(200)
    # spot values of f(t)/f(0) evaluated once at 30 digits and frozen
    assert s.alpha_bar[1] == pytest.approx(0.999745027363627969661, abs=1e-14)
    assert s.alpha_bar[100] == pytest.approx(0.493843590440637713317, abs=1e-14)
    # only the last step hits the clip, which lifts alpha_bar_T well above f(T)/f(0)
    assert s.beta[-1] == 0.999 and np.all(s.beta[:-1] < 0.999)


def test_schedule_errors():
    with pytest.raises(InvalidArgumentError):
        cosine_schedule(0)
    with pytest.raises(InvalidArgumentError):
        NoiseSchedule.from_betas([0.1, 1.0])


def test_schedule_arrays_read_only(schedule):
    with pytest.raises(ValueError):
        schedule.beta[0] = 0.5


# -- coefficients

def test_coefficient_sum_and_first_step(schedule):
    for t in range(1, schedule.T + 1):
        c = coeffs_at(schedule, t)
        assert abs(c.lambda0 + c.lambda1 + c.lambda2 - 1.0) < 1e-12
        assert c.lambda0 >= 0 and c.lambda1 >= 0
    c1 = coeffs_at(schedule, 1)
    assert (c1.lambda0, c1.lambda1, c1.lambda2, c1.sigma) == (1.0, 0.0, 0.0, 0.0)


def test_lambda2_matches_unfactored_form(schedule):
    for t in (2, 10, 100, 199):
        ab, abp, a = schedule.alpha_bar[t], schedule.alpha_bar[t - 1], schedule.alpha[t - 1]
        ref = 1 + (math.sqrt(ab) - 1) * (math.sqrt(a) + math.sqrt(abp)) / (1 - ab)
        assert coeffs_at(schedule, t).lambda2 == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("t", [2, 57, 199, 200])
def test_coefficients_extended_precision(schedule, t):
    mpmath.mp.dps = 50
    beta = [mpmath.mpf(float(b)) for b in schedule.beta]
    ab = [mpmath.mpf(1)]
    for b in beta:
        ab.append(ab[-1] * (1 - b))
    a = 1 - beta[t - 1]
    l0 = mpmath.sqrt(ab[t - 1]) * beta[t - 1] / (1 - ab[t])
    l1 = mpmath.sqrt(a) * (1 - ab[t - 1]) / (1 - ab[t])
    l2 = 1 + (mpmath.sqrt(ab[t]) - 1) * (mpmath.sqrt(a) + mpmath.sqrt(ab[t - 1])) / (1 - ab[t])
    sig = mpmath.sqrt(beta[t - 1] * (1 - ab[t - 1]) / (1 - ab[t]))
    c = coeffs_at(schedule, t)
    for got, ref in ((c.lambda0, l0), (c.lambda1, l1), (c.lambda2, l2), (c.sigma, sig)):
        assert abs(got - float(ref)) < 1e-12


def test_coeffs_out_of_range(schedule):
    for t in (0, 201):
        with pytest.raises(IndexError):
            coeffs_at(schedule, t)


def test_respaced_schedule_keeps_cumulative_products(schedule):
    ts = inference_timesteps(200, 10)[::-1]
    sub = schedule.respace(ts)
    assert sub.T == 10
    assert np.array_equal(sub.alpha_bar[1:], schedule.alpha_bar[ts])
    for k in range(1, 11):
        c = coeffs_at(sub, k)
        assert abs(c.lambda0 + c.lambda1 + c.lambda2 - 1) < 1e-12


def test_inference_timesteps():
    assert inference_timesteps(200, 10).tolist() == [200, 178, 156, 134, 112, 89, 67, 45, 23, 1]
    assert inference_timesteps(200, 1).tolist() == [1]
    assert inference_timesteps(5, 5).tolist() == [5, 4, 3, 2, 1]
    with pytest.raises(InvalidArgumentError):
        inference_timesteps(10, 11)


# -- forward process

def test_forward_noise_free_endpoints(rng, schedule):
    t0, prior = random_poses(rng, 4), random_poses(rng, 4)
    prior = sample_random_pose(rng, 0.4, 1.0, n=4) @ t0
    out = forward_diffuse(t0, prior, 0, 0.0, rng, schedule)
    assert out.max_deviation(t0) == 0.0
    zero_end = NoiseSchedule.from_alpha_bar([1.0, 0.5, 0.0], [0.0, 0.5, 1.0])
    assert pose_interpolate(math.sqrt(zero_end.alpha_bar[2]), t0, prior).max_deviation(prior) == 0.0


def test_forward_noise_free_lies_on_geodesic(rng, schedule):
    t0 = random_poses(rng, 3)
    prior = sample_random_pose(rng, 0.5, 1.0, n=3) @ t0
    for t in (1, 50, 150, 200):
        out = forward_diffuse(t0, prior, t, 0.0, rng, schedule)
        w = math.sqrt(schedule.alpha_bar[t])
        ref = PoseSet.exp((1 - w) * (prior @ t0.inverse()).log()) @ t0
        assert out.max_deviation(ref) < 1e-12


def test_forward_noise_moments(schedule):
    rng = np.random.default_rng(0)
    t0 = PoseSet.identity(1)
    prior = PoseSet.exp([[0.2, -0.1, 0.3, 0.5, 0.0, -0.4]])
    t, gamma = 60, 0.1
    interp = pose_interpolate(math.sqrt(schedule.alpha_bar[t]), t0, prior)
    dev = np.empty((10_000, 6))
    for k in range(len(dev)):
        out = forward_diffuse(t0, prior, t, gamma, rng, schedule)
        dev[k] = (out @ interp.inverse()).log()[0]
    expected = gamma * math.sqrt(1 - schedule.alpha_bar[t])
    assert np.all(np.abs(dev.std(axis=0) / expected - 1) < 0.05)
    assert np.all(np.abs(dev.mean(axis=0)) < 4 * expected / 100)


def test_forward_length_mismatch(rng, schedule):
    with pytest.raises(InvalidArgumentError):
        forward_diffuse(PoseSet.identity(2), PoseSet.identity(3), 5, 0.1, rng, schedule)


# -- posterior mean and reverse step

def _expm_se3(xi):
    M = np.zeros((4, 4))
    M[:3, :3] = hat(xi[:3])
    M[:3, 3] = xi[3:]
    return sla.expm(M)


def _logm_se3(T):
    L = np.real(sla.logm(T))
    return np.array([L[2, 1], L[0, 2], L[1, 0], *L[:3, 3]])


def test_posterior_mean_dual_implementation(rng, schedule):
    for _ in range(30):
        xs = random_twists(rng, 3, max_angle=2.5, max_trans=5)
        T0, Tt, Tp = (RigidTransform.exp(x) for x in xs)
        t = int(rng.integers(1, 201))
        c = coeffs_at(schedule, t)
        got = posterior_mean(T0, Tt, Tp, c).matrix()
        tangent = sum(l * _logm_se3(T.matrix()) for l, T in zip((c.lambda0, c.lambda1, c.lambda2), (T0, Tt, Tp)))
        assert np.allclose(got, _expm_se3(tangent), atol=1e-10)


def test_posterior_mean_special_cases(rng, schedule):
    T0, Tt, Tp = (RigidTransform.exp(x) for x in random_twists(rng, 3, max_angle=2.0))
    assert np.allclose(posterior_mean(T0, Tt, Tp, coeffs_at(schedule, 1)).matrix(), T0.matrix(), atol=1e-12)
    G = RigidTransform.exp(random_twists(rng, 1, max_angle=2.0)[0])
    for t in (5, 100, 200):
        assert np.allclose(posterior_mean(G, G, G, coeffs_at(schedule, t)).matrix(), G.matrix(), atol=1e-12)


def test_posterior_mean_domain_error():
    bad = RigidTransform(so3_exp([np.pi - 1e-9, 0, 0]), np.zeros(3))
    I = RigidTransform.identity()
    with pytest.raises(DomainError):
        posterior_mean(bad, I, I, DenoiseCoeffs(0.5, 0.25, 0.25, 0.1))


def direct_pairwise_step(residual, Tt, c):
    """Reference pairwise step: Exp(l0 Log(res Tt) + l1 Log(Tt))."""
    return RigidTransform.exp(c.lambda0 * (residual @ Tt).log() + c.lambda1 * Tt.log())


def test_identity_prior_reduces_to_pairwise_step(rng, schedule):
    for _ in range(200):
        n = int(rng.integers(2, 5))
        tt = PoseSet.exp(random_twists(rng, n, max_angle=2.0))
        res = PoseSet.exp(random_twists(rng, n, max_angle=1.0))
        c = coeffs_at(schedule, int(rng.integers(1, 201)))
        out = reverse_step(res, tt, PoseSet.identity(n), c)
        for i in range(n):
            ref = direct_pairwise_step(res[i], tt[i], c)
            assert np.max(np.abs(out[i].matrix() - ref.matrix())) < 1e-12


def test_reverse_step_oracle_recovers_at_t1(rng, schedule):
    t0 = random_poses(rng, 5)
    tt = sample_random_pose(rng, 0.5, 1.0, n=5) @ t0
    res = t0 @ tt.inverse()
    out = reverse_step(res, tt, random_poses(rng, 5), coeffs_at(schedule, 1))
    assert out.max_deviation(t0) < 1e-9


def test_reverse_step_dual_implementation(rng, schedule):
    n = 3
    tt = PoseSet.exp(random_twists(rng, n, max_angle=2.0))
    res = PoseSet.exp(random_twists(rng, n, max_angle=1.0))
    prior = PoseSet.exp(random_twists(rng, n, max_angle=2.0))
    c = coeffs_at(schedule, 77)
    out = reverse_step(res, tt, prior, c)
    for i in range(n):
        tangent = (c.lambda0 * _logm_se3(res[i].matrix() @ tt[i].matrix())
                   + c.lambda1 * _logm_se3(tt[i].matrix()) + c.lambda2 * _logm_se3(prior[i].matrix()))
        assert np.allclose(out[i].matrix(), _expm_se3(tangent), atol=1e-10)


def test_reverse_step_noise_is_seeded(rng, schedule):
    tt = random_poses(rng, 3, trans=1)
    res, prior = PoseSet.identity(3), PoseSet.identity(3)
    c = coeffs_at(schedule, 50)
    a = reverse_step(res, tt, prior, c, True, np.random.default_rng(9))
    b = reverse_step(res, tt, prior, c, True, np.random.default_rng(9))
    assert a.max_deviation(b) == 0.0
    assert a.max_deviation(reverse_step(res, tt, prior, c)) > 0


def test_reverse_step_permutation(rng, schedule):
    n = 6
    tt = PoseSet.exp(random_twists(rng, n, max_angle=2.0))
    res = PoseSet.exp(random_twists(rng, n, max_angle=1.0))
    prior = PoseSet.exp(random_twists(rng, n, max_angle=2.0))
    c = coeffs_at(schedule, 120)
    perm = rng.permutation(n)
    a = reverse_step(res, tt, prior, c).permute(perm)
    b = reverse_step(res.permute(perm), tt.permute(perm), prior.permute(perm), c)
    assert a.max_deviation(b) == 0.0


# -- denoising loop

def _errors(p, gt):
    return np.degrees(rotation_angle(p.R, gt.R)), np.linalg.norm(p.t - gt.t, axis=1)


def test_oracle_denoising_exact_and_contracting(small_scene, schedule):
    rng = np.random.default_rng(1)
    gt = small_scene.gt
    prior = sample_random_pose(rng, np.radians(20), 0.5, n=len(gt)) @ gt
    cfg = DiffusionConfig(noise_on=False)
    traj = run_denoising(small_scene, prior, OracleSurrogate(), schedule, cfg, rng)
    assert len(traj) == 11
    re, te = _errors(traj[-1], gt)
    assert np.all(re < 1e-6) and np.all(te < 1e-6)
    errs = [(gt.inverse() @ p).log() for p in traj[-4:]]
    norms = np.array([np.linalg.norm(e, axis=1) for e in errs])
    assert np.all(np.diff(norms, axis=0) <= 1e-12)


def test_denoising_single_step_is_reverse_step(small_scene, schedule):
    rng = np.random.default_rng(2)
    prior = sample_random_pose(rng, 0.3, 0.5, n=small_scene.n_scans) @ small_scene.gt
    cfg = DiffusionConfig(inference_steps=1, noise_on=False)
    traj = run_denoising(small_scene, prior, OracleSurrogate(), schedule, cfg, rng)
    res = small_scene.gt @ prior.inverse()
    ref = reverse_step(res, prior, prior, coeffs_at(schedule, 1))
    assert len(traj) == 2 and traj[-1].max_deviation(ref) < 1e-12


def test_denoising_deterministic(small_scene, schedule):
    prior = sample_random_pose(np.random.default_rng(0), 0.3, 0.5, n=small_scene.n_scans) @ small_scene.gt
    cfg = DiffusionConfig()
    a = run_denoising(small_scene, prior, KabschSurrogate(), schedule, cfg, np.random.default_rng(5))
    b = run_denoising(small_scene, prior, KabschSurrogate(), schedule, cfg, np.random.default_rng(5))
    assert all(x.max_deviation(y) == 0.0 for x, y in zip(a, b))


def test_denoising_sampled_init(small_scene, schedule):
    rng = np.random.default_rng(4)
    prior = sample_random_pose(rng, 0.3, 0.5, n=small_scene.n_scans) @ small_scene.gt
    cfg = DiffusionConfig(init="sample", noise_on=False)
    traj = run_denoising(small_scene, prior, OracleSurrogate(), schedule, cfg, rng)
    assert traj[0].max_deviation(prior) > 0
    assert traj[-1].max_deviation(small_scene.gt) < 1e-9


def test_diffusion_config_validation():
    for bad in (DiffusionConfig(gamma=-1), DiffusionConfig(inference_steps=0),
                DiffusionConfig(inference_steps=300), DiffusionConfig(init="nope"),
                DiffusionConfig(noise_scales=(1.0,))):
        with pytest.raises(InvalidArgumentError):
            bad.validate()


# -- variational bound diagnostics

def test_vlb_exact_surrogate_zero(small_scene):
    s = cosine_schedule(40)
    rng = np.random.default_rng(3)
    prior = sample_random_pose(rng, 0.3, 0.5, n=small_scene.n_scans) @ small_scene.gt
    terms = vlb_terms(small_scene, small_scene.gt, prior, OracleSurrogate(), s, rng)
    assert len(terms.denoising_terms) == 39
    assert np.max(np.abs(terms.denoising_terms)) < 1e-9
    assert np.isfinite(terms.residual_term) and np.isfinite(terms.total)


def test_prior_matching_independent_of_surrogate(small_scene):
    s = cosine_schedule(30)
    prior = sample_random_pose(np.random.default_rng(0), 0.3, 0.5, n=small_scene.n_scans) @ small_scene.gt
    a = vlb_terms(small_scene, small_scene.gt, prior, OracleSurrogate(), s, np.random.default_rng(1))
    b = vlb_terms(small_scene, small_scene.gt, prior, OracleSurrogate(0.1), s, np.random.default_rng(2))
    c = vlb_terms(small_scene, small_scene.gt, prior, KabschSurrogate(), s, np.random.default_rng(3))
    assert a.prior_matching_term == b.prior_matching_term == c.prior_matching_term
    assert a.prior_matching_term == prior_matching_kl(small_scene.gt, prior, s, 0.1)


def test_prior_matching_closed_form():
    # identical t0 and prior: only the variance mismatch contributes
    s = cosine_schedule(200)
    P = PoseSet.identity(2)
    r = s.one_minus_alpha_bar[-1]
    assert prior_matching_kl(P, P, s, 0.1) == pytest.approx(0.5 * 12 * (r - 1 - math.log(r)), abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        prior_matching_kl(P, P, s, 0.0)
