import numpy as np
import pytest
import torch

from vecdiff.diffusion import NoiseSchedule, cosine_schedule, ddpm_step, predict_s0, q_sample, sample
from vecdiff.errors import NumericalGuard


def test_cosine_schedule_monotone_exhaustive():
    sched = cosine_schedule(1000)
    ab = sched.alpha_bars
    assert np.all(np.diff(ab[1:]) < 0)  # strictly decreasing over t=1..T


def test_cosine_schedule_boundaries():
    sched = cosine_schedule(1000)
    assert sched.alpha_bars[1] > 0.99
    assert sched.alpha_bars[1000] < 1e-2


def test_cosine_schedule_beta_bounds():
    sched = cosine_schedule(1000)
    betas = sched.betas[1:]
    assert betas.min() > 0.0
    assert betas.max() <= 0.999


@pytest.mark.parametrize("T", [10, 50, 200, 1000, 4000])
def test_schedule_invariants_across_T(T):
    sched = cosine_schedule(T)
    ab = sched.alpha_bars
    assert np.all(np.diff(ab[1:]) < 0)
    assert np.all((sched.betas[1:] > 0) & (sched.betas[1:] <= 0.999))
    if T >= 20:
        assert ab[1] > 0.99 and ab[T] < 0.01


def test_schedule_rejects_tiny_T():
    with pytest.raises(ValueError):
        cosine_schedule(1)


def synthetic_sched(abars):
    abars = np.asarray(abars, dtype=np.float64)
    T = len(abars) - 1
    alphas = np.ones_like(abars)
    alphas[1:] = abars[1:] / abars[:-1]
    betas = 1.0 - alphas
    betas[0] = 0.0
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=abars)


def test_q_sample_extremes():
    s0 = torch.randn(28, 32)
    eps = torch.randn(28, 32)
    sched = synthetic_sched([1.0, 1.0, 0.25, 0.0])
    assert torch.allclose(q_sample(s0, 1, eps, sched), s0)                      # ab = 1
    assert torch.allclose(q_sample(s0, 3, eps, sched), eps)                     # ab = 0
    out = q_sample(torch.zeros(28, 32), 2, eps, sched)                          # ab = 0.25
    assert torch.allclose(out, np.sqrt(0.75) * eps, atol=1e-7)


def test_q_sample_shape_mismatch():
    sched = cosine_schedule(20)
    with pytest.raises(ValueError):
        q_sample(torch.zeros(28, 32), 1, torch.zeros(28, 31), sched)


def test_predict_s0_inverts_q_sample():
    sched = cosine_schedule(100)
    gen = torch.Generator().manual_seed(0)
    s0 = torch.randn(28, 32, generator=gen).double()
    eps = torch.randn(28, 32, generator=gen).double()
    for t in (1, 17, 50, 99, 100):
        s_t = q_sample(s0, t, eps, sched)
        back = predict_s0(s_t, t, eps, sched)
        assert (back - s0).abs().max() < 1e-5


def test_predict_s0_zero_eps():
    sched = cosine_schedule(100)
    s_t = torch.randn(28, 32)
    out = predict_s0(s_t, 40, torch.zeros_like(s_t), sched)
    assert torch.allclose(out, s_t / np.sqrt(sched.alpha_bars[40]), atol=1e-6)


def test_predict_s0_roundtrip_property_1000_draws():
    sched = cosine_schedule(200)
    gen = torch.Generator().manual_seed(3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(1, 201))
        s0 = torch.randn(28, 32, generator=gen).double()
        eps = torch.randn(28, 32, generator=gen).double()
        s_t = q_sample(s0, t, eps, sched)
        worst = max(worst, float((predict_s0(s_t, t, eps, sched) - s0).abs().max()))
    assert worst < 1e-5


def test_predict_s0_numerical_guard():
    sched = synthetic_sched([1.0, 0.5, 1e-9])
    with pytest.raises(NumericalGuard):
        predict_s0(torch.zeros(4, 4), 2, torch.zeros(4, 4), sched)


def test_ddpm_step_final_step_deterministic():
    sched = cosine_schedule(50)
    s = torch.randn(28, 32)
    eps = torch.randn(28, 32)
    a = ddpm_step(s, 1, eps, sched, torch.Generator().manual_seed(0))
    b = ddpm_step(s, 1, eps, sched, torch.Generator().manual_seed(999))
    assert torch.equal(a, b)


def test_ddpm_step_noise_variance_monte_carlo():
    sched = cosine_schedule(50)
    t = 25
    beta = sched.betas[t]
    expected_var = beta * (1 - sched.alpha_bars[t - 1]) / (1 - sched.alpha_bars[t])
    s = torch.zeros(1, 1)
    eps = torch.zeros(1, 1)
    gen = torch.Generator().manual_seed(7)
    mean = s / np.sqrt(sched.alphas[t])
    draws = np.array([float(ddpm_step(s, t, eps, sched, gen) - mean) for _ in range(10_000)])
    assert abs(draws.var() - expected_var) < 0.05 * expected_var


def test_ddpm_step_no_noise_limit():
    # beta -> 0 makes the step the identity when eps_pred = 0
    sched = synthetic_sched([1.0, 1.0 - 1e-9, (1.0 - 1e-9) * (1.0 - 1e-9)])
    s = torch.randn(8, 8)
    out = ddpm_step(s, 2, torch.zeros_like(s), sched, torch.Generator().manual_seed(0))
    assert (out - s).abs().max() < 1e-3


def test_ddpm_step_clip_matches_unclipped_in_range():
    # when the implied clean estimate is inside the clip box the two forms agree
    sched = cosine_schedule(100)
    gen = torch.Generator().manual_seed(1)
    s0 = (torch.rand(28, 32, generator=gen) * 1.6 - 0.8).double()
    eps = torch.randn(28, 32, generator=gen).double()
    t = 60
    s_t = q_sample(s0, t, eps, sched)
    a = ddpm_step(s_t, t, eps, sched, torch.Generator().manual_seed(5))
    b = ddpm_step(s_t, t, eps, sched, torch.Generator().manual_seed(5), clip_range=(-1, 1))
    assert (a - b).abs().max() < 1e-8


class CountingDenoiser:
    """eps-predictor stub: returns scaled input, counts conditioning usage."""

    def __init__(self):
        self.calls = []

    def __call__(self, s, t, cond):
        self.calls.append(cond)
        if cond == "cond":
            return 0.5 * s
        return 0.25 * s


def test_sample_cfg_collapse_w0_equals_unconditional():
    sched = cosine_schedule(20)
    den = CountingDenoiser()
    a = sample(den, "cond", "null", 0.0, sched, torch.Generator().manual_seed(4))
    b = sample(den, "null", "null", 1.0, sched, torch.Generator().manual_seed(4))
    assert torch.allclose(a, b)


def test_sample_cfg_w1_equals_conditional_single_branch():
    sched = cosine_schedule(20)
    den = CountingDenoiser()
    a = sample(den, "cond", "null", 1.0, sched, torch.Generator().manual_seed(4))
    # w=1 must not even evaluate the null branch
    assert all(c == "cond" for c in den.calls)
    den2 = CountingDenoiser()
    b = sample(den2, "cond", "cond", 2.0, sched, torch.Generator().manual_seed(4))
    assert torch.allclose(a, b)  # eps_n + 2(eps_c - eps_n) with eps_c = eps_n


def test_sample_deterministic_and_prompt_sensitive():
    sched = cosine_schedule(20)
    den = CountingDenoiser()
    a = sample(den, "cond", "null", 3.0, sched, torch.Generator().manual_seed(9))
    b = sample(den, "cond", "null", 3.0, sched, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)
    c = sample(den, "null", "null", 3.0, sched, torch.Generator().manual_seed(9))
    assert not torch.allclose(a, c)


def test_sample_rejects_negative_scale():
    sched = cosine_schedule(20)
    with pytest.raises(ValueError):
        sample(CountingDenoiser(), "cond", "null", -1.0, sched, torch.Generator())
