import math

import numpy as np
import pytest

from dit4d.diffusion import (DiffusionSchedule, ddpm_step, make_schedule,
                             plan_slices, q_sample)
from dit4d.tensor import ContractError, Tensor


class TestSchedule:
    def test_single_step(self):
        sched = make_schedule(1, 1e-4, 0.02)
        assert sched.alpha_bar(1) == 1.0 - 1e-4

    def test_first_alpha_bar(self):
        sched = make_schedule(1000, 1e-4, 0.02)
        assert abs(sched.alpha_bar(1) - 0.9999) < 1e-15

    def test_monotone_scan(self):
        sched = make_schedule(1000, 1e-4, 0.02)
        assert (np.diff(sched.betas) > 0).all()
        assert (np.diff(sched.alpha_bars) < 0).all()
        assert (sched.alpha_bars > 0).all()
        assert (sched.sigmas >= 0).all()
        assert sched.sigmas[0] == 0.0

    def test_parameter_contracts(self):
        with pytest.raises(ContractError):
            make_schedule(0)
        with pytest.raises(ContractError):
            make_schedule(10, 0.02, 1e-4)  # start >= end
        with pytest.raises(ContractError):
            make_schedule(10, 0.0, 0.02)

    def test_subsample_keeps_labels_and_endpoint(self):
        sched = make_schedule(1000)
        sub = sched.subsample(25)
        assert sub.n_steps == 25
        assert sub.t_source[-1] == 1000 and sub.t_source[0] == 1
        assert sub.sigmas[0] == 0.0
        # effective alpha_bar matches the source schedule at the labels
        assert np.allclose(sub.alpha_bars, sched.alpha_bars[sub.t_source - 1])
        # composition identity: cumulative product of effective alphas
        assert np.allclose(np.cumprod(sub.alphas), sub.alpha_bars)

    def test_step_bounds(self):
        sched = make_schedule(10)
        with pytest.raises(ContractError):
            sched.alpha(0)
        with pytest.raises(ContractError):
            sched.alpha(11)


class TestQSample:
    def test_zero_noise(self):
        sched = make_schedule(100)
        x0 = np.ones((2, 3))
        xt = q_sample(x0, 40, np.zeros((2, 3)), sched)
        assert np.allclose(xt, math.sqrt(sched.alpha_bar(40)) * x0)

    def test_zero_signal(self):
        sched = make_schedule(100)
        eps = np.full((2, 3), 2.0)
        xt = q_sample(np.zeros((2, 3)), 70, eps, sched)
        assert np.allclose(xt, math.sqrt(1 - sched.alpha_bar(70)) * eps)

    def test_roundtrip_inversion(self):
        sched = make_schedule(200)
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(4, 5))
        eps = rng.normal(size=(4, 5))
        for t in (1, 50, 200):
            xt = q_sample(x0, t, eps, sched)
            ab = sched.alpha_bar(t)
            rec = (xt - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
            assert np.abs(rec - x0).max() < 1e-9

    def test_tensor_path_matches_numpy(self):
        sched = make_schedule(50)
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=(2, 2))
        eps = rng.normal(size=(2, 2))
        a = q_sample(x0, 20, eps, sched)
        b = q_sample(Tensor(x0, requires_grad=True), 20, Tensor(eps), sched)
        assert np.array_equal(a, b.data)
        assert b.requires_grad

    def test_out_of_range_step(self):
        sched = make_schedule(10)
        with pytest.raises(ContractError):
            q_sample(np.zeros(2), 11, np.zeros(2), sched)


class TestDdpmStep:
    def test_scalar_oracle(self):
        sched = DiffusionSchedule(np.array([0.01]), np.array([0.99]),
                                  np.array([0.9]), np.array([0.0]),
                                  np.array([1]), 1)
        got = ddpm_step(np.array([1.0]), np.array([0.5]), 1, sched, None)[0]
        want = (1.0 / math.sqrt(0.99)) * (1.0 - (0.01 / math.sqrt(0.1)) * 0.5)
        assert abs(got - want) < 1e-9
        assert round(want, 5) == 0.98915

    def test_zero_eps_reduction(self):
        sched = DiffusionSchedule(np.array([0.04]), np.array([0.96]),
                                  np.array([0.8]), np.array([0.3]),
                                  np.array([1]), 1)
        x = np.array([2.0, -1.0])
        noise = np.array([0.5, 0.25])
        got = ddpm_step(x, np.zeros(2), 1, sched, noise)
        assert np.allclose(got, x / math.sqrt(0.96) + 0.3 * noise)

    def test_affine_in_eps(self):
        sched = DiffusionSchedule(np.array([0.02]), np.array([0.98]),
                                  np.array([0.7]), np.array([0.0]),
                                  np.array([1]), 1)
        rng = np.random.default_rng(2)
        x = rng.normal(size=4)
        e1, e2 = rng.normal(size=4), rng.normal(size=4)
        a, b = 0.3, 0.7
        lhs = ddpm_step(x, a * e1 + b * e2, 1, sched, None)
        coef = 0.02 / math.sqrt(0.3) / math.sqrt(0.98)
        rhs = x / math.sqrt(0.98) - coef * (a * e1 + b * e2)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_noise_required_when_sigma_positive(self):
        sched = DiffusionSchedule(np.array([0.04]), np.array([0.96]),
                                  np.array([0.8]), np.array([0.3]),
                                  np.array([1]), 1)
        with pytest.raises(ContractError):
            ddpm_step(np.zeros(2), np.zeros(2), 1, sched, None)


class TestPlanSlices:
    def test_basic_windows(self):
        plan = plan_slices(24, 8, 0, 2, 4)
        assert plan.windows1 == [(0, 8), (8, 16), (16, 24)]

    def test_strided_groups_enumeration(self):
        plan = plan_slices(24, 8, 0, 2, 4)
        got = [sorted(g.reshape(-1).tolist()) for g in plan.groups2]
        assert got[0] == [0, 1, 6, 7, 12, 13, 18, 19]
        assert got[1] == [2, 3, 8, 9, 14, 15, 20, 21]
        assert got[2] == [4, 5, 10, 11, 16, 17, 22, 23]
        all_frames = sorted(i for g in got for i in g)
        assert all_frames == list(range(24))

    def test_group_axes_orientation(self):
        plan = plan_slices(24, 8, 0, 2, 4)
        g = plan.groups2[0]
        assert g.shape == (4, 2)  # (view axis, time axis)
        assert g[0].tolist() == [0, 1]      # consecutive frames: time axis
        assert g[:, 0].tolist() == [0, 6, 12, 18]  # strided frames: view axis

    def test_degenerate_full_coverage(self):
        plan = plan_slices(24, 24, 0, 6, 4)
        assert plan.windows1 == [(0, 24)]
        assert len(plan.groups2) == 1
        assert plan.groups2[0].shape == (4, 6)
        assert sorted(plan.groups2[0].reshape(-1).tolist()) == list(range(24))

    def test_overlap_windows(self):
        plan = plan_slices(48, 24, 6, 6, 4)
        assert plan.windows1 == [(0, 24), (18, 42), (24, 48)]
        cover = np.zeros(48, int)
        for s, e in plan.windows1:
            cover[s:e] += 1
        assert (cover >= 1).all()

    def test_truncated_final_window(self):
        plan = plan_slices(20, 8, 0, 2, 2)
        assert plan.windows1 == [(0, 8), (8, 16), (16, 20)]
        cover = np.zeros(20, int)
        for s, e in plan.windows1:
            cover[s:e] += 1
        assert (cover == 1).all()

    def test_constraint_violations_named(self):
        with pytest.raises(ContractError, match="M_T1"):
            plan_slices(8, 9, 0, 2, 2)
        with pytest.raises(ContractError, match="overlap1"):
            plan_slices(8, 4, 4, 2, 2)
        with pytest.raises(ContractError, match="divisible by M_V2"):
            plan_slices(10, 4, 0, 1, 3)
        with pytest.raises(ContractError, match="divisible by M_T2"):
            plan_slices(12, 4, 0, 4, 2)
        with pytest.raises(ContractError, match="lambda"):
            plan_slices(8, 4, 0, 2, 2, 0.7, 0.7)
        with pytest.raises(ContractError, match="M_V2"):
            plan_slices(8, 4, 0, 8, 4)

    def test_random_scan_properties(self):
        # acceptance-style enumeration over random valid tuples
        rng = np.random.default_rng(9)
        for _ in range(200):
            T_L = int(rng.integers(4, 49))
            divs = [d for d in range(1, T_L + 1) if T_L % d == 0]
            M_V2 = int(rng.choice(divs))
            n_v = T_L // M_V2
            M_T2 = int(rng.choice([d for d in range(1, n_v + 1) if n_v % d == 0]))
            M_T1 = int(rng.integers(1, T_L + 1))
            overlap = int(rng.integers(0, M_T1))
            plan = plan_slices(T_L, M_T1, overlap, M_T2, M_V2)
            cover2 = np.zeros(T_L, int)
            for g in plan.groups2:
                assert g.shape == (M_V2, M_T2)
                cover2[g.reshape(-1)] += 1
            assert (cover2 == 1).all()
            cover1 = np.zeros(T_L, int)
            for s, e in plan.windows1:
                cover1[s:e] += 1
            assert (cover1 >= 1).all()
            if overlap == 0:
                assert (cover1 == 1).all()
