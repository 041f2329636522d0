"""DDPM schedule, forward noising, posterior update, and slice planning.

Steps are 1-based. ``subsample`` derives an inference schedule over a
strided subset of the training steps; it keeps the original step labels in
``t_source`` so the denoiser can still be conditioned on the training-time
step fraction while the update uses the effective per-step quantities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor

DEFAULT_T_TRAIN = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_INFERENCE_STEPS = 25


@dataclass
class DiffusionSchedule:
    betas: np.ndarray       # (T,)
    alphas: np.ndarray      # 1 - beta
    alpha_bars: np.ndarray  # cumulative products
    sigmas: np.ndarray      # posterior std; sigma at the final reverse step is 0
    t_source: np.ndarray    # original step label per entry
    t_source_total: int

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.n_steps:
            raise ContractError(f"step {t} outside [1, {self.n_steps}]")
        return t - 1

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t)])

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t)])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t)])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self._check_t(t)])

    def step_fraction(self, t: int) -> float:
        return float(self.t_source[self._check_t(t)]) / self.t_source_total

    def subsample(self, n: int) -> "DiffusionSchedule":
        if not 1 <= n <= self.n_steps:
            raise ContractError(f"cannot subsample {n} of {self.n_steps} steps")
        labels = np.unique(np.round(np.linspace(1, self.n_steps, n)).astype(int))
        ab = self.alpha_bars[labels - 1]
        ab_prev = np.concatenate([[1.0], ab[:-1]])
        alphas = ab / ab_prev
        betas = 1.0 - alphas
        sig2 = betas * (1.0 - ab_prev) / (1.0 - ab)
        sig2[0] = 0.0
        return DiffusionSchedule(betas, alphas, ab, np.sqrt(np.maximum(sig2, 0.0)),
                                 self.t_source[labels - 1], self.t_source_total)


def make_schedule(T_train: int = DEFAULT_T_TRAIN, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> DiffusionSchedule:
    """Linear beta schedule with posterior (beta-tilde) variances."""
    if T_train < 1:
        raise ContractError("T_train must be >= 1")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ContractError("need 0 < beta_start < beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T_train)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    ab_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sig2 = betas * (1.0 - ab_prev) / (1.0 - alpha_bars)
    sig2[0] = 0.0
    return DiffusionSchedule(betas, alphas, alpha_bars, np.sqrt(np.maximum(sig2, 0.0)),
                             np.arange(1, T_train + 1), T_train)


def q_sample(x0, t: int, eps, sched: DiffusionSchedule):
    """Forward noising x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    Accepts numpy arrays or Tensors (differentiable through x0/eps).
    """
    ab = sched.alpha_bar(t)
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if isinstance(x0, Tensor) or isinstance(eps, Tensor):
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        eps = eps if isinstance(eps, Tensor) else Tensor(eps)
        if x0.shape != eps.shape:
            raise ContractError(f"x0 {x0.shape} and eps {eps.shape} differ")
        return x0 * a + eps * b
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ContractError(f"x0 {x0.shape} and eps {eps.shape} differ")
    return a * x0 + b * eps


def ddpm_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: DiffusionSchedule,
              noise=None) -> np.ndarray:
    """Posterior update: mu = (x_t - beta_t/sqrt(1-ab_t) * eps_hat)/sqrt(alpha_t),
    then x_{t-1} = mu + sigma_t * noise (noise ignored when sigma_t == 0)."""
    a = sched.alpha(t)
    b = sched.beta(t)
    ab = sched.alpha_bar(t)
    sig = sched.sigma(t)
    mu = (x_t - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if sig == 0.0:
        return mu
    if noise is None:
        raise ContractError(f"step {t} has sigma {sig} > 0 but no noise was provided")
    return mu + sig * noise


# -- slice planning ------------------------------------------------------------


@dataclass
class SlicePlan:
    """Frame-index windows (strategy 1) and strided view groups (strategy 2).

    Strategy-2 groups are (M_V2, M_T2) integer grids: row j holds the
    consecutive frames {v0 + i + j * N_V} treated as view j of the group.
    """
    windows1: list            # list[(start, end)], end exclusive
    groups2: list             # list[np.ndarray (M_V2, M_T2)]
    lambda1: float
    lambda2: float
    overlap1: int
    m_t1: int
    m_t2: int
    m_v2: int
    n_frames: int


def plan_slices(T_L: int, M_T1: int, overlap1: int, M_T2: int, M_V2: int,
                lambda1: float = 0.5, lambda2: float = 0.5) -> SlicePlan:
    if T_L < 1:
        raise ContractError("T_L must be >= 1")
    if not 1 <= M_T1 <= T_L:
        raise ContractError(f"violated: 1 <= M_T1 <= T_L (M_T1={M_T1}, T_L={T_L})")
    if not 0 <= overlap1 < M_T1:
        raise ContractError(f"violated: 0 <= overlap1 < M_T1 (overlap1={overlap1})")
    if M_V2 < 1 or M_T2 < 1:
        raise ContractError("M_V2 and M_T2 must be >= 1")
    if M_V2 * M_T2 > T_L:
        raise ContractError(f"violated: M_V2*M_T2 <= T_L ({M_V2}*{M_T2} > {T_L})")
    if T_L % M_V2:
        raise ContractError(f"violated: T_L divisible by M_V2 ({T_L} % {M_V2} != 0)")
    n_v = T_L // M_V2
    if n_v % M_T2:
        raise ContractError(
            f"violated: (T_L / M_V2) divisible by M_T2 ({n_v} % {M_T2} != 0)")
    if lambda1 < 0 or lambda2 < 0 or abs(lambda1 + lambda2 - 1.0) > 1e-12:
        raise ContractError("lambda weights must be nonnegative and sum to 1")

    windows: list[tuple[int, int]] = []
    if overlap1 == 0:
        # exact partition; the last window truncates at the sequence end
        for s in range(0, T_L, M_T1):
            windows.append((s, min(s + M_T1, T_L)))
    else:
        step = M_T1 - overlap1
        s = 0
        while s + M_T1 < T_L:
            windows.append((s, s + M_T1))
            s += step
        last = (T_L - M_T1, T_L)
        if not windows or windows[-1] != last:
            windows.append(last)

    groups = []
    for v0 in range(0, n_v, M_T2):
        i = np.arange(M_T2)
        j = np.arange(M_V2)
        groups.append(v0 + i[None, :] + (j * n_v)[:, None])  # (M_V2, M_T2)

    return SlicePlan(windows, groups, float(lambda1), float(lambda2), overlap1,
                     M_T1, M_T2, M_V2, T_L)
