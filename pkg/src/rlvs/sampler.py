"""Hamiltonian Monte Carlo: leapfrog integration, Metropolis acceptance,
chain orchestration and diagnostics.

The engine is target-agnostic: anything exposing ``logp(q) -> float`` and
``grad(q) -> ndarray`` can be sampled (the grid posterior via
``model.Posterior``, plain Gaussians in tests). Potential energy is
U(q) = -logp(q); momenta are drawn from N(0, M) with diagonal mass M.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SamplerError(ValueError):
    pass


@dataclass
class HmcConfig:
    step_size: float = 0.01
    n_leapfrog: int = 20
    mass_diag: float | np.ndarray = 1.0
    n_burn: int = 0
    n_draws: int = 1000
    seed: int = 0
    adapt_step_size: bool = False
    target_accept: float = 0.75

    def __post_init__(self):
        if self.step_size <= 0:
            raise SamplerError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise SamplerError("n_leapfrog must be >= 1")
        if np.any(np.asarray(self.mass_diag) <= 0):
            raise SamplerError("mass entries must be positive")
        if self.n_burn < 0 or self.n_draws < 0:
            raise SamplerError("n_burn and n_draws must be non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise SamplerError("target_accept must lie in (0, 1)")
        if self.seed < 0:
            raise SamplerError("seed must be non-negative")


@dataclass
class Chain:
    """Retained draws plus per-proposal bookkeeping (burn-in included)."""

    draws: list = field(default_factory=list)
    accept_flags: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    energies: np.ndarray = field(default_factory=lambda: np.empty(0))
    delta_h: np.ndarray = field(default_factory=lambda: np.empty(0))
    divergent: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    n_burn: int = 0
    step_size_used: float = float("nan")


@dataclass
class DiagnosticsReport:
    acceptance_rate: float
    post_burn_rate: float
    mean_abs_delta_h: float
    n_divergent: int
    n_draws: int
    all_rejected_post_burn: bool

    def __str__(self):
        return (
            f"acceptance {self.acceptance_rate:.4f} (post-burn {self.post_burn_rate:.4f}), "
            f"mean |dH| {self.mean_abs_delta_h:.4g}, divergences {self.n_divergent}, "
            f"draws {self.n_draws}"
            + (", WARNING: no post-burn proposal accepted" if self.all_rejected_post_burn else "")
        )


def kinetic(p: np.ndarray, mass_diag) -> float:
    """K(p) = 0.5 * sum p_d^2 / m_d for a diagonal mass matrix."""
    p = np.asarray(p, dtype=float)
    return 0.5 * float(np.sum(p * p / np.asarray(mass_diag, dtype=float)))


def hamiltonian(q: np.ndarray, p: np.ndarray, target, mass_diag) -> float:
    """Total energy K(p) - logp(q)."""
    return kinetic(p, mass_diag) - target.logp(q)


def leapfrog(q, p, target, step_size: float, n_steps: int, mass_diag):
    """Half/full/half leapfrog; returns (q, p, diverged).

    A non-finite state anywhere along the trajectory flags divergence and
    stops integration early (the proposal is then rejected upstream).
    """
    if n_steps < 1:
        raise SamplerError("leapfrog needs n_steps >= 1")
    if step_size < 0:
        raise SamplerError("step_size must be non-negative")
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    inv_mass = 1.0 / np.asarray(mass_diag, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        p = p + 0.5 * step_size * target.grad(q)
        for step in range(n_steps):
            q = q + step_size * inv_mass * p
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                return q, p, True
            g = target.grad(q)
            p = p + (step_size if step < n_steps - 1 else 0.5 * step_size) * g
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            return q, p, True
    return q, p, False


def hmc_step(q, logp_q: float, target, rng: np.random.Generator,
             step_size: float, n_leapfrog: int, mass_diag):
    """One momentum-refresh / leapfrog / Metropolis cycle.

    Returns (q, logp_q, accepted, delta_h, diverged, h0). On rejection the
    position object is returned untouched.
    """
    mass = np.asarray(mass_diag, dtype=float)
    p0 = rng.standard_normal(np.shape(q)) * np.sqrt(mass)
    h0 = kinetic(p0, mass) - logp_q

    q_new, p_new, diverged = leapfrog(q, p0, target, step_size, n_leapfrog, mass)
    u = rng.random()
    if diverged:
        return q, logp_q, False, float("inf"), True, h0

    logp_new = target.logp(q_new)
    h1 = kinetic(p_new, mass) - logp_new
    delta_h = h1 - h0
    if not np.isfinite(delta_h):
        return q, logp_q, False, float("inf"), True, h0
    if u < np.exp(min(0.0, -delta_h)):
        return q_new, logp_new, True, delta_h, False, h0
    return q, logp_q, False, delta_h, False, h0


class _DualAveraging:
    """Step-size adaptation toward a target acceptance rate (burn-in only)."""

    def __init__(self, eps0: float, target: float,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_prob: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        eta = self.m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    def final(self) -> float:
        return float(np.exp(self.log_eps_bar))


def run_chain(init: np.ndarray, config: HmcConfig, target) -> Chain:
    """Run burn-in plus retained draws; deterministic for a fixed seed.

    Burn-in proposals are discarded from ``draws`` but kept in the
    acceptance bookkeeping. With ``adapt_step_size`` the step size is tuned
    during burn-in by dual averaging and then frozen.
    """
    rng = np.random.default_rng(config.seed)
    q = np.array(init, dtype=float)
    logp_q = target.logp(q)
    if not np.isfinite(logp_q):
        raise SamplerError("initial point has non-finite log density")

    total = config.n_burn + config.n_draws
    accept = np.zeros(total, dtype=bool)
    energies = np.zeros(total)
    dh = np.zeros(total)
    divergent = np.zeros(total, dtype=bool)
    draws: list[np.ndarray] = []

    eps = config.step_size
    adapter = None
    if config.adapt_step_size and config.n_burn > 0:
        adapter = _DualAveraging(eps, config.target_accept)

    for step in range(total):
        q, logp_q, acc, delta_h, div, h0 = hmc_step(
            q, logp_q, target, rng, eps, config.n_leapfrog, config.mass_diag
        )
        accept[step] = acc
        energies[step] = h0
        dh[step] = delta_h
        divergent[step] = div
        if adapter is not None and step < config.n_burn:
            prob = 0.0 if not np.isfinite(delta_h) else float(np.exp(min(0.0, -delta_h)))
            eps = adapter.update(prob)
            if step == config.n_burn - 1:
                eps = adapter.final()
        if step >= config.n_burn:
            draws.append(q.copy())

    return Chain(
        draws=draws,
        accept_flags=accept,
        energies=energies,
        delta_h=dh,
        divergent=divergent,
        n_burn=config.n_burn,
        step_size_used=eps,
    )


def diagnostics(chain: Chain) -> DiagnosticsReport:
    """Acceptance rate over the full run, mean |dH|, divergence count.

    mean |dH| is taken over the post-burn steps (burn-in steps from a cold
    start can carry astronomically large but finite energy errors that would
    swamp the average); it falls back to the full run when nothing was
    retained.
    """
    total = chain.accept_flags.size
    if total == 0:
        raise SamplerError("diagnostics needs a chain with at least one proposal")
    rate = float(np.mean(chain.accept_flags))
    post = chain.accept_flags[chain.n_burn:]
    post_rate = float(np.mean(post)) if post.size else float("nan")
    dh = chain.delta_h[chain.n_burn:] if post.size else chain.delta_h
    finite = np.isfinite(dh)
    mean_dh = float(np.mean(np.abs(dh[finite]))) if finite.any() else float("inf")
    return DiagnosticsReport(
        acceptance_rate=rate,
        post_burn_rate=post_rate,
        mean_abs_delta_h=mean_dh,
        n_divergent=int(np.sum(chain.divergent)),
        n_draws=len(chain.draws),
        all_rejected_post_burn=bool(post.size) and not bool(post.any()),
    )


def effective_sample_size(x: np.ndarray) -> float:
    """ESS of a scalar chain via the initial-positive-sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    centered = x - x.mean()
    fft = np.fft.rfft(centered, 2 * n)
    acov = np.fft.irfft(fft * np.conj(fft))[:n].real / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # Sum consecutive-lag pairs while they stay positive (Geyer).
    s = 0.0
    for t in range(1, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        s += pair
    ess = n / (1.0 + 2.0 * s)
    return float(min(max(ess, 1.0), n))
