"""Information-gathering game: confirm a failure probability against a target.

The latent limit state is g = mu_m + gamma * d + beta^T xi + eps_a with
xi a standard normal vector and eps_a Gaussian aleatory noise, so the failure
probability given the epistemic quantities (beta, d, mu_m) has the closed
form Phi(-(mu_m + gamma d) / sqrt(beta^T beta + sigma_a^2)). The agent pays
for three kinds of experiment (defect measurement, lab test of the model
discrepancy, computer evaluation of the response surface) until the mean of
p_f plus/minus two standard deviations clears the target on either side, or
a 40-action budget runs out.

The computer-experiment input is not chosen by the agent: a myopic
design-of-experiments rule picks the candidate with maximal posterior
predictive variance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from ..beliefs import GaussianBelief, gaussian_condition
from ..mdp import Environment, StateEncoding, StepAfterDone

MEASUREMENT, FE, LAB = 0, 1, 2
ACTION_NAMES = ("measurement", "fe", "lab")

CONFIRMED_BELOW = "confirmed_below"
CONFIRMED_ABOVE = "confirmed_above"
UNDECIDED = "undecided"
FAILED = "failed"


@dataclass(frozen=True)
class ReliabilityConfig:
    input_dim: int = 5
    n_basis: int = 5  # basis features are the raw input coordinates
    pool_size: int = 64
    pool_seed: int = 20_240_101
    prior_beta_mean: float = 0.5
    prior_beta_var: float = 0.09
    prior_defect_mean: float = 0.5
    prior_defect_var: float = 0.09
    prior_discrepancy_mean: float = 4.0
    prior_discrepancy_var: float = 1.0
    measurement_noise_var: float = 0.01
    lab_noise_var: float = 1.0
    fe_noise_var: float = 1e-6
    sigma_a: float = 0.5
    gamma: float = 0.5
    cost_measurement: float = -10.0
    cost_lab: float = -1.0
    cost_fe: float = -0.1
    target: float = 1e-3
    max_actions: int = 40
    n_mc: int = 512
    # charged on budget exhaustion; large enough that abandoning a marginal
    # episode by spamming cheap actions is never worth more than paying for
    # the lab tests that could still confirm it
    failure_penalty: float = -100.0

    def candidate_pool(self) -> np.ndarray:
        """Fixed design-candidate grid in [-1, 1]^input_dim."""
        rng = np.random.default_rng(self.pool_seed)
        return rng.uniform(-1.0, 1.0, size=(self.pool_size, self.input_dim))


def basis_features(x: np.ndarray, config: ReliabilityConfig) -> np.ndarray:
    """Feature map of a design input; the raw coordinates (affine basis)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != config.input_dim:
        raise ValueError(f"input must have dimension {config.input_dim}")
    return x


@dataclass(frozen=True)
class SurrogatePosterior:
    """Gaussian posterior over the response-surface weights."""

    weight_mean: tuple  # length n_basis
    weight_covariance: tuple  # n_basis x n_basis, row tuples

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.weight_mean, dtype=float)

    def cov_array(self) -> np.ndarray:
        cov = np.asarray(self.weight_covariance, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("weight covariance must be symmetric")
        return cov

    @staticmethod
    def from_arrays(mean: np.ndarray, cov: np.ndarray) -> "SurrogatePosterior":
        cov = 0.5 * (cov + cov.T)
        return SurrogatePosterior(
            tuple(float(v) for v in mean),
            tuple(tuple(float(v) for v in row) for row in cov),
        )

    @staticmethod
    def prior(config: ReliabilityConfig) -> "SurrogatePosterior":
        k = config.n_basis
        return SurrogatePosterior.from_arrays(
            np.full(k, config.prior_beta_mean),
            np.eye(k) * config.prior_beta_var,
        )

    def predictive_variance(self, features: np.ndarray) -> np.ndarray:
        """phi^T Sigma phi for one feature vector or a stack of them."""
        cov = self.cov_array()
        features = np.atleast_2d(features)
        return np.einsum("ij,jk,ik->i", features, cov, features)

    def observe(
        self, features: np.ndarray, y: float, noise_var: float
    ) -> "SurrogatePosterior":
        """Rank-one conjugate update with one noisy linear observation."""
        m = self.mean_array()
        s = self.cov_array()
        phi = np.asarray(features, dtype=float)
        s_phi = s @ phi
        denom = float(phi @ s_phi) + noise_var
        new_mean = m + s_phi * (y - float(phi @ m)) / denom
        new_cov = s - np.outer(s_phi, s_phi) / denom
        return SurrogatePosterior.from_arrays(new_mean, new_cov)


@dataclass(frozen=True)
class ReliabilityState:
    surrogate: SurrogatePosterior
    defect_belief: GaussianBelief
    discrepancy_belief: GaussianBelief
    fe_observations: tuple  # tuples of length input_dim + 1: (x, observed y)
    actions_taken: int
    crn_seed: int  # fixed per episode: common random numbers for (E, Std)
    # simulator-only ground truth, never exposed through encode()
    true_beta: tuple
    true_defect: float
    true_discrepancy: float
    done: bool = False
    outcome: str | None = None  # CONFIRMED_* or FAILED once done


def pf_given_theta(
    beta: np.ndarray, d: float, mu_m: float, config: ReliabilityConfig
) -> float:
    """Closed-form failure probability for fixed epistemic values."""
    beta = np.asarray(beta, dtype=float)
    margin = mu_m + config.gamma * d
    scale = np.sqrt(float(beta @ beta) + config.sigma_a**2)
    return float(ndtr(-margin / scale))


def _pf_samples(state: ReliabilityState, config: ReliabilityConfig, seed: int):
    rng = np.random.default_rng(seed)
    n = config.n_mc
    cov = state.surrogate.cov_array()
    eigval, eigvec = np.linalg.eigh(cov)
    root = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
    betas = state.surrogate.mean_array() + rng.standard_normal((n, config.n_basis)) @ root.T
    ds = state.defect_belief.mean + state.defect_belief.sd * rng.standard_normal(n)
    mus = (
        state.discrepancy_belief.mean
        + state.discrepancy_belief.sd * rng.standard_normal(n)
    )
    margins = mus + config.gamma * ds
    scales = np.sqrt(np.einsum("ij,ij->i", betas, betas) + config.sigma_a**2)
    return ndtr(-margins / scales)


def estimate_pf_stats(
    state: ReliabilityState, config: ReliabilityConfig, seed: int
) -> tuple:
    """(E[p_f], Std(p_f)) over n_mc posterior draws of (beta, d, mu_m)."""
    pf = _pf_samples(state, config, seed)
    sd = float(pf.std(ddof=1)) if len(pf) > 1 else 0.0
    return float(pf.mean()), sd


def check_objective(mean: float, sd: float, target: float) -> str:
    """Two-standard-deviation confidence rule against the target value."""
    if sd < 0:
        raise ValueError("sd must be >= 0")
    if mean + 2.0 * sd < target:
        return CONFIRMED_BELOW
    if mean - 2.0 * sd > target:
        return CONFIRMED_ABOVE
    return UNDECIDED


def select_fe_input(
    surrogate: SurrogatePosterior, pool: np.ndarray, config: ReliabilityConfig
) -> np.ndarray:
    """Myopic design choice: the candidate with maximal predictive variance."""
    pool = np.atleast_2d(pool)
    if len(pool) == 0:
        raise ValueError("candidate pool must be non-empty")
    variances = surrogate.predictive_variance(basis_features(pool, config))
    return pool[int(np.argmax(variances))]  # argmax ties break to lowest index


def benchmark_policy_action(actions_taken: int) -> int:
    """Fixed cycle: ten computer experiments, one lab test, one measurement."""
    phase = actions_taken % 12
    if phase < 10:
        return FE
    if phase == 10:
        return LAB
    return MEASUREMENT


class ReliabilityEnv(Environment):
    """Belief-state MDP over the three experiment channels."""

    action_count = 3
    action_names = ACTION_NAMES

    def __init__(self, config: ReliabilityConfig = ReliabilityConfig()):
        self.config = config
        self.pool = config.candidate_pool()
        self.horizon = config.max_actions
        self.element_dim = config.input_dim + 1
        self.aux_dim = 8
        self._pool_features = basis_features(self.pool, config)
        prior_pv = SurrogatePosterior.prior(config).predictive_variance(
            self._pool_features
        )
        self._prior_surrogate_sd = float(np.sqrt(prior_pv.max()))

    def reset(self, rng) -> ReliabilityState:
        cfg = self.config
        beta = cfg.prior_beta_mean + np.sqrt(cfg.prior_beta_var) * rng.standard_normal(
            cfg.n_basis
        )
        d = cfg.prior_defect_mean + np.sqrt(cfg.prior_defect_var) * rng.standard_normal()
        mu = cfg.prior_discrepancy_mean + np.sqrt(
            cfg.prior_discrepancy_var
        ) * rng.standard_normal()
        return ReliabilityState(
            surrogate=SurrogatePosterior.prior(cfg),
            defect_belief=GaussianBelief(cfg.prior_defect_mean, cfg.prior_defect_var),
            discrepancy_belief=GaussianBelief(
                cfg.prior_discrepancy_mean, cfg.prior_discrepancy_var
            ),
            fe_observations=(),
            actions_taken=0,
            crn_seed=int(rng.integers(2**63)),
            true_beta=tuple(float(b) for b in beta),
            true_defect=float(d),
            true_discrepancy=float(mu),
        )

    def action_mask(self, state) -> np.ndarray:
        return np.ones(self.action_count, dtype=bool)

    def step(self, state: ReliabilityState, action: int, rng):
        cfg = self.config
        if state.done:
            raise StepAfterDone(f"episode already ended with {state.outcome!r}")

        if action == MEASUREMENT:
            obs = state.true_defect + np.sqrt(
                cfg.measurement_noise_var
            ) * rng.standard_normal()
            new_state = replace(
                state,
                defect_belief=gaussian_condition(
                    state.defect_belief, float(obs), cfg.measurement_noise_var
                ),
            )
            reward = cfg.cost_measurement
        elif action == LAB:
            obs = state.true_discrepancy + np.sqrt(
                cfg.lab_noise_var
            ) * rng.standard_normal()
            new_state = replace(
                state,
                discrepancy_belief=gaussian_condition(
                    state.discrepancy_belief, float(obs), cfg.lab_noise_var
                ),
            )
            reward = cfg.cost_lab
        elif action == FE:
            x = select_fe_input(state.surrogate, self.pool, cfg)
            phi = basis_features(x, cfg)
            y = float(
                np.asarray(state.true_beta) @ phi
                + np.sqrt(cfg.fe_noise_var) * rng.standard_normal()
            )
            new_state = replace(
                state,
                surrogate=state.surrogate.observe(phi, y, cfg.fe_noise_var),
                fe_observations=state.fe_observations
                + (tuple(float(v) for v in x) + (y,),),
            )
            reward = cfg.cost_fe
        else:
            raise ValueError(f"unknown action {action}")

        new_state = replace(new_state, actions_taken=state.actions_taken + 1)
        mean, sd = estimate_pf_stats(new_state, cfg, new_state.crn_seed)
        verdict = check_objective(mean, sd, cfg.target)
        if verdict != UNDECIDED:
            new_state = replace(new_state, done=True, outcome=verdict)
            return new_state, reward, True
        if new_state.actions_taken >= cfg.max_actions:
            new_state = replace(new_state, done=True, outcome=FAILED)
            return new_state, reward + cfg.failure_penalty, True
        return new_state, reward, False

    def surrogate_spread(self, surrogate: SurrogatePosterior) -> float:
        """Largest remaining predictive sd over the design pool, in [0, 1]
        relative to the prior (the compressed surrogate sufficient statistic)."""
        pv = surrogate.predictive_variance(self._pool_features)
        return float(np.sqrt(max(pv.max(), 0.0)) / self._prior_surrogate_sd)

    def objective_margins(self, state: ReliabilityState) -> tuple:
        """Log-scaled positions of the confidence interval versus the target.

        Returns (upper, lower) with upper = log10((E + 2 Std) / target) and
        lower = log10((E - 2 Std) / target), both clipped to [-3, 3] and
        scaled into [-1, 1]. The episode's stopping rule fires exactly when
        upper < 0 (confirmed below) or lower > 0 (confirmed above), so these
        two numbers summarize how far the remaining uncertainty is from a
        decision on either side.
        """
        mean, sd = estimate_pf_stats(state, self.config, state.crn_seed)
        target = self.config.target

        def scaled(value):
            ratio = max(value, 1e-12) / target
            return float(np.clip(np.log10(ratio), -3.0, 3.0) / 3.0)

        return scaled(mean + 2.0 * sd), scaled(mean - 2.0 * sd)

    def encode(self, state: ReliabilityState) -> StateEncoding:
        elements = tuple(np.asarray(obs, dtype=float) for obs in state.fe_observations)
        upper, lower = self.objective_margins(state)
        aux = np.array(
            [
                state.defect_belief.mean,
                state.defect_belief.sd,
                state.discrepancy_belief.mean,
                state.discrepancy_belief.sd,
                state.actions_taken / self.config.max_actions,
                self.surrogate_spread(state.surrogate),
                upper,
                lower,
            ]
        )
        return StateEncoding(elements, aux)
