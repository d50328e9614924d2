"""Ten-day component game: test, replace, use or terminate.

A component works (Y = 0) with probability theta, where theta is either 0.5
(a bad component) or 0.99 (a good one) and is hidden from the agent. Testing
costs $10k, replacing $100k, using the component stakes $1M on it working,
and terminating ends the project. The observable state is the count of
successes/failures seen on the component currently installed, plus the days
remaining.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..beliefs import DiscreteEpistemicBelief, epistemic_condition
from ..mdp import Environment, StateEncoding, StepAfterDone

TERMINATE, TEST, REPLACE, USE = 0, 1, 2, 3
ACTION_NAMES = ("terminate", "test", "replace", "use")


@dataclass(frozen=True)
class CoinConfig:
    horizon: int = 10
    theta_bad: float = 0.5
    theta_good: float = 0.99
    prior_bad: float = 0.5  # initial P(theta = theta_bad)
    test_cost: float = -10_000.0
    replace_cost: float = -100_000.0
    use_stake: float = 1_000_000.0  # won on Y = 0, lost on Y = 1
    constraint_threshold: float = 0.9  # Use requires P(theta_good) > this
    constrained: bool = False


@dataclass(frozen=True)
class ComponentBelief:
    """Sufficient statistic: outcome counts on the current component."""

    n_success: int
    n_fail: int

    def observe(self, y: int) -> "ComponentBelief":
        if y == 0:
            return ComponentBelief(self.n_success + 1, self.n_fail)
        return ComponentBelief(self.n_success, self.n_fail + 1)


@dataclass(frozen=True)
class CoinState:
    belief: ComponentBelief
    days_left: int
    hidden_theta: float  # simulator-only; never exposed through encode()
    observations: tuple = ()  # raw Y sequence on the current component
    done: bool = False


def belief_psi(belief: ComponentBelief, config: CoinConfig = CoinConfig()) -> float:
    """Posterior probability that the current component is the bad one.

    Computed in log-space so long runs of observations cannot underflow.
    """
    tb, tg = config.theta_bad, config.theta_good
    log_bad = (
        math.log(config.prior_bad)
        + belief.n_success * math.log(tb)
        + belief.n_fail * math.log1p(-tb)
    )
    log_good = (
        math.log1p(-config.prior_bad)
        + belief.n_success * math.log(tg)
        + belief.n_fail * math.log1p(-tg)
    )
    m = max(log_bad, log_good)
    eb, eg = math.exp(log_bad - m), math.exp(log_good - m)
    return eb / (eb + eg)


def component_prior(config: CoinConfig = CoinConfig()) -> DiscreteEpistemicBelief:
    return DiscreteEpistemicBelief(
        (config.theta_bad, config.theta_good),
        (config.prior_bad, 1.0 - config.prior_bad),
    )


def belief_from_observations(
    observations, config: CoinConfig = CoinConfig()
) -> DiscreteEpistemicBelief:
    """Sequential Bayes updates over the raw observation list (reference path)."""
    belief = component_prior(config)
    for y in observations:
        belief = epistemic_condition(
            belief, lambda theta, y=y: theta if y == 0 else 1.0 - theta
        )
    return belief


def success_probability(psi: float, config: CoinConfig = CoinConfig()) -> float:
    """Marginal P(Y = 0) under the belief psi about the component."""
    return psi * config.theta_bad + (1.0 - psi) * config.theta_good


def expected_use_reward(psi: float, config: CoinConfig = CoinConfig()) -> float:
    """Expected immediate reward of betting on the component working."""
    if not (0.0 <= psi <= 1.0):
        raise ValueError("psi must lie in [0, 1]")
    p0 = success_probability(psi, config)
    return p0 * config.use_stake - (1.0 - p0) * config.use_stake


class ComponentEnv(Environment):
    """Belief-state MDP over (component outcome counts, days left).

    ``encoding="set"`` exposes the raw outcome sequence of the current
    component as the set part with aux = (days_left / N,); ``"compressed"``
    exposes an empty set with aux = (psi, days_left / N).
    """

    action_count = 4
    action_names = ACTION_NAMES

    def __init__(self, config: CoinConfig = CoinConfig(), encoding: str = "compressed"):
        if encoding not in ("set", "compressed"):
            raise ValueError(f"unknown encoding {encoding!r}")
        self.config = config
        self.encoding = encoding
        self.horizon = config.horizon
        self.element_dim = 1
        self.aux_dim = 1 if encoding == "set" else 2

    def _draw_theta(self, rng) -> float:
        bad = rng.random() < self.config.prior_bad
        return self.config.theta_bad if bad else self.config.theta_good

    def reset(self, rng) -> CoinState:
        return CoinState(
            belief=ComponentBelief(0, 0),
            days_left=self.config.horizon,
            hidden_theta=self._draw_theta(rng),
        )

    def action_mask(self, state: CoinState) -> np.ndarray:
        mask = np.ones(self.action_count, dtype=bool)
        if self.config.constrained:
            psi = belief_psi(state.belief, self.config)
            if 1.0 - psi <= self.config.constraint_threshold:
                mask[USE] = False
        return mask

    def step(self, state: CoinState, action: int, rng):
        cfg = self.config
        if state.done or state.days_left <= 0:
            raise StepAfterDone(f"episode already ended at {state!r}")

        if action == TERMINATE:
            next_state = CoinState(
                state.belief, state.days_left, state.hidden_theta,
                state.observations, done=True,
            )
            return next_state, 0.0, True

        days_left = state.days_left - 1
        if action == REPLACE:
            next_state = CoinState(
                belief=ComponentBelief(0, 0),
                days_left=days_left,
                hidden_theta=self._draw_theta(rng),
                observations=(),
                done=days_left == 0,
            )
            return next_state, cfg.replace_cost, next_state.done

        # Test and Use both flip the current component once and observe Y
        y = 0 if rng.random() < state.hidden_theta else 1
        if action == TEST:
            reward = cfg.test_cost
        elif action == USE:
            reward = cfg.use_stake if y == 0 else -cfg.use_stake
        else:
            raise ValueError(f"unknown action {action}")
        next_state = CoinState(
            belief=state.belief.observe(y),
            days_left=days_left,
            hidden_theta=state.hidden_theta,
            observations=state.observations + (y,),
            done=days_left == 0,
        )
        return next_state, reward, next_state.done

    def encode(self, state: CoinState) -> StateEncoding:
        frac = state.days_left / self.config.horizon
        if self.encoding == "set":
            elements = tuple(
                np.array([float(y)]) for y in sorted(state.observations)
            )
            return StateEncoding(elements, np.array([frac]))
        psi = belief_psi(state.belief, self.config)
        return StateEncoding((), np.array([psi, frac]))
