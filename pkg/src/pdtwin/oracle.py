"""Exact backward induction for the component game.

The tabular state is the observable triple (n_success, n_fail, days_left).
Transitions integrate the hidden component type out through the posterior
psi, so the induction runs on the belief-marginal kernel: flipping the
current component yields Y = 0 with probability psi * theta_bad +
(1 - psi) * theta_good. Ties between equally good actions break toward the
lowest action index, which makes the optimal policy unique.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .envs.component import (
    REPLACE, TERMINATE, TEST, USE,
    CoinConfig, CoinState, ComponentBelief,
    belief_psi, expected_use_reward, success_probability,
)
from .mdp import Policy


class PolicyUndefinedAtState(KeyError):
    """policy_value hit a reachable state the policy does not cover."""


@dataclass(frozen=True)
class TabularState:
    n_success: int
    n_fail: int
    days_left: int


def _mask(state: TabularState, config: CoinConfig) -> tuple:
    allowed = [True, True, True, True]
    if config.constrained:
        psi = belief_psi(ComponentBelief(state.n_success, state.n_fail), config)
        if 1.0 - psi <= config.constraint_threshold:
            allowed[USE] = False
    return tuple(allowed)


def enumerate_states(horizon: int = 10, config: CoinConfig | None = None) -> list:
    """All states reachable from (0, 0, horizon), including the terminal layer."""
    config = config or CoinConfig()
    if config.horizon != horizon:
        config = CoinConfig(**{**config.__dict__, "horizon": horizon})
    start = TabularState(0, 0, horizon)
    seen = {start}
    frontier = [start]
    while frontier:
        state = frontier.pop()
        if state.days_left == 0:
            continue
        successors = []
        mask = _mask(state, config)
        d = state.days_left - 1
        if mask[TEST] or mask[USE]:
            successors.append(TabularState(state.n_success + 1, state.n_fail, d))
            successors.append(TabularState(state.n_success, state.n_fail + 1, d))
        if mask[REPLACE]:
            successors.append(TabularState(0, 0, d))
        for nxt in successors:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return sorted(seen, key=lambda s: (s.days_left, s.n_success, s.n_fail))


@dataclass(frozen=True)
class ValueTable:
    values: dict  # TabularState -> optimal value
    actions: dict  # TabularState -> optimal action (days_left > 0 only)
    config: CoinConfig


def backward_induction(config: CoinConfig = CoinConfig()) -> ValueTable:
    """Optimal value and action for every reachable tabular state."""
    states = enumerate_states(config.horizon, config)
    values: dict = {}
    actions: dict = {}
    for state in states:  # states sorted by days_left: successors come first
        if state.days_left == 0:
            values[state] = 0.0
            continue
        psi = belief_psi(ComponentBelief(state.n_success, state.n_fail), config)
        p0 = success_probability(psi, config)
        d = state.days_left - 1
        v_obs0 = values[TabularState(state.n_success + 1, state.n_fail, d)]
        v_obs1 = values[TabularState(state.n_success, state.n_fail + 1, d)]
        v_fresh = values[TabularState(0, 0, d)]
        expect_next = p0 * v_obs0 + (1.0 - p0) * v_obs1

        candidates = {
            TERMINATE: 0.0,
            TEST: config.test_cost + expect_next,
            REPLACE: config.replace_cost + v_fresh,
            USE: expected_use_reward(psi, config) + expect_next,
        }
        mask = _mask(state, config)
        best_action = None
        best_value = None
        for action in (TERMINATE, TEST, REPLACE, USE):
            if not mask[action]:
                continue
            v = candidates[action]
            if best_value is None or v > best_value:
                best_value, best_action = v, action
        values[state] = best_value
        actions[state] = best_action
    return ValueTable(values, actions, config)


def policy_value(policy_map: dict, config: CoinConfig = CoinConfig()) -> float:
    """Exact expected return of a deterministic tabular policy from the start.

    Forward recursion over the belief-marginal kernel; no sampling involved.
    """
    cache: dict = {}

    def value(state: TabularState) -> float:
        if state.days_left == 0:
            return 0.0
        if state in cache:
            return cache[state]
        if state not in policy_map:
            raise PolicyUndefinedAtState(state)
        action = policy_map[state]
        psi = belief_psi(ComponentBelief(state.n_success, state.n_fail), config)
        p0 = success_probability(psi, config)
        d = state.days_left - 1
        if action == TERMINATE:
            v = 0.0
        elif action == TEST:
            v = config.test_cost + (
                p0 * value(TabularState(state.n_success + 1, state.n_fail, d))
                + (1.0 - p0) * value(TabularState(state.n_success, state.n_fail + 1, d))
            )
        elif action == REPLACE:
            v = config.replace_cost + value(TabularState(0, 0, d))
        elif action == USE:
            v = expected_use_reward(psi, config) + (
                p0 * value(TabularState(state.n_success + 1, state.n_fail, d))
                + (1.0 - p0) * value(TabularState(state.n_success, state.n_fail + 1, d))
            )
        else:
            raise ValueError(f"unknown action {action}")
        cache[state] = v
        return v

    return value(TabularState(0, 0, config.horizon))


class OraclePolicy(Policy):
    """Plays the backward-induction optimal action on live CoinState objects."""

    def __init__(self, table: ValueTable):
        self.table = table

    def act(self, state: CoinState, mask, rng) -> int:
        key = TabularState(
            state.belief.n_success, state.belief.n_fail, state.days_left
        )
        return self.table.actions[key]


def table_to_csv(path, table: ValueTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_success", "n_fail", "days_left", "value", "action"])
        for state in sorted(
            table.values, key=lambda s: (-s.days_left, s.n_success, s.n_fail)
        ):
            action = table.actions.get(state, "")
            writer.writerow(
                [state.n_success, state.n_fail, state.days_left,
                 repr(table.values[state]), action]
            )
