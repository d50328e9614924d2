"""Run configuration: JSON config files merged over dataclass defaults.

The file is a plain JSON object with optional sections::

    {
      "env": {"component": {...}, "reliability": {...}},
      "train": {...}
    }

Every default that applies is echoed back into the resolved-config file a
run writes, so a run is reproducible from its output directory alone.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .dqn import TrainConfig
from .envs.component import CoinConfig
from .envs.reliability import ReliabilityConfig


class ConfigError(ValueError):
    """Malformed config file or unknown key."""


# training defaults that differ per environment
COMPONENT_TRAIN_DEFAULTS = {
    "episodes": 3000,
    "reward_scale": 1e6,
}
RELIABILITY_TRAIN_DEFAULTS = {
    "episodes": 5000,
    "reward_scale": 10.0,
    # the 40-step information-gathering game is prone to late-training policy
    # collapse under plain DQN; decoupled action selection in the targets and
    # validation-scored snapshot selection keep the returned policy at its peak
    "double_dqn": True,
    "train_every": 2,
    "snapshot_every": 500,
    "snapshot_episodes": 60,
}


def _build(cls, overrides: dict, defaults: dict | None = None):
    values = dict(defaults or {})
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        if isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return cls(**values)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    component: CoinConfig
    reliability: ReliabilityConfig
    train: TrainConfig

    def resolved_dict(self) -> dict:
        return {
            "env": {
                "component": dataclasses.asdict(self.component),
                "reliability": dataclasses.asdict(self.reliability),
            },
            "train": dataclasses.asdict(self.train),
        }


def load_run_config(
    path: str | None,
    environment: str,
    seed: int | None = None,
    episodes: int | None = None,
    constrained: bool = False,
) -> RunConfig:
    """Assemble the full run configuration from a file and CLI overrides."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    env_section = raw.get("env", {})
    for key in raw:
        if key not in ("env", "train"):
            raise ConfigError(f"unknown top-level section {key!r}")
    for key in env_section:
        if key not in ("component", "reliability"):
            raise ConfigError(f"unknown env section {key!r}")

    component_over = dict(env_section.get("component", {}))
    if constrained:
        component_over["constrained"] = True
    component = _build(CoinConfig, component_over)
    reliability = _build(ReliabilityConfig, dict(env_section.get("reliability", {})))

    train_defaults = (
        COMPONENT_TRAIN_DEFAULTS if environment == "component"
        else RELIABILITY_TRAIN_DEFAULTS
    )
    train_over = dict(raw.get("train", {}))
    if seed is not None:
        train_over["seed"] = seed
    if episodes is not None:
        train_over["episodes"] = episodes
    train = _build(TrainConfig, train_over, train_defaults)
    return RunConfig(component, reliability, train)


def write_resolved(path, config: RunConfig, extra: dict | None = None) -> None:
    block = config.resolved_dict()
    if extra:
        block["run"] = extra
    with open(path, "w") as fh:
        json.dump(block, fh, indent=2, sort_keys=True)
        fh.write("\n")
