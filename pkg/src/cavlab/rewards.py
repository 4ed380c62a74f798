"""Scenario reward functions; every CAV receives the same team scalar.

Ring / figure-eight: r = -w_v * (target - mean speed) + w_a * (threshold -
mean |CAV accel|), rewarding speeds near the target and smooth driving.
Merge: r = -w_v * (target - mean speed) + w_h * min((mean headway - t_min)
/ t_min, 0), penalizing only headways below the acceptable minimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec


@dataclass(frozen=True)
class RingEightReward:
    target_speed: float
    w_v: float = 2.0
    w_a: float = 4.0
    accel_threshold: float = 0.5

    def validate(self) -> None:
        if self.w_v < 0 or self.w_a < 0:
            raise InvalidSpec("reward weights must be >= 0")
        if self.target_speed <= 0:
            raise InvalidSpec("target speed must be positive")


@dataclass(frozen=True)
class MergeReward:
    target_speed: float
    w_v: float = 1.0
    w_h: float = 0.1
    t_min: float = 1.0

    def validate(self) -> None:
        if self.w_v < 0 or self.w_h < 0:
            raise InvalidSpec("reward weights must be >= 0")
        if self.target_speed <= 0 or self.t_min <= 0:
            raise InvalidSpec("target speed and t_min must be positive")


RewardSpec = RingEightReward | MergeReward


def reward_ring_eight(speeds, cav_accels, spec: RingEightReward) -> float:
    """Team reward from all-vehicle speeds and CAV accelerations.

    With no CAVs present the acceleration term uses a zero mean magnitude
    (the threshold bonus remains), mirroring the merge empty-mean rule.
    """
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size == 0:
        raise InvalidSpec("speed list must be nonempty")
    cav_accels = np.asarray(cav_accels, dtype=float)
    mean_speed = float(np.mean(speeds))
    mean_abs_accel = float(np.mean(np.abs(cav_accels))) if cav_accels.size else 0.0
    return (-spec.w_v * (spec.target_speed - mean_speed)
            + spec.w_a * (spec.accel_threshold - mean_abs_accel))


def reward_merge(speeds, cav_headways, spec: MergeReward) -> float:
    """Team reward from all-vehicle speeds and CAV time headways (seconds).

    Headways should already be capped by the simulator; with no CAVs the
    headway penalty is zero by convention.
    """
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size == 0:
        raise InvalidSpec("speed list must be nonempty")
    cav_headways = np.asarray(cav_headways, dtype=float)
    mean_speed = float(np.mean(speeds))
    term = 0.0
    if cav_headways.size:
        mean_headway = float(np.mean(cav_headways))
        term = min((mean_headway - spec.t_min) / spec.t_min, 0.0)
    return -spec.w_v * (spec.target_speed - mean_speed) + spec.w_h * term


def step_reward(info, spec: RewardSpec) -> float:
    """Reward for one StepInfo snapshot under the scenario's reward spec."""
    if isinstance(spec, RingEightReward):
        return reward_ring_eight(info.speeds, info.cav_accels, spec)
    return reward_merge(info.speeds, info.cav_time_headways, spec)
