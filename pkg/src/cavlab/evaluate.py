"""Deterministic evaluation, sweeps, and the decentralized-execution check.

Evaluation runs the policy mean (no sampling), aggregates mean/std across
seeds, and keeps the first episode per seed for space-time export. Sweeps
train (or reuse) a policy per cell and evaluate it, continuing past failed
cells.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .graph import (AdjacencyScheme, GaussianSpeedField, PositionOnly,
                    VelocityOnly)
from .layers import NetConfig
from .rewards import step_reward
from .sim import SimState, StepInfo, VehicleKind, cav_neighbors, route_distance
from .trainer import (EnvSpec, PolicyBundle, PpoConfig, collect_rollout,
                      policy_actions, train)


@dataclass
class EvalReport:
    mean_velocity: float
    mean_abs_accel: float
    episode_return: float
    collision_rate: float
    speed_matrix: np.ndarray          # first episode of the first seed
    position_matrix: np.ndarray
    vehicle_ids: list[int]
    seeds: list[int]
    per_seed_returns: list[float]
    per_seed_velocities: list[float]
    return_std: float
    velocity_std: float
    first_episode_infos: dict[int, list[StepInfo]] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "mean_velocity": self.mean_velocity,
            "mean_abs_accel": self.mean_abs_accel,
            "return": self.episode_return,
            "return_std": self.return_std,
            "velocity_std": self.velocity_std,
            "collision_rate": self.collision_rate,
            "seeds": self.seeds,
        }


def eval_episode_seed(seed: int, episode: int) -> np.random.SeedSequence:
    """Counter-based evaluation streams, disjoint from the training streams."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(10, episode))


def evaluate(bundle: PolicyBundle | None, env: EnvSpec, horizon: int,
             episodes: int, seeds: list[int]) -> EvalReport:
    """Deterministic-mean policy evaluation; `bundle=None` runs IDM-only traffic.

    The IDM-only baseline requires a scenario without CAVs (closed networks:
    n_cav = 0) since nobody supplies actions.
    """
    if not seeds:
        raise InvalidSpec("seed list must be nonempty")
    if episodes < 1:
        raise InvalidSpec("need at least one episode")
    ppo = PpoConfig(horizon=horizon, episodes=1, batch_size=1)

    returns, velocities, accels, collisions = [], [], [], []
    first_infos: dict[int, list[StepInfo]] = {}
    for seed in seeds:
        for ep in range(episodes):
            env_seed = eval_episode_seed(seed, ep)
            keep = ep == 0
            if bundle is None:
                episode = _idm_only_rollout(env, ppo, env_seed, keep)
            else:
                episode = collect_rollout(bundle, env, ppo, env_seed, None,
                                          keep_infos=keep)
            returns.append(episode.episode_return)
            velocities.append(episode.mean_speed)
            accels.append(episode.mean_abs_accel)
            collisions.append(episode.collided)
            if keep:
                first_infos[seed] = episode.infos

    speed_matrix, pos_matrix, ids = _stack_matrices(first_infos[seeds[0]])
    per_seed_returns = [float(np.mean(returns[i * episodes:(i + 1) * episodes]))
                        for i in range(len(seeds))]
    per_seed_vel = [float(np.mean(velocities[i * episodes:(i + 1) * episodes]))
                    for i in range(len(seeds))]
    return EvalReport(
        mean_velocity=float(np.mean(velocities)),
        mean_abs_accel=float(np.mean(accels)),
        episode_return=float(np.mean(returns)),
        collision_rate=float(np.mean(collisions)),
        speed_matrix=speed_matrix,
        position_matrix=pos_matrix,
        vehicle_ids=ids,
        seeds=list(seeds),
        per_seed_returns=per_seed_returns,
        per_seed_velocities=per_seed_vel,
        return_std=float(np.std(per_seed_returns)),
        velocity_std=float(np.std(per_seed_vel)),
        first_episode_infos=first_infos,
    )


def _idm_only_rollout(env: EnvSpec, ppo: PpoConfig, env_seed, keep_infos: bool):
    from .sim import step  # local import keeps module top tidy
    from .trainer import EpisodeResult
    state = env.build(env_seed)
    if state.cavs():
        raise InvalidSpec("IDM-only evaluation needs a CAV-free scenario")
    rewards, infos = [], []
    speed_sum = speed_count = 0.0
    for t in range(ppo.horizon):
        if any(v.kind is VehicleKind.CAV for v in state.vehicles):
            # merge networks may spawn CAVs; IDM-only runs use cav_fraction 0
            raise InvalidSpec("CAV spawned during an IDM-only run")
        state, info = step(state, {}, env.dt)
        rewards.append(step_reward(info, env.reward) if info.vehicle_ids else 0.0)
        if keep_infos:
            infos.append(info)
        speed_sum += float(info.speeds.sum())
        speed_count += len(info.vehicle_ids)
        if state.collided:
            break
    return EpisodeResult(
        transitions=[], rewards=rewards, episode_return=float(sum(rewards)),
        mean_speed=speed_sum / max(speed_count, 1), mean_abs_accel=0.0,
        length=len(rewards), collided=state.collided, infos=infos)


def _stack_matrices(infos: list[StepInfo]):
    """Speed/position matrices (steps x vehicles); NaN where a vehicle is absent."""
    ids = sorted({vid for info in infos for vid in info.vehicle_ids})
    col = {vid: j for j, vid in enumerate(ids)}
    speed = np.full((len(infos), len(ids)), np.nan)
    pos = np.full((len(infos), len(ids)), np.nan)
    for t, info in enumerate(infos):
        for i, vid in enumerate(info.vehicle_ids):
            speed[t, col[vid]] = info.speeds[i]
            pos[t, col[vid]] = info.positions[i]
    return speed, pos, ids


# ---------------------------------------------------------------------------
# space-time export

SPACE_TIME_HEADER = "step,vehicle_id,route_pos,speed"


def space_time_export(report: EvalReport, path) -> None:
    """Write `step,vehicle_id,route_pos,speed` rows for the first episode,
    plus a sibling `<path>.meanspeed.csv` with the per-step mean speed."""
    rows = [SPACE_TIME_HEADER]
    mean_rows = ["step,mean_speed"]
    infos = report.first_episode_infos.get(report.seeds[0], [])
    for info in infos:
        for i, vid in enumerate(info.vehicle_ids):
            rows.append(f"{info.time_step},{vid},{float(info.positions[i])!r},"
                        f"{float(info.speeds[i])!r}")
        mean = float(info.speeds.mean()) if len(info.vehicle_ids) else math.nan
        mean_rows.append(f"{info.time_step},{mean!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(f"{path}.meanspeed.csv", "w") as fh:
        fh.write("\n".join(mean_rows) + "\n")


def import_space_time(path) -> dict[int, dict[int, tuple[float, float]]]:
    """step -> vehicle_id -> (route_pos, speed); exact floats via repr round-trip."""
    out: dict[int, dict[int, tuple[float, float]]] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SPACE_TIME_HEADER:
            raise InvalidSpec(f"unexpected space-time header {header!r}")
        for line in fh:
            s, vid, pos, speed = line.strip().split(",")
            out.setdefault(int(s), {})[int(vid)] = (float(pos), float(speed))
    return out


# ---------------------------------------------------------------------------
# sweeps

SWEEP_VARIABLES = ("penetration_rate", "target_speed", "scan_scale",
                   "adjacency_scheme", "attention_heads")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: list
    episodes_per_value: int
    seeds: list[int]

    def validate(self) -> None:
        if self.variable not in SWEEP_VARIABLES:
            raise InvalidSpec(f"unknown sweep variable {self.variable!r}; "
                              f"expected one of {SWEEP_VARIABLES}")
        if not self.values or not self.seeds:
            raise InvalidSpec("sweep values and seeds must be nonempty")
        if self.episodes_per_value < 1:
            raise InvalidSpec("episodes_per_value must be >= 1")


@dataclass
class SweepCell:
    variable: str
    value: object
    seed: int
    episode_return: float = math.nan
    mean_velocity: float = math.nan
    mean_abs_accel: float = math.nan
    failed: bool = False
    error: str = ""


@dataclass
class SweepResult:
    cells: list[SweepCell]
    pct_change_rows: list[str] = field(default_factory=list)

    def table_rows(self) -> list[str]:
        rows = ["variable,value,seed,return,mean_velocity,mean_abs_accel"]
        for c in self.cells:
            if c.failed:
                rows.append(f"{c.variable},{c.value},{c.seed},nan,nan,nan")
            else:
                rows.append(f"{c.variable},{c.value},{c.seed},{c.episode_return!r},"
                            f"{c.mean_velocity!r},{c.mean_abs_accel!r}")
        return rows


def _scheme_for(name: str, target_speed: float) -> AdjacencyScheme:
    if name in ("both", "gaussian_speed_field"):
        return GaussianSpeedField()
    if name in ("position", "position_only"):
        return PositionOnly()
    if name in ("velocity", "velocity_only"):
        return VelocityOnly(target_speed=target_speed)
    raise InvalidSpec(f"unknown adjacency scheme {name!r}")


def _with_target_speed(env: EnvSpec, target: float) -> EnvSpec:
    reward = dataclasses.replace(env.reward, target_speed=target)
    idm = dataclasses.replace(env.idm, v0=target)
    scheme = env.scheme
    if isinstance(scheme, VelocityOnly):
        scheme = dataclasses.replace(scheme, target_speed=target)
    return dataclasses.replace(env, target_speed=target, reward=reward,
                               idm=idm, scheme=scheme)


def _cell_env_net(env: EnvSpec, net: NetConfig, variable: str, value):
    if variable == "penetration_rate":
        total = env.n_human + env.n_cav
        n_cav = int(round(float(value) * total))
        if not (0 < n_cav <= total):
            raise InvalidSpec(f"penetration rate {value} gives {n_cav} CAVs of {total}")
        return dataclasses.replace(env, n_cav=n_cav, n_human=total - n_cav), net
    if variable == "target_speed":
        return _with_target_speed(env, float(value)), net
    if variable == "scan_scale":
        return dataclasses.replace(env, scan_scale=float(value)), net
    if variable == "adjacency_scheme":
        return dataclasses.replace(env, scheme=_scheme_for(str(value), env.target_speed)), net
    if variable == "attention_heads":
        return env, dataclasses.replace(net, heads=int(value))
    raise InvalidSpec(f"unknown sweep variable {variable!r}")


TRAIN_TARGET_SPEED_BASE = 20.0 / 3.6  # 20 km/h training baseline for the sweep


def run_sweep(spec: SweepSpec, env: EnvSpec, ppo: PpoConfig, net: NetConfig,
              horizon: int | None = None) -> SweepResult:
    """Train and evaluate one cell per (value, seed).

    target_speed is a generalization sweep: the policy is trained once per
    seed at 20 km/h and evaluated under each target speed; the percentage
    return change against the 20 km/h cell is emitted alongside. Failed cells
    are marked and the sweep continues.
    """
    spec.validate()
    horizon = horizon if horizon is not None else ppo.horizon
    cells: list[SweepCell] = []
    pct_rows = ["variable,value,seed,pct_return_change"]

    if spec.variable == "target_speed":
        for seed in spec.seeds:
            base_env = _with_target_speed(env, TRAIN_TARGET_SPEED_BASE)
            try:
                result = train(base_env, ppo, net, master_seed=seed)
            except Exception as exc:  # noqa: BLE001 - cell isolation
                for value in spec.values:
                    cells.append(SweepCell(spec.variable, value, seed,
                                           failed=True, error=str(exc)))
                continue
            baseline_return = None
            for value in spec.values:
                cell = SweepCell(spec.variable, value, seed)
                try:
                    cell_env = _with_target_speed(env, float(value))
                    report = evaluate(result.bundle, cell_env, horizon,
                                      spec.episodes_per_value, [seed])
                    cell.episode_return = report.episode_return
                    cell.mean_velocity = report.mean_velocity
                    cell.mean_abs_accel = report.mean_abs_accel
                    if math.isclose(float(value), TRAIN_TARGET_SPEED_BASE):
                        baseline_return = report.episode_return
                except Exception as exc:  # noqa: BLE001
                    cell.failed = True
                    cell.error = str(exc)
                cells.append(cell)
            if baseline_return is None:
                base_cell_env = _with_target_speed(env, TRAIN_TARGET_SPEED_BASE)
                baseline_return = evaluate(
                    result.bundle, base_cell_env, horizon,
                    spec.episodes_per_value, [seed]).episode_return
            for cell in cells:
                if cell.seed == seed and not cell.failed:
                    pct = 100.0 * (cell.episode_return - baseline_return) / abs(baseline_return)
                    pct_rows.append(f"{spec.variable},{cell.value},{seed},{pct!r}")
        return SweepResult(cells=cells, pct_change_rows=pct_rows)

    for value in spec.values:
        for seed in spec.seeds:
            cell = SweepCell(spec.variable, value, seed)
            try:
                cell_env, cell_net = _cell_env_net(env, net, spec.variable, value)
                result = train(cell_env, ppo, cell_net, master_seed=seed)
                report = evaluate(result.bundle, cell_env, horizon,
                                  spec.episodes_per_value, [seed])
                cell.episode_return = report.episode_return
                cell.mean_velocity = report.mean_velocity
                cell.mean_abs_accel = report.mean_abs_accel
            except Exception as exc:  # noqa: BLE001 - cell isolation
                cell.failed = True
                cell.error = str(exc)
            cells.append(cell)
    return SweepResult(cells=cells)


# ---------------------------------------------------------------------------
# decentralized execution check


@dataclass
class DecentralizationReport:
    samples: int
    checked_agents: int
    perturbed_agents: int
    violations: list[tuple[int, int, float]]  # (sample index, agent id, |delta|)

    @property
    def passed(self) -> bool:
        return not self.violations


def receptive_closure(state: SimState, agent_id: int, scan_scale: float,
                      hops: int = 2) -> set[int]:
    """CAV ids that can influence the agent's action.

    `hops` SC-graph hops cover the graph-conv + attention layers; the
    closure is then extended with each member's observed nearest leading
    and following CAVs, which enter through the local observation at any
    range.
    """
    cavs = [v for v in state.vehicles if v.kind is VehicleKind.CAV]
    by_id = {v.id: v for v in cavs}
    frontier = {agent_id}
    closure = {agent_id}
    for _ in range(hops):
        new = set()
        for a in frontier:
            va = by_id[a]
            for w in cavs:
                if w.id not in closure and route_distance(state, va, w) <= scan_scale:
                    new.add(w.id)
        closure |= new
        frontier = new
    for a in list(closure):
        leader, follower = cav_neighbors(state, by_id[a], scan_scale)
        for nb in (leader, follower):
            if nb is not None:
                closure.add(nb.id)
    return closure


def _deterministic_actions(bundle: PolicyBundle, state: SimState, env: EnvSpec) -> dict[int, float]:
    _, actions = policy_actions(bundle, state, env, None)
    return actions


def decentralization_check(bundle: PolicyBundle, env: EnvSpec, seed: int,
                           samples: int = 100, horizon: int = 500,
                           tol: float = 1e-9) -> DecentralizationReport:
    """Perturb vehicles outside each agent's receptive field; the agent's
    deterministic action must not change (one-sided check)."""
    ppo = PpoConfig(horizon=horizon, episodes=1, batch_size=1)
    states: list[SimState] = []
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(20,)))
    episode_idx = 0
    from .sim import step
    while len(states) < samples:
        state = env.build(np.random.SeedSequence(entropy=seed, spawn_key=(21, episode_idx)))
        for t in range(horizon):
            actions = _deterministic_actions(bundle, state, env)
            state, _ = step(state, actions, env.dt)
            if state.collided:
                break
            if t % 7 == 3 and state.cavs():
                states.append(copy.deepcopy(state))
                if len(states) >= samples:
                    break
        episode_idx += 1
        if episode_idx > 50:
            break

    violations: list[tuple[int, int, float]] = []
    checked = perturbed_total = 0
    for s_idx, state in enumerate(states):
        base_actions = _deterministic_actions(bundle, state, env)
        cav_ids = [v.id for v in state.cavs()]
        for agent_id in cav_ids:
            closure = receptive_closure(state, agent_id, env.scan_scale)
            outside = [v for v in state.vehicles
                       if (v.kind is VehicleKind.HUMAN) or (v.id not in closure)]
            if not outside:
                continue
            checked += 1
            perturbed_total += len(outside)
            mutated = copy.deepcopy(state)
            for v in mutated.vehicles:
                if v.kind is VehicleKind.HUMAN:
                    v.speed = max(0.0, v.speed + float(rng.uniform(-1.0, 1.0)))
                    v.route_pos = (v.route_pos + float(rng.uniform(-2.0, 2.0))) \
                        % _route_len(mutated, v)
                elif v.id not in closure and v.id != agent_id:
                    v.speed = max(0.0, v.speed + float(rng.uniform(0.5, 1.5)))
            new_actions = _deterministic_actions(bundle, mutated, env)
            delta = abs(new_actions[agent_id] - base_actions[agent_id])
            if delta >= tol:
                violations.append((s_idx, agent_id, delta))
    return DecentralizationReport(samples=len(states), checked_agents=checked,
                                  perturbed_agents=perturbed_total,
                                  violations=violations)


def _route_len(state: SimState, v) -> float:
    from .sim import route_length
    return route_length(state, v.route_id)
