"""Shared-policy multi-agent PPO with a graph-convolutional critic.

One policy drives every CAV; rollouts record per-step observations together
with the adjacency used at decision time. Updates run at episode boundaries
once the buffer holds at least `batch_size` agent-transitions (the advantage
estimator needs complete reward-to-go, so episodes are kept whole), then the
buffer is cleared: every transition feeds exactly one update round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec, NanGradient, NonFiniteValue
from .graph import AdjacencyScheme, build_adjacency, degree_normalize
from .idm import IdmParams
from .layers import LOG_2PI, Adam, CriticNetwork, NetConfig, PolicyNetwork
from .networks import RoadNetwork
from .rewards import RewardSpec, step_reward
from .sim import SimOptions, SimState, build_network, local_observation, step
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    clip: float = 0.2
    batch_size: int = 2048
    epochs: int = 10
    minibatch_size: int = 256   # transitions per Adam step within an epoch
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    horizon: int = 500
    episodes: int = 50
    normalize_advantages: bool = True
    checkpoint_every: int = 10
    max_lr_halvings: int = 8

    def validate(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise InvalidSpec("gamma must be in (0, 1)")
        if self.clip <= 0:
            raise InvalidSpec("clip radius must be positive")
        if self.batch_size < 1 or self.horizon < 1 or self.episodes < 1:
            raise InvalidSpec("batch_size, horizon and episodes must be >= 1")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise InvalidSpec("epochs and minibatch_size must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise InvalidSpec("step sizes must be positive")


@dataclass(frozen=True)
class EnvSpec:
    """Everything needed to build and reward one episode."""

    network: RoadNetwork
    n_human: int
    n_cav: int
    idm: IdmParams
    options: SimOptions
    target_speed: float
    dt: float
    reward: RewardSpec
    scheme: AdjacencyScheme
    scan_scale: float

    def build(self, seed) -> SimState:
        return build_network(self.network, self.n_human, self.n_cav, seed,
                             idm=self.idm, options=self.options)


@dataclass
class Transition:
    """One environment step for all live agents."""

    step_index: int
    agent_ids: list[int]
    obs: np.ndarray          # (N, OBS_DIM)
    weights: np.ndarray      # adjacency M_t (N, N)
    dinv_weights: np.ndarray  # D^-1 M_t
    mask: np.ndarray         # (N, N) bool
    actions: np.ndarray      # (N,)
    logp_old: np.ndarray     # (N,)
    reward: float            # shared team scalar
    next_obs: np.ndarray     # (N, OBS_DIM)
    terminal: np.ndarray     # (N,) bool: agent exited or episode ended here


@dataclass
class EpisodeResult:
    transitions: list[Transition]
    rewards: list[float]     # full per-step reward sequence (incl. agentless steps)
    episode_return: float
    mean_speed: float
    mean_abs_accel: float
    length: int
    collided: bool
    infos: list = field(default_factory=list)


@dataclass
class PolicyBundle:
    actor: PolicyNetwork
    critic: CriticNetwork
    cfg: NetConfig

    def parameters(self) -> dict[str, Tensor]:
        out = self.actor.parameters()
        out.update(self.critic.parameters())
        return out

    def architecture(self) -> dict:
        return {
            "obs_dim": self.cfg.obs_dim,
            "hidden": self.cfg.hidden,
            "heads": self.cfg.heads,
            "activation": self.cfg.activation,
            "literal_ratio_attention": self.cfg.literal_ratio_attention,
            "action_low": self.cfg.action_low,
            "action_high": self.cfg.action_high,
        }


def make_policy(net_cfg: NetConfig, seed_seq: np.random.SeedSequence) -> PolicyBundle:
    rng = np.random.default_rng(seed_seq)
    return PolicyBundle(actor=PolicyNetwork(rng, net_cfg),
                        critic=CriticNetwork(rng, net_cfg), cfg=net_cfg)


def _gaussian_logp(actions: np.ndarray, mean: np.ndarray, log_spread: float) -> np.ndarray:
    spread = math.exp(log_spread)
    z = (actions - mean) / spread
    return -0.5 * z ** 2 - log_spread - 0.5 * LOG_2PI


def policy_actions(bundle: PolicyBundle, state: SimState, env: EnvSpec,
                   action_rng: np.random.Generator | None):
    """Sampled (or deterministic-mean) actions for the live CAVs.

    Returns (transition scaffold dict or None when no CAVs, actions dict).
    """
    cavs = state.cavs()
    if not cavs:
        return None, {}
    adj = build_adjacency(state, env.scheme, env.scan_scale)
    dinv = degree_normalize(adj)
    obs = np.stack([local_observation(state, v.id, env.target_speed,
                                      env.scan_scale) for v in cavs])
    mask = adj.neighbor_mask
    with no_grad():
        mean = bundle.actor.action_mean(
            Tensor(obs[None]), Tensor(adj.weights[None]), Tensor(dinv[None]),
            mask[None]).data[0]
    log_spread = float(bundle.actor.head.log_spread.data[0])
    if action_rng is None:
        actions = mean.copy()
    else:
        actions = mean + math.exp(log_spread) * action_rng.standard_normal(len(cavs))
    logp = _gaussian_logp(actions, mean, log_spread)
    scaffold = {
        "agent_ids": [v.id for v in cavs],
        "obs": obs,
        "weights": adj.weights,
        "dinv_weights": dinv,
        "mask": mask,
        "actions": actions,
        "logp_old": logp,
    }
    return scaffold, {v.id: float(a) for v, a in zip(cavs, actions)}


def collect_rollout(bundle: PolicyBundle, env: EnvSpec, ppo: PpoConfig,
                    env_seed, action_rng: np.random.Generator | None,
                    keep_infos: bool = False) -> EpisodeResult:
    """One on-policy episode of at most `horizon` steps; breaks on collision."""
    state = env.build(env_seed)
    transitions: list[Transition] = []
    rewards: list[float] = []
    infos = []
    speed_sum = 0.0
    speed_count = 0
    accel_sum = 0.0
    accel_count = 0
    for t in range(ppo.horizon):
        scaffold, actions = policy_actions(bundle, state, env, action_rng)
        state, info = step(state, actions, env.dt)
        reward = step_reward(info, env.reward) if info.vehicle_ids else 0.0
        rewards.append(reward)
        if keep_infos:
            infos.append(info)
        speed_sum += float(info.speeds.sum())
        speed_count += len(info.vehicle_ids)
        cav_accels = info.cav_accels
        accel_sum += float(np.abs(cav_accels).sum())
        accel_count += len(cav_accels)
        done = state.collided or t == ppo.horizon - 1
        if scaffold is not None:
            live = {v.id for v in state.vehicles}
            next_obs = np.empty_like(scaffold["obs"])
            terminal = np.zeros(len(scaffold["agent_ids"]), dtype=bool)
            for i, aid in enumerate(scaffold["agent_ids"]):
                if aid in live:
                    next_obs[i] = local_observation(state, aid, env.target_speed,
                                                    env.scan_scale)
                    terminal[i] = done
                else:  # agent exited during this step
                    next_obs[i] = 0.0
                    terminal[i] = True
            transitions.append(Transition(
                step_index=t, reward=reward, next_obs=next_obs, terminal=terminal,
                **scaffold))
        if state.collided:
            break
    return EpisodeResult(
        transitions=transitions,
        rewards=rewards,
        episode_return=float(sum(rewards)),
        mean_speed=speed_sum / max(speed_count, 1),
        mean_abs_accel=accel_sum / max(accel_count, 1),
        length=len(rewards),
        collided=state.collided,
        infos=infos,
    )


# ---------------------------------------------------------------------------
# Advantages


def reward_to_go(rewards: list[float], gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def critic_values(critic: CriticNetwork, trans: list[Transition],
                  use_next: bool = False) -> list[np.ndarray]:
    """Per-transition value vectors, batching transitions of equal agent count."""
    groups: dict[int, list[int]] = {}
    for idx, tr in enumerate(trans):
        groups.setdefault(len(tr.agent_ids), []).append(idx)
    out: list[np.ndarray | None] = [None] * len(trans)
    with no_grad():
        for n in sorted(groups):
            idxs = groups[n]
            obs = np.stack([trans[i].next_obs if use_next else trans[i].obs for i in idxs])
            M = np.stack([trans[i].weights for i in idxs])
            dinv = np.stack([trans[i].dinv_weights for i in idxs])
            mask = np.stack([trans[i].mask for i in idxs])
            vals = critic.values(Tensor(obs), Tensor(M), Tensor(dinv), mask).data
            for row, i in enumerate(idxs):
                out[i] = vals[row]
    return out  # type: ignore[return-value]


def compute_advantages(episode: EpisodeResult, critic: CriticNetwork,
                       ppo: PpoConfig) -> list[np.ndarray]:
    """Per-agent discounted reward-to-go minus the critic baseline.

    Raw (un-normalized) advantages; batch normalization happens in the
    policy update.
    """
    if not episode.transitions:
        return []
    rtg = reward_to_go(episode.rewards, ppo.gamma)
    baselines = critic_values(critic, episode.transitions)
    return [rtg[tr.step_index] - baselines[k]
            for k, tr in enumerate(episode.transitions)]


# ---------------------------------------------------------------------------
# Updates


def _grouped(trans: list[Transition]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, tr in enumerate(trans):
        groups.setdefault(len(tr.agent_ids), []).append(idx)
    return groups


def _stack_group(trans: list[Transition], idxs: list[int]):
    obs = np.stack([trans[i].obs for i in idxs])
    M = np.stack([trans[i].weights for i in idxs])
    dinv = np.stack([trans[i].dinv_weights for i in idxs])
    mask = np.stack([trans[i].mask for i in idxs])
    return obs, M, dinv, mask


def td_targets(critic: CriticNetwork, trans: list[Transition],
               gamma: float) -> list[np.ndarray]:
    """r + gamma * V(next) with bootstrap 0 on terminal rows.

    The adjacency recorded at decision time is reused for the next-state
    value. Targets are treated as constants (semi-gradient TD).
    """
    next_vals = critic_values(critic, trans, use_next=True)
    return [tr.reward + gamma * next_vals[k] * (~tr.terminal).astype(float)
            for k, tr in enumerate(trans)]


def critic_loss_given_targets(critic: CriticNetwork, trans: list[Transition],
                              targets: list[np.ndarray]) -> Tensor:
    total: Tensor | None = None
    for n, idxs in sorted(_grouped(trans).items()):
        obs, M, dinv, mask = _stack_group(trans, idxs)
        tgt = np.stack([targets[i] for i in idxs])
        v = critic.values(Tensor(obs), Tensor(M), Tensor(dinv), mask)
        loss = ((v - Tensor(tgt)) ** 2).sum()
        total = loss if total is None else total + loss
    assert total is not None
    return total


def critic_loss(critic: CriticNetwork, trans: list[Transition], gamma: float) -> Tensor:
    """Sum over agents of squared TD errors against detached targets."""
    return critic_loss_given_targets(critic, trans, td_targets(critic, trans, gamma))


def surrogate_objective(actor: PolicyNetwork, trans: list[Transition],
                        advantages: list[np.ndarray], clip: float) -> Tensor:
    """Clipped PPO objective: sum over agents of min(r*A, clip(r)*A)."""
    total: Tensor | None = None
    for n, idxs in sorted(_grouped(trans).items()):
        obs, M, dinv, mask = _stack_group(trans, idxs)
        actions = np.stack([trans[i].actions for i in idxs])
        logp_old = np.stack([trans[i].logp_old for i in idxs])
        adv = np.stack([advantages[i] for i in idxs])
        mean = actor.action_mean(Tensor(obs), Tensor(M), Tensor(dinv), mask)
        logp_new = actor.log_prob(Tensor(actions), mean)
        ratio = (logp_new - Tensor(logp_old)).exp()
        surr = (ratio * Tensor(adv)).minimum(ratio.clip(1.0 - clip, 1.0 + clip) * Tensor(adv))
        part = surr.sum()
        total = part if total is None else total + part
    assert total is not None
    return total


def _params_finite(params: dict[str, Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params.values())


def _grads_finite(params: dict[str, Tensor]) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values())


class _GuardedOptimizer:
    """Runs a batch of passes, rejecting the batch and halving the step on NaN."""

    def __init__(self, params: dict[str, Tensor], lr: float, max_halvings: int):
        self.params = params
        self.opt = Adam(params, lr)
        self.max_halvings = max_halvings

    def minibatch_step(self, loss_fn, scale: float) -> None:
        self.opt.zero_grad()
        loss_fn().backward()
        if not _grads_finite(self.params):
            raise NonFiniteValue("non-finite gradient")
        self.opt.step(lr_scale=scale)
        if not _params_finite(self.params):
            raise NonFiniteValue("non-finite parameter after update")

    def run(self, pass_fn) -> None:
        snap = {k: p.data.copy() for k, p in self.params.items()}
        snap_opt = self.opt.state_dict()
        scale = 1.0
        for _ in range(self.max_halvings + 1):
            try:
                pass_fn(scale)
                return
            except NonFiniteValue:
                for k, p in self.params.items():
                    p.data = snap[k].copy()
                self.opt.load_state_dict(snap_opt)
                scale *= 0.5
        raise NanGradient(
            f"update still non-finite after {self.max_halvings} step-size halvings")


def _minibatches(trans: list[Transition], size: int,
                 rng: np.random.Generator) -> list[list[int]]:
    """Shuffled index chunks holding roughly `size` agent-transitions each."""
    order = rng.permutation(len(trans))
    chunks: list[list[int]] = []
    current: list[int] = []
    count = 0
    for idx in order:
        current.append(int(idx))
        count += len(trans[idx].agent_ids)
        if count >= size:
            chunks.append(current)
            current, count = [], 0
    if current:
        chunks.append(current)
    return chunks


def critic_update(trans: list[Transition], critic: CriticNetwork,
                  guard: _GuardedOptimizer, ppo: PpoConfig,
                  rng: np.random.Generator) -> float:
    """Minibatched TD passes; returns the full-batch loss at the start."""
    initial = float(critic_loss(critic, trans, ppo.gamma).data)

    def passes(scale: float) -> None:
        for _ in range(ppo.epochs):
            targets = td_targets(critic, trans, ppo.gamma)
            for chunk in _minibatches(trans, ppo.minibatch_size, rng):
                subset = [trans[i] for i in chunk]
                sub_targets = [targets[i] for i in chunk]
                guard.minibatch_step(
                    lambda: critic_loss_given_targets(critic, subset, sub_targets),
                    scale)

    guard.run(passes)
    return initial


def actor_update(trans: list[Transition], advantages: list[np.ndarray],
                 actor: PolicyNetwork, guard: _GuardedOptimizer, ppo: PpoConfig,
                 rng: np.random.Generator) -> float:
    """Minibatched ascent on the clipped surrogate; returns the initial objective."""
    initial = float(surrogate_objective(actor, trans, advantages, ppo.clip).data)

    def passes(scale: float) -> None:
        for _ in range(ppo.epochs):
            for chunk in _minibatches(trans, ppo.minibatch_size, rng):
                subset = [trans[i] for i in chunk]
                sub_adv = [advantages[i] for i in chunk]
                guard.minibatch_step(
                    lambda: -surrogate_objective(actor, subset, sub_adv, ppo.clip),
                    scale)

    guard.run(passes)
    return initial


def normalize_advantages(advantages: list[np.ndarray]) -> list[np.ndarray]:
    flat = np.concatenate([a.ravel() for a in advantages])
    mu = flat.mean()
    sd = flat.std()
    if sd < 1e-12:
        return [a - mu for a in advantages]
    return [(a - mu) / sd for a in advantages]


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpisodeRecord:
    episode: int
    seed: int
    episode_return: float
    mean_speed: float
    mean_abs_accel: float
    length: int


@dataclass
class TrainResult:
    bundle: PolicyBundle
    records: list[EpisodeRecord]
    actor_objectives: list[float]
    critic_losses: list[float]

    def curve_rows(self) -> list[str]:
        rows = ["episode,seed,return,mean_speed,mean_abs_accel,episode_len"]
        rows.extend(
            f"{r.episode},{r.seed},{r.episode_return!r},{r.mean_speed!r},"
            f"{r.mean_abs_accel!r},{r.length}" for r in self.records)
        return rows


def episode_streams(master_seed: int, episode: int):
    """Counter-based per-episode streams: (env seed sequence, action rng)."""
    env_ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(1, episode))
    action_ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(2, episode))
    return env_ss, np.random.default_rng(action_ss)


def init_stream(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(0,))


def train(env: EnvSpec, ppo: PpoConfig, net_cfg: NetConfig, master_seed: int,
          bundle: PolicyBundle | None = None, start_episode: int = 0,
          on_checkpoint=None) -> TrainResult:
    """Alternate rollout collection and PPO updates.

    `on_checkpoint(episode, bundle)` is invoked every `checkpoint_every`
    episodes and at the end. Pass `bundle`/`start_episode` to resume.
    """
    ppo.validate()
    if bundle is None:
        bundle = make_policy(net_cfg, init_stream(master_seed))
    actor_params = bundle.actor.parameters()
    critic_params = bundle.critic.parameters()
    actor_guard = _GuardedOptimizer(actor_params, ppo.actor_lr, ppo.max_lr_halvings)
    critic_guard = _GuardedOptimizer(critic_params, ppo.critic_lr, ppo.max_lr_halvings)

    records: list[EpisodeRecord] = []
    actor_objectives: list[float] = []
    critic_losses: list[float] = []
    buffer: list[EpisodeResult] = []
    buffered = 0

    for ep in range(start_episode, start_episode + ppo.episodes):
        env_ss, action_rng = episode_streams(master_seed, ep)
        episode = collect_rollout(bundle, env, ppo, env_ss, action_rng)
        records.append(EpisodeRecord(
            episode=ep, seed=master_seed, episode_return=episode.episode_return,
            mean_speed=episode.mean_speed, mean_abs_accel=episode.mean_abs_accel,
            length=episode.length))
        buffer.append(episode)
        buffered += sum(len(tr.agent_ids) for tr in episode.transitions)

        if buffered >= ppo.batch_size:
            advantages: list[np.ndarray] = []
            trans: list[Transition] = []
            for epi in buffer:
                advantages.extend(compute_advantages(epi, bundle.critic, ppo))
                trans.extend(epi.transitions)
            if trans:
                update_idx = len(critic_losses)
                critic_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=master_seed, spawn_key=(3, update_idx)))
                actor_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=master_seed, spawn_key=(4, update_idx)))
                critic_losses.append(
                    critic_update(trans, bundle.critic, critic_guard, ppo, critic_rng))
                if ppo.normalize_advantages:
                    advantages = normalize_advantages(advantages)
                actor_objectives.append(
                    actor_update(trans, advantages, bundle.actor, actor_guard, ppo,
                                 actor_rng))
            buffer.clear()
            buffered = 0

        if on_checkpoint is not None and (
                (ep + 1 - start_episode) % ppo.checkpoint_every == 0
                or ep == start_episode + ppo.episodes - 1):
            on_checkpoint(ep, bundle)

    return TrainResult(bundle=bundle, records=records,
                       actor_objectives=actor_objectives, critic_losses=critic_losses)
