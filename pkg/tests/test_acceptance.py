"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to get one pass/fail line
per criterion plus the measured values.
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from cavlab.evaluate import decentralization_check, evaluate
from cavlab.graph import GaussianSpeedField, KernelSpec, build_adjacency
from cavlab.idm import IdmParams, equilibrium_speed
from cavlab.layers import (AttentionLayer, Dense, GaussianPolicyHead,
                           GraphConvLayer, NetConfig)
from cavlab.networks import MergeSpec, RingSpec
from cavlab.rewards import MergeReward, RingEightReward, reward_merge, reward_ring_eight
from cavlab.sim import (HEADWAY_CAP, SimOptions, SimState, VehicleKind,
                        VehicleState, build_network, compute_leaders,
                        export_trajectory_csv, merge_effective_pos, step,
                        vehicle_table_rows)
from cavlab.tensor import Tensor
from cavlab.trainer import (EnvSpec, PpoConfig, collect_rollout,
                            compute_advantages, critic_loss_given_targets,
                            episode_streams, make_policy, init_stream,
                            surrogate_objective, td_targets, train)

KMH30 = 30.0 / 3.6


def report(num: int, detail: str) -> None:
    print(f"\n[ACCEPTANCE {num:02d}] PASS — {detail}")


def fd_grad(fn, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + 1e-12)


# ---------------------------------------------------------------------------
# 1. all-human ring baseline: congested mean speed with stop-and-go waves


def test_01_idm_ring_baseline():
    t0 = time.time()
    idm = IdmParams(v0=KMH30, noise_mag=0.2)
    state = build_network(RingSpec(230.0), 22, 0, seed=0, idm=idm)
    speeds = []
    for _ in range(3000):
        state, info = step(state, {}, 0.1)
        speeds.append(info.speeds.copy())
        assert not state.collided
    elapsed = time.time() - t0
    S = np.array(speeds)
    mean_velocity = float(S.mean())
    final_std = float(S[-500:].std(axis=1).mean())
    assert 2.754 - 1.5 <= mean_velocity <= 2.754 + 1.5
    assert final_std > 0.5
    assert elapsed < 10.0
    report(1, f"mean velocity {mean_velocity:.3f} m/s in 2.754±1.5, "
              f"final-500 speed std {final_std:.3f} > 0.5, runtime {elapsed:.1f}s < 10s")


# ---------------------------------------------------------------------------
# 2. IDM equilibrium persistence


def test_02_idm_equilibrium():
    idm = IdmParams(v0=KMH30, noise_mag=0.0)
    state = build_network(RingSpec(230.0), 22, 0, seed=0, idm=idm)
    v_e = equilibrium_speed(230.0 / 22.0 - state.options.vehicle_length, idm)
    for v in state.vehicles:
        v.speed = v_e
    worst = 0.0
    for _ in range(1000):
        state, info = step(state, {}, 0.1)
        worst = max(worst, float(np.max(np.abs(info.speeds - v_e))))
    assert worst < 1e-9
    report(2, f"max speed deviation over 1000 steps: {worst:.2e} < 1e-9")


# ---------------------------------------------------------------------------
# 3. Gradient suite (>= 20 random instances per layer / loss)


def _check_tensor_grad(param, loss_fn, tol=1e-4, h=1e-5):
    param.grad = None
    loss_fn().backward()
    ad = param.grad.copy()
    orig = param.data.copy()

    def f(x):
        param.data = x
        return float(loss_fn().data)

    fd = fd_grad(f, orig, h=h)
    param.data = orig
    assert rel_err(ad, fd) < tol, f"{param.name}: rel err {rel_err(ad, fd):.2e}"


def test_03_gradient_suite():
    t0 = time.time()
    n_instances = 20

    for i in range(n_instances):
        rng = np.random.default_rng(1000 + i)
        dense = Dense(rng, 5, 3)
        x = Tensor(rng.standard_normal((2, 5)))
        _check_tensor_grad(dense.W, lambda: (dense(x) ** 2).sum())
        _check_tensor_grad(dense.b, lambda: (dense(x) ** 2).sum())

    for i in range(n_instances):
        rng = np.random.default_rng(2000 + i)
        act = "tanh" if i % 2 == 0 else "relu"
        gconv = GraphConvLayer(rng, 3, 3, activation=act)
        H = Tensor(rng.standard_normal((4, 3)))
        M = Tensor(rng.standard_normal((4, 4)) * 0.5)
        Dinv = Tensor(M.data / 2.0)
        _check_tensor_grad(gconv.W, lambda: (gconv(H, M, Dinv) ** 2).sum())

    for i in range(n_instances):
        rng = np.random.default_rng(3000 + i)
        attn = AttentionLayer(rng, 4, heads=2)
        H = Tensor(rng.standard_normal((1, 3, 4)))
        mask = rng.random((1, 3, 3)) > 0.3
        mask[0, np.arange(3), np.arange(3)] = True
        params = [attn.Wq, attn.Wk, attn.Wv, attn.Wo]
        _check_tensor_grad(params[i % 4], lambda: (attn(H, mask) ** 2).sum())

    for i in range(n_instances):
        rng = np.random.default_rng(4000 + i)
        head = GaussianPolicyHead(rng, 4, low=-3.0, high=3.0)
        head.log_spread.data[:] = rng.uniform(-0.5, 0.5)
        trunk = Tensor(rng.standard_normal((1, 3, 4)))
        actions = Tensor(rng.uniform(-2, 2, size=(1, 3)))

        def head_loss():
            mean = head.mean(trunk).reshape(1, 3)
            return head.log_prob(actions, mean).sum()

        params = [head.mean_layer.W, head.mean_layer.b, head.log_spread]
        _check_tensor_grad(params[i % 3], head_loss)

    # both loss functions, through the full networks
    env = EnvSpec(network=RingSpec(230.0), n_human=2, n_cav=3,
                  idm=IdmParams(v0=KMH30, noise_mag=0.2),
                  options=SimOptions(safety_clamp=True), target_speed=KMH30,
                  dt=0.1, reward=RingEightReward(target_speed=KMH30),
                  scheme=GaussianSpeedField(), scan_scale=60.0)
    ppo = PpoConfig(horizon=4, episodes=1, batch_size=1, gamma=0.9)
    for i in range(n_instances):
        bundle = make_policy(NetConfig(hidden=8, heads=2), init_stream(5000 + i))
        _, arng = episode_streams(5000 + i, 0)
        episode = collect_rollout(bundle, env, ppo, 5000 + i, arng)
        trans = episode.transitions
        targets = td_targets(bundle.critic, trans, ppo.gamma)
        cparams = list(bundle.critic.parameters().values())
        _check_tensor_grad(
            cparams[i % len(cparams)],
            lambda: critic_loss_given_targets(bundle.critic, trans, targets))
        advs = compute_advantages(episode, bundle.critic, ppo)
        aparams = list(bundle.actor.parameters().values())
        _check_tensor_grad(
            aparams[i % len(aparams)],
            lambda: surrogate_objective(bundle.actor, trans, advs, clip=0.2))
    elapsed = time.time() - t0
    assert elapsed < 60.0
    report(3, f"dense/gconv/attention/gaussian-head/TD-loss/surrogate x{n_instances} "
              f"instances, rel err < 1e-4, runtime {elapsed:.1f}s < 60s")


# ---------------------------------------------------------------------------
# 4. Attention normalization over randomized states


def test_04_attention_normalization():
    rng = np.random.default_rng(7)
    worst_sum_dev = 0.0
    for trial in range(40):
        n = int(rng.integers(1, 7))
        heads = int(rng.choice([1, 2, 4]))
        layer = AttentionLayer(np.random.default_rng(100 + trial), 8, heads=heads)
        H = Tensor(rng.standard_normal((1, n, 8)) * 2.0)
        mask = rng.random((1, n, n)) > 0.4
        mask[0, np.arange(n), np.arange(n)] = True
        phi = layer.scores(H, mask).data
        worst_sum_dev = max(worst_sum_dev, float(np.max(np.abs(phi.sum(axis=-1) - 1.0))))
        expanded = np.broadcast_to(mask[:, None, :, :], phi.shape)
        assert np.all(phi[~expanded] == 0.0)
    assert worst_sum_dev < 1e-9
    report(4, f"40 randomized states: rows sum to 1 within {worst_sum_dev:.2e} "
              f"(< 1e-9), phi exactly 0 outside neighbor sets")


# ---------------------------------------------------------------------------
# 5. Adjacency correctness on randomized states


def test_05_adjacency_correctness():
    rng = np.random.default_rng(11)
    sigma = 4.0
    worst = 0.0
    for trial in range(50):
        n = int(rng.integers(2, 8))
        L = float(rng.uniform(150, 300))
        state = build_network(RingSpec(L), 0, n, seed=trial,
                              idm=IdmParams(noise_mag=0.0))
        for v in state.vehicles:
            v.route_pos = float(rng.uniform(0, L))
            v.speed = float(rng.uniform(0, 12))
        sc = float(rng.uniform(5, 120))
        adj = build_adjacency(state, GaussianSpeedField(KernelSpec(1.0, sigma)), sc)
        pos = [v.route_pos for v in state.vehicles]
        spd = [v.speed for v in state.vehicles]
        for i in range(n):
            assert adj.weights[i, i] == 1.0
            for j in range(n):
                if i == j:
                    continue
                d = abs(pos[i] - pos[j])
                d = min(d, L - d)
                if d > sc:
                    assert adj.weights[i, j] == 0.0
                else:
                    expected = math.exp(-d * d / (2 * sigma ** 2)) * (spd[j] - spd[i])
                    worst = max(worst, abs(adj.weights[i, j] - expected))
                    # kernel symmetry + delta-v antisymmetry off-diagonal
                    assert abs(adj.weights[i, j] + adj.weights[j, i]) <= 1e-12
        assert worst <= 1e-12
    report(5, f"50 randomized states: mask sound, antisymmetric, entries match "
              f"independent recomputation within {worst:.2e} (<= 1e-12)")


# ---------------------------------------------------------------------------
# 6. PPO clip semantics


def test_06_ppo_clip_semantics():
    env = EnvSpec(network=RingSpec(230.0), n_human=2, n_cav=3,
                  idm=IdmParams(v0=KMH30, noise_mag=0.2),
                  options=SimOptions(safety_clamp=True), target_speed=KMH30,
                  dt=0.1, reward=RingEightReward(target_speed=KMH30),
                  scheme=GaussianSpeedField(), scan_scale=60.0)
    ppo = PpoConfig(horizon=1, episodes=1, batch_size=1, gamma=0.9)
    bundle = make_policy(NetConfig(hidden=8, heads=2), init_stream(77))
    _, arng = episode_streams(77, 0)
    episode = collect_rollout(bundle, env, ppo, 77, arng)
    trans = episode.transitions
    n_agents = len(trans[0].agent_ids)
    eps = 0.2

    # (a) ratio in band: clipped surrogate equals the unclipped one. With
    # theta = theta_old the ratio is 1, squarely inside the band.
    advs = [np.full(n_agents, 0.7)]
    obj = float(surrogate_objective(bundle.actor, trans, advs, clip=eps).data)
    unclipped = float(np.sum(advs[0]))  # ratio 1 -> sum of advantages
    assert obj == pytest.approx(unclipped, rel=1e-9)

    # (b) out-of-band disadvantageous samples: zero parameter gradient,
    # confirmed against finite differences of the objective
    trans[0].logp_old = trans[0].logp_old - math.log(1.0 + 2 * eps)  # ratio 1.4
    params = bundle.actor.parameters()
    for p in params.values():
        p.grad = None
    surrogate_objective(bundle.actor, trans, advs, clip=eps).backward()
    max_grad = max(float(np.max(np.abs(p.grad))) for p in params.values()
                   if p.grad is not None)
    assert max_grad < 1e-12

    w = bundle.actor.head.mean_layer.W
    orig = w.data.copy()

    def f(x):
        w.data = x
        return float(surrogate_objective(bundle.actor, trans, advs, clip=eps).data)

    fd = fd_grad(f, orig, h=1e-7)
    w.data = orig
    assert np.allclose(fd, 0.0, atol=1e-6)
    report(6, f"in-band clipped == unclipped (ratio 1 -> sum A = {unclipped:.3f}); "
              f"saturated clip gradient {max_grad:.1e} ~ 0, FD agrees")


# ---------------------------------------------------------------------------
# 7. Reward replay from the trajectory CSV (exact equality)


def _replay_ring(csv_path, spec):
    steps = {}
    with open(csv_path) as fh:
        assert fh.readline().strip() == "step,vehicle_id,kind,route_pos,speed,accel"
        for line in fh:
            s, vid, kind, pos, speed, accel = line.strip().split(",")
            steps.setdefault(int(s), []).append((kind, float(speed), float(accel)))
    out = {}
    for s, rows in steps.items():
        speeds = np.array([r[1] for r in rows])
        cav_accels = np.array([r[2] for r in rows if r[0] == "cav"])
        out[s] = reward_ring_eight(speeds, cav_accels, spec)
    return out


def _replay_merge(csv_path, vehicles_csv, spec, network, options, idm):
    route_of = {}
    with open(vehicles_csv) as fh:
        assert fh.readline().strip() == "vehicle_id,kind,route_id"
        for line in fh:
            vid, kind, rid = line.strip().split(",")
            route_of[int(vid)] = int(rid)
    steps: dict[int, list] = {}
    with open(csv_path) as fh:
        fh.readline()
        for line in fh:
            s, vid, kind, pos, speed, accel = line.strip().split(",")
            steps.setdefault(int(s), []).append(
                (int(vid), kind, float(pos), float(speed)))
    out = {}
    for s, rows in steps.items():
        state = SimState(network=network, idm=idm, options=options, time_step=s,
                         sim_time=0.0, vehicles=[], rng=np.random.default_rng(0))
        for vid, kind, pos, speed in rows:
            state.vehicles.append(VehicleState(
                id=vid, kind=VehicleKind(kind), route_pos=pos, speed=speed,
                route_id=route_of[vid]))
        speeds = np.array([v.speed for v in state.vehicles])
        leaders = compute_leaders(state)
        headways = []
        for v in state.vehicles:
            if v.kind is not VehicleKind.CAV:
                continue
            _, gap = leaders[v.id]
            if math.isinf(gap) or v.speed <= 0.0:
                headways.append(HEADWAY_CAP)
            else:
                headways.append(min(gap / v.speed, HEADWAY_CAP))
        out[s] = reward_merge(speeds, np.array(headways), spec)
    return out


def test_07_reward_replay(tmp_path):
    # ring: a stochastic-policy episode
    env = EnvSpec(network=RingSpec(230.0), n_human=2, n_cav=4,
                  idm=IdmParams(v0=KMH30, noise_mag=0.2),
                  options=SimOptions(safety_clamp=True), target_speed=KMH30,
                  dt=0.1, reward=RingEightReward(target_speed=KMH30),
                  scheme=GaussianSpeedField(), scan_scale=60.0)
    ppo = PpoConfig(horizon=120, episodes=1, batch_size=1, gamma=0.9)
    bundle = make_policy(NetConfig(hidden=16, heads=2), init_stream(3))
    _, arng = episode_streams(3, 0)
    episode = collect_rollout(bundle, env, ppo, 3, arng, keep_infos=True)
    path = tmp_path / "ring_traj.csv"
    export_trajectory_csv(episode.infos, path)
    replayed = _replay_ring(path, env.reward)
    mismatches = sum(
        1 for tr in episode.transitions if replayed[tr.step_index + 1] != tr.reward)
    assert mismatches == 0

    # merge: IDM traffic with spawned CAVs driven by a random policy
    mspec = MergeSpec(cav_fraction=0.3)
    menv = EnvSpec(network=mspec, n_human=0, n_cav=0,
                   idm=IdmParams(v0=KMH30, noise_mag=0.2),
                   options=SimOptions(safety_clamp=True), target_speed=KMH30,
                   dt=0.1, reward=MergeReward(target_speed=KMH30),
                   scheme=GaussianSpeedField(), scan_scale=60.0)
    mppo = PpoConfig(horizon=300, episodes=1, batch_size=1, gamma=0.9)
    _, arng = episode_streams(4, 0)
    mepisode = collect_rollout(bundle, menv, mppo, 4, arng, keep_infos=True)
    mpath = tmp_path / "merge_traj.csv"
    export_trajectory_csv(mepisode.infos, mpath)
    vpath = tmp_path / "merge_vehicles.csv"
    vpath.write_text("\n".join(vehicle_table_rows(mepisode.infos)) + "\n")
    mreplayed = _replay_merge(mpath, vpath, menv.reward, mspec, menv.options, menv.idm)
    mm = sum(1 for tr in mepisode.transitions
             if mreplayed[tr.step_index + 1] != tr.reward)
    assert mm == 0
    report(7, f"ring: {len(episode.transitions)} rewards replay exactly; "
              f"merge: {len(mepisode.transitions)} rewards replay exactly")


# ---------------------------------------------------------------------------
# 8-9-11. smoke training fixture (shared across criteria)

SMOKE_TARGET = KMH30
SMOKE_SEEDS = (0, 1, 2)


def smoke_env():
    return EnvSpec(network=RingSpec(230.0), n_human=2, n_cav=4,
                   idm=IdmParams(v0=SMOKE_TARGET, noise_mag=0.2),
                   options=SimOptions(safety_clamp=True),
                   target_speed=SMOKE_TARGET, dt=0.1,
                   reward=RingEightReward(target_speed=SMOKE_TARGET),
                   scheme=GaussianSpeedField(), scan_scale=60.0)


def smoke_ppo():
    return PpoConfig(horizon=500, episodes=50, batch_size=2000, epochs=10,
                     minibatch_size=256, gamma=0.9, actor_lr=3e-4, critic_lr=1e-3)


@pytest.fixture(scope="module")
def smoke_runs():
    env, ppo = smoke_env(), smoke_ppo()
    runs = {}
    t0 = time.time()
    for seed in SMOKE_SEEDS:
        runs[(8, seed)] = train(env, ppo, NetConfig(hidden=64, heads=8),
                                master_seed=seed)
    heads8_time = time.time() - t0
    for seed in SMOKE_SEEDS:
        runs[(0, seed)] = train(env, ppo, NetConfig(hidden=64, heads=0),
                                master_seed=seed)
    return runs, heads8_time


def test_08_training_smoke(smoke_runs):
    runs, heads8_time = smoke_runs
    firsts, finals, trained_v, untrained_v = [], [], [], []
    env = smoke_env()
    for seed in SMOKE_SEEDS:
        recs = runs[(8, seed)].records
        rets = [r.episode_return for r in recs]
        firsts.append(float(np.mean(rets[:10])))
        finals.append(float(np.mean(rets[-10:])))
        trained = evaluate(runs[(8, seed)].bundle, env, horizon=500,
                           episodes=1, seeds=[seed])
        fresh = make_policy(NetConfig(hidden=64, heads=8), init_stream(seed))
        untrained = evaluate(fresh, env, horizon=500, episodes=1, seeds=[seed])
        trained_v.append(trained.mean_velocity)
        untrained_v.append(untrained.mean_velocity)
    med_first, med_final = float(np.median(firsts)), float(np.median(finals))
    med_trained, med_untrained = float(np.median(trained_v)), float(np.median(untrained_v))
    assert med_final > med_first
    assert med_trained >= 1.1 * med_untrained
    assert heads8_time < 600.0
    report(8, f"median return first10 {med_first:.0f} -> final10 {med_final:.0f}; "
              f"trained speed {med_trained:.2f} >= 1.1x untrained {med_untrained:.2f}; "
              f"3-seed training {heads8_time:.0f}s < 600s")


def test_09_heads_ablation_direction(smoke_runs):
    runs, _ = smoke_runs
    med8 = float(np.median([np.mean([r.episode_return for r in runs[(8, s)].records][-10:])
                            for s in SMOKE_SEEDS]))
    med0 = float(np.median([np.mean([r.episode_return for r in runs[(0, s)].records][-10:])
                            for s in SMOKE_SEEDS]))
    assert med8 >= med0
    report(9, f"median final-10 return heads=8 ({med8:.0f}) >= heads=0 ({med0:.0f}) "
              f"over 3 matched seeds")


def test_11_decentralized_execution(smoke_runs):
    runs, _ = smoke_runs
    bundle = runs[(8, 0)].bundle
    env = dataclasses.replace(smoke_env(), scan_scale=30.0)
    rep = decentralization_check(bundle, env, seed=0, samples=100, horizon=400)
    assert rep.samples == 100
    assert rep.passed, rep.violations[:5]
    report(11, f"100 sampled states, {rep.checked_agents} agent checks, "
               f"{rep.perturbed_agents} out-of-field perturbations, 0 violations "
               f"(action change < 1e-9)")


# ---------------------------------------------------------------------------
# 10. Determinism of train and eval


def test_10_determinism():
    env = smoke_env()
    ppo = PpoConfig(horizon=80, episodes=3, batch_size=300, epochs=2,
                    minibatch_size=128, gamma=0.9)
    curves = []
    for _ in range(2):
        result = train(env, ppo, NetConfig(hidden=32, heads=4), master_seed=42)
        curves.append("\n".join(result.curve_rows()))
    assert curves[0] == curves[1]

    bundle = make_policy(NetConfig(hidden=32, heads=4), init_stream(42))
    reports = [evaluate(bundle, env, horizon=80, episodes=2, seeds=[1, 2])
               for _ in range(2)]
    a, b = reports
    assert a.episode_return == b.episode_return
    assert a.mean_velocity == b.mean_velocity
    assert a.mean_abs_accel == b.mean_abs_accel
    assert np.array_equal(a.speed_matrix, b.speed_matrix)
    report(10, "train twice: bit-identical learning curves; eval twice: "
               "bit-identical reports")


# ---------------------------------------------------------------------------
# 12. Merge scenario liveness


def test_12_merge_liveness():
    idm = IdmParams(v0=KMH30, noise_mag=0.2)
    spec = MergeSpec()  # default inflows 1000/200 veh/h
    state = build_network(spec, 0, 0, seed=0, idm=idm)
    upstream, downstream = [], []
    exited = 0
    for t in range(600):
        state, info = step(state, {}, 0.1)
        assert not state.collided
        exited += len(info.exited)
        if t >= 400:  # final third
            effs = np.array([merge_effective_pos(spec, v) for v in state.vehicles])
            up = (effs >= spec.merge_point - 50) & (effs < spec.merge_point)
            down = (effs >= 0) & (effs < 100)
            upstream.extend(info.speeds[np.where(up)].tolist())
            downstream.extend(info.speeds[np.where(down)].tolist())
    assert exited > 0
    up_mean, down_mean = float(np.mean(upstream)), float(np.mean(downstream))
    assert up_mean < down_mean
    report(12, f"{exited} vehicles exited; upstream-of-merge mean speed "
               f"{up_mean:.2f} < first-100m mean {down_mean:.2f} (waves form)")
