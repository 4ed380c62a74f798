"""Microscopic mixed-autonomy traffic simulator.

Human drivers follow the IDM with additive acceleration noise; CAVs apply
externally commanded accelerations clamped to their actuation bounds.
Kinematics are forward-Euler with a speed floor at zero. All randomness
flows through the per-state numpy Generator, so identical (spec, seed,
action sequence) produce bit-identical trajectories.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityExceeded, InvalidSpec, UnknownVehicle
from .idm import IdmParams, accel_from_speed
from .networks import FigureEightSpec, MergeSpec, RingSpec, RoadNetwork

# Gap fed to the IDM when a (virtual) leader sits numerically on top of the
# ego vehicle; keeps the braking demand finite.
_MIN_VIRTUAL_GAP = 1e-2

HEADWAY_CAP = 100.0


class VehicleKind(str, enum.Enum):
    HUMAN = "human"
    CAV = "cav"


@dataclass
class VehicleState:
    id: int
    kind: VehicleKind
    route_pos: float
    speed: float
    last_accel: float = 0.0
    route_id: int = 0


@dataclass(frozen=True)
class SimOptions:
    """Actuation and behavioral constants not owned by the IDM."""

    cav_accel_min: float = -3.0
    cav_accel_max: float = 3.0
    vehicle_length: float = 5.0
    noise_dist: str = "uniform"  # "uniform" or "gaussian"
    human_decel_limit: float = 8.0
    # Optional training aid: cap CAV acceleration at the IDM interaction
    # (braking) term w.r.t. the physical leader. Off by default.
    safety_clamp: bool = False
    # Merge-specific: lookahead for yield checks at the ramp end, and the
    # time headway the highway follower must be granted before merging.
    merge_yield_window: float = 30.0
    merge_yield_headway: float = 2.0
    spawn_lookahead: float = 50.0

    def validate(self) -> None:
        if self.cav_accel_min >= 0 or self.cav_accel_max <= 0:
            raise InvalidSpec("CAV accel bounds must straddle zero")
        if self.vehicle_length <= 0:
            raise InvalidSpec("vehicle_length must be positive")
        if self.noise_dist not in ("uniform", "gaussian"):
            raise InvalidSpec(f"unknown noise_dist {self.noise_dist!r}")


@dataclass
class StepInfo:
    """Post-step snapshot: kinematics after the Euler update, accels as applied.

    `accels` are the accelerations handed to the integrator (post actuation
    clamp); when the speed floor at 0 engages, the realized dv/dt is smaller
    in magnitude than the recorded value.
    """

    time_step: int
    vehicle_ids: list[int]
    kinds: list[VehicleKind]
    route_ids: list[int]
    positions: np.ndarray
    speeds: np.ndarray
    accels: np.ndarray
    cav_ids: list[int]
    cav_time_headways: np.ndarray  # aligned to cav_ids, capped at HEADWAY_CAP
    collided: bool
    spawned: list[int] = field(default_factory=list)
    exited: list[int] = field(default_factory=list)

    @property
    def cav_accels(self) -> np.ndarray:
        index = {vid: i for i, vid in enumerate(self.vehicle_ids)}
        return self.accels[[index[c] for c in self.cav_ids]]


@dataclass
class SimState:
    network: RoadNetwork
    idm: IdmParams
    options: SimOptions
    time_step: int
    sim_time: float
    vehicles: list[VehicleState]
    rng: np.random.Generator
    collided: bool = False
    # merge spawn bookkeeping
    next_id: int = 0
    next_due_main: float = 0.0
    next_due_ramp: float = 0.0
    pending_main: int = 0
    pending_ramp: int = 0
    total_exited: int = 0

    def cavs(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.kind is VehicleKind.CAV]

    def find(self, vehicle_id: int) -> VehicleState:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise UnknownVehicle(f"vehicle id {vehicle_id} not in network")


# ---------------------------------------------------------------------------
# Geometry


def route_length(state: SimState, route_id: int) -> float:
    net = state.network
    if isinstance(net, RingSpec):
        return net.length
    if isinstance(net, FigureEightSpec):
        return net.loop_length(route_id)
    if route_id == 0:
        return net.highway_length
    return net.ramp_route_length()


def is_closed(network: RoadNetwork) -> bool:
    return not isinstance(network, MergeSpec)


def merge_effective_pos(net: MergeSpec, v: VehicleState) -> float:
    """Project a merge vehicle onto the common highway axis.

    The ramp maps onto a virtual lane running parallel to the highway and
    coinciding with it from the merge point on.
    """
    if v.route_id == 0:
        return v.route_pos
    return net.merge_point - net.ramp_length + v.route_pos


def merge_lane(net: MergeSpec, v: VehicleState) -> str:
    if v.route_id == 1 and v.route_pos < net.ramp_length:
        return "ramp"
    return "main"


def _wrap_signed(delta: float, length: float) -> float:
    """Wrap a position difference to (-length/2, length/2]."""
    d = delta % length
    if d > length / 2.0:
        d -= length
    return d


def _dist_to_zone_mid(net: FigureEightSpec, v: VehicleState) -> float:
    lo, hi = net.conflict_zone[v.route_id]
    mid = 0.5 * (lo + hi)
    return abs(_wrap_signed(mid - v.route_pos, net.loop_length(v.route_id)))


def signed_route_distance(state: SimState, va: VehicleState, vb: VehicleState) -> float:
    """Signed shortest route distance x_a - x_b.

    Same closed route: difference wrapped to the shorter way around.
    Figure-eight cross-loop: the path runs through the shared conflict zone,
    so proximity to the zone stands in for position (the vehicle closer to
    the zone counts as ahead). Merge: difference of effective positions.
    """
    net = state.network
    if isinstance(net, MergeSpec):
        return merge_effective_pos(net, va) - merge_effective_pos(net, vb)
    if va.route_id == vb.route_id:
        return _wrap_signed(va.route_pos - vb.route_pos, route_length(state, va.route_id))
    return _dist_to_zone_mid(net, vb) - _dist_to_zone_mid(net, va)


def route_distance(state: SimState, va: VehicleState, vb: VehicleState) -> float:
    net = state.network
    if isinstance(net, FigureEightSpec) and va.route_id != vb.route_id:
        return _dist_to_zone_mid(net, va) + _dist_to_zone_mid(net, vb)
    return abs(signed_route_distance(state, va, vb))


# ---------------------------------------------------------------------------
# Leader lookup

Leader = tuple[VehicleState | None, float]


def compute_leaders(state: SimState) -> dict[int, Leader]:
    """Physical leader and bumper-to-bumper gap for every vehicle, one pass."""
    net = state.network
    length = state.options.vehicle_length
    out: dict[int, Leader] = {}

    if isinstance(net, MergeSpec):
        order = sorted(state.vehicles, key=lambda v: (merge_effective_pos(net, v), v.id))
        effs = [merge_effective_pos(net, v) for v in order]
        lanes = [merge_lane(net, v) for v in order]
        n = len(order)
        for i, v in enumerate(order):
            lead = None
            for j in range(i + 1, n):
                # main traffic has priority and ignores the on-ramp lane;
                # ramp traffic yields, following the projection of any lane
                if lanes[i] == "main" and lanes[j] != "main":
                    continue
                lead = order[j]
                out[v.id] = (lead, effs[j] - effs[i] - length)
                break
            if lead is None:
                out[v.id] = (None, math.inf)
        return out

    routes = {0} if isinstance(net, RingSpec) else {0, 1}
    for rid in routes:
        cars = sorted((v for v in state.vehicles if v.route_id == rid),
                      key=lambda v: (v.route_pos, v.id))
        n = len(cars)
        if n == 0:
            continue
        if n == 1:
            out[cars[0].id] = (None, math.inf)
            continue
        L = route_length(state, rid)
        for i, v in enumerate(cars):
            lead = cars[(i + 1) % n]
            gap = (lead.route_pos - v.route_pos) % L - length
            out[v.id] = (lead, gap)
    return out


def leader_of(state: SimState, v: VehicleState) -> Leader:
    return compute_leaders(state)[v.id]


def _figure_eight_yield_accel(state: SimState, v: VehicleState) -> float | None:
    """IDM braking demand against crossing traffic at the conflict zone.

    A vehicle approaching within the yield window gives way to any crossing
    vehicle that is inside the zone, or approaching and closer to it (ties
    go to loop 0). Vehicles already inside the zone never yield.
    """
    net = state.network
    lo, hi = net.conflict_zone[v.route_id]
    if lo <= v.route_pos < hi:
        return None
    L = route_length(state, v.route_id)
    dz = (lo - v.route_pos) % L
    if dz > net.yield_window:
        return None
    other_route = 1 - v.route_id
    olo, ohi = net.conflict_zone[other_route]
    oL = route_length(state, other_route)
    must_yield = False
    for w in state.vehicles:
        if w.route_id != other_route:
            continue
        if olo <= w.route_pos < ohi:
            must_yield = True
            break
        odz = (olo - w.route_pos) % oL
        if odz <= net.yield_window and (odz < dz or (odz == dz and other_route < v.route_id)):
            must_yield = True
            break
    if not must_yield:
        return None
    return accel_from_speed(v.speed, max(dz, _MIN_VIRTUAL_GAP), 0.0, state.idm)


def _merge_yield_accel(state: SimState, v: VehicleState) -> float | None:
    """Gap acceptance at the ramp end: stop at the merge if the slot is unsafe."""
    net = state.network
    if merge_lane(net, v) != "ramp":
        return None
    dist_to_end = net.ramp_length - v.route_pos
    if dist_to_end > state.options.merge_yield_window:
        return None
    eff = merge_effective_pos(net, v)
    idm = state.idm
    follower: VehicleState | None = None
    follower_eff = -math.inf
    for w in state.vehicles:
        if w.id == v.id or merge_lane(net, w) != "main":
            continue
        w_eff = merge_effective_pos(net, w)
        if w_eff <= eff and w_eff > follower_eff:
            follower, follower_eff = w, w_eff
    if follower is None:
        return None
    rear_gap = eff - follower_eff - state.options.vehicle_length
    if rear_gap >= idm.s0 + follower.speed * state.options.merge_yield_headway:
        return None
    return accel_from_speed(v.speed, max(dist_to_end, _MIN_VIRTUAL_GAP), 0.0, idm)


def human_accel(state: SimState, v: VehicleState, leader: Leader | None = None) -> float:
    """Deterministic IDM acceleration for a human driver, incl. yield rules."""
    lead, gap = leader if leader is not None else leader_of(state, v)
    if lead is None:
        a = accel_from_speed(v.speed, 1e9, v.speed, state.idm)
    else:
        a = accel_from_speed(v.speed, max(gap, _MIN_VIRTUAL_GAP), lead.speed, state.idm)
    net = state.network
    if isinstance(net, FigureEightSpec):
        ya = _figure_eight_yield_accel(state, v)
        if ya is not None:
            a = min(a, ya)
    elif isinstance(net, MergeSpec):
        ya = _merge_yield_accel(state, v)
        if ya is not None:
            a = min(a, ya)
    return max(a, -state.options.human_decel_limit)


def _interaction_brake(state: SimState, v: VehicleState, leader: Leader) -> float:
    """IDM braking bound w.r.t. the physical leader, with no free-road term.

    Used by the optional safety clamp: the CAV may accelerate freely but not
    harder than an IDM driver that ignores its desired-speed preference.
    """
    lead, gap = leader
    if lead is None:
        return math.inf
    p = state.idm
    dv = v.speed - lead.speed
    s_star = p.s0 + max(0.0, v.speed * p.T + v.speed * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    return p.a_max * (1.0 - (s_star / max(gap, _MIN_VIRTUAL_GAP)) ** 2)


# ---------------------------------------------------------------------------
# Construction


def build_network(spec: RoadNetwork, n_human: int, n_cav: int, seed: int,
                  idm: IdmParams | None = None,
                  options: SimOptions | None = None) -> SimState:
    """Initial SimState for a scenario.

    Closed networks place n_human + n_cav vehicles at uniform spacing with
    zero speed; CAV slots are drawn without replacement from the seeded
    generator. Merge networks start empty and spawn from the inflow schedule
    (vehicle counts must be zero).
    """
    spec.validate()
    idm = idm if idm is not None else IdmParams()
    options = options if options is not None else SimOptions()
    idm.validate()
    options.validate()
    if n_human < 0 or n_cav < 0:
        raise InvalidSpec("vehicle counts must be >= 0")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed)
    state = SimState(network=spec, idm=idm, options=options, time_step=0,
                     sim_time=0.0, vehicles=[], rng=rng)

    if isinstance(spec, MergeSpec):
        if n_human or n_cav:
            raise InvalidSpec("merge networks start empty; set vehicle counts to 0")
        return state

    total = n_human + n_cav
    if total < 1:
        raise InvalidSpec("closed networks need at least one vehicle")
    cav_slots = set(rng.choice(total, size=n_cav, replace=False).tolist()) if n_cav else set()
    min_spacing = options.vehicle_length + idm.s0

    if isinstance(spec, RingSpec):
        spacing = spec.length / total
        if spacing <= min_spacing:
            raise CapacityExceeded(
                f"{total} vehicles at spacing {spacing:.2f} m cannot keep "
                f"positive gaps above the jam distance on a {spec.length} m ring")
        for i in range(total):
            kind = VehicleKind.CAV if i in cav_slots else VehicleKind.HUMAN
            state.vehicles.append(VehicleState(
                id=i, kind=kind, route_pos=i * spacing, speed=0.0, route_id=0))
    else:  # figure eight: alternate loops by index, uniform per loop
        counts = [0, 0]
        for i in range(total):
            counts[i % 2] += 1
        for rid in (0, 1):
            if counts[rid] and spec.loop_length(rid) / counts[rid] <= min_spacing:
                raise CapacityExceeded(
                    f"loop {rid}: spacing below the jam distance for {counts[rid]} vehicles")
        placed = [0, 0]
        for i in range(total):
            rid = i % 2
            L = spec.loop_length(rid)
            spacing = L / counts[rid]
            zone_end = spec.conflict_zone[rid][1]
            pos = (zone_end + (placed[rid] + 0.5 * rid) * spacing) % L
            placed[rid] += 1
            kind = VehicleKind.CAV if i in cav_slots else VehicleKind.HUMAN
            state.vehicles.append(VehicleState(
                id=i, kind=kind, route_pos=pos, speed=0.0, route_id=rid))
        if detect_collision(state):
            raise InvalidSpec("initial figure-eight placement conflicts in the zone")

    state.next_id = total
    return state


# ---------------------------------------------------------------------------
# Collision detection


def detect_collision(state: SimState) -> bool:
    """True iff any bumper gap is non-positive or a conflict zone is double-occupied."""
    net = state.network
    length = state.options.vehicle_length

    if isinstance(net, MergeSpec):
        for lane in ("main", "ramp"):
            effs = sorted(merge_effective_pos(net, v) for v in state.vehicles
                          if merge_lane(net, v) == lane)
            for a, b in zip(effs, effs[1:]):
                if b - a - length <= 0:
                    return True
        # shared pavement just past the merge point: cross-origin overlap there
        # is a conflict even before the ordinary lane gap check would order them
        z = net.conflict_zone_length
        lo, hi = net.merge_point, net.merge_point + z
        in_zone = [(merge_effective_pos(net, v), v.route_id) for v in state.vehicles
                   if merge_lane(net, v) == "main"
                   and lo <= merge_effective_pos(net, v) <= hi]
        for ea, ra in in_zone:
            for eb, rb in in_zone:
                if ra == 1 and rb == 0 and abs(ea - eb) < length:
                    return True
        return False

    for rid in ({0} if isinstance(net, RingSpec) else {0, 1}):
        cars = sorted((v for v in state.vehicles if v.route_id == rid),
                      key=lambda v: (v.route_pos, v.id))
        n = len(cars)
        if n < 2:
            continue
        L = route_length(state, rid)
        for i in range(n):
            lead = cars[(i + 1) % n]
            if (lead.route_pos - cars[i].route_pos) % L - length <= 0:
                return True

    if isinstance(net, FigureEightSpec):
        occupied = [False, False]
        for v in state.vehicles:
            lo, hi = net.conflict_zone[v.route_id]
            if lo <= v.route_pos < hi:
                occupied[v.route_id] = True
        if occupied[0] and occupied[1]:
            return True
    return False


# ---------------------------------------------------------------------------
# Stepping


def _draw_noise(state: SimState) -> float:
    mag = state.idm.noise_mag
    if mag == 0.0:
        return 0.0
    if state.options.noise_dist == "uniform":
        return float(state.rng.uniform(-mag, mag))
    return float(state.rng.normal(0.0, mag))


def _maybe_spawn(state: SimState, spawned: list[int]) -> None:
    net = state.network
    opts = state.options
    for lane, inflow in (("main", net.inflow_main), ("ramp", net.inflow_ramp)):
        if inflow <= 0:
            continue
        interval = 3600.0 / inflow
        if lane == "main":
            while state.sim_time >= state.next_due_main:
                state.pending_main += 1
                state.next_due_main += interval
            pending = state.pending_main
        else:
            while state.sim_time >= state.next_due_ramp:
                state.pending_ramp += 1
                state.next_due_ramp += interval
            pending = state.pending_ramp
        if pending == 0:
            continue
        route_id = 0 if lane == "main" else 1
        near_entry = [v for v in state.vehicles
                      if v.route_id == route_id and v.route_pos < opts.spawn_lookahead]
        leader = min(near_entry, key=lambda v: v.route_pos) if near_entry else None
        if leader is not None and leader.route_pos - opts.vehicle_length <= state.idm.s0:
            continue  # entry blocked, keep the arrival queued
        speed = state.idm.v0 if leader is None else min(state.idm.v0, leader.speed)
        kind = VehicleKind.CAV if state.rng.random() < net.cav_fraction else VehicleKind.HUMAN
        v = VehicleState(id=state.next_id, kind=kind, route_pos=0.0,
                         speed=speed, route_id=route_id)
        state.next_id += 1
        state.vehicles.append(v)
        spawned.append(v.id)
        if lane == "main":
            state.pending_main -= 1
        else:
            state.pending_ramp -= 1


def step(state: SimState, cav_actions: dict[int, float], dt: float) -> tuple[SimState, StepInfo]:
    """Advance one time step in place; returns the state and a snapshot.

    Humans receive IDM + noise; CAVs their commanded acceleration clamped to
    the actuation bounds (plus the optional safety clamp).
    """
    if dt <= 0:
        raise InvalidSpec("dt must be positive")
    opts = state.options
    live_cavs = {v.id for v in state.vehicles if v.kind is VehicleKind.CAV}
    missing = live_cavs - set(cav_actions)
    if missing:
        raise InvalidSpec(f"missing actions for CAVs {sorted(missing)}")
    unknown = set(cav_actions) - live_cavs
    if unknown:
        raise UnknownVehicle(f"actions for non-CAV ids {sorted(unknown)}")

    leaders = compute_leaders(state)
    accels: dict[int, float] = {}
    for v in state.vehicles:  # fixed order keeps the noise stream deterministic
        if v.kind is VehicleKind.CAV:
            a = float(np.clip(cav_actions[v.id], opts.cav_accel_min, opts.cav_accel_max))
            if opts.safety_clamp:
                a = min(a, _interaction_brake(state, v, leaders[v.id]))
                a = max(a, -opts.human_decel_limit)
        else:
            a = human_accel(state, v, leaders[v.id]) + _draw_noise(state)
            a = max(a, -opts.human_decel_limit)
        accels[v.id] = a

    for v in state.vehicles:
        a = accels[v.id]
        v.speed = max(0.0, v.speed + a * dt)
        v.route_pos += v.speed * dt
        v.last_accel = a
        if is_closed(state.network):
            v.route_pos %= route_length(state, v.route_id)

    state.time_step += 1
    state.sim_time += dt

    spawned: list[int] = []
    exited: list[int] = []
    if isinstance(state.network, MergeSpec):
        keep = []
        for v in state.vehicles:
            if v.route_pos >= route_length(state, v.route_id):
                exited.append(v.id)
                state.total_exited += 1
            else:
                keep.append(v)
        state.vehicles = keep
        _maybe_spawn(state, spawned)

    if detect_collision(state):
        state.collided = True

    return state, _snapshot(state, spawned, exited)


def _snapshot(state: SimState, spawned: list[int], exited: list[int]) -> StepInfo:
    cav_ids = [v.id for v in state.vehicles if v.kind is VehicleKind.CAV]
    leaders = compute_leaders(state) if cav_ids else {}
    headways = []
    for cid in cav_ids:
        v = state.find(cid)
        _, gap = leaders[cid]
        if math.isinf(gap) or v.speed <= 0.0:
            headways.append(HEADWAY_CAP)
        else:
            headways.append(min(gap / v.speed, HEADWAY_CAP))
    return StepInfo(
        time_step=state.time_step,
        vehicle_ids=[v.id for v in state.vehicles],
        kinds=[v.kind for v in state.vehicles],
        route_ids=[v.route_id for v in state.vehicles],
        positions=np.array([v.route_pos for v in state.vehicles]),
        speeds=np.array([v.speed for v in state.vehicles]),
        accels=np.array([v.last_accel for v in state.vehicles]),
        cav_ids=cav_ids,
        cav_time_headways=np.array(headways),
        collided=state.collided,
        spawned=spawned,
        exited=exited,
    )


# ---------------------------------------------------------------------------
# Observations


OBS_DIM = 6
_SENTINEL_REL_SPEED = 0.0
_SENTINEL_GAP = 1.0


def local_observation(state: SimState, cav_id: int, target_speed: float,
                      scan_scale: float | None = None) -> np.ndarray:
    """Per-agent feature vector.

    [own speed, own position, leader-CAV rel speed, leader-CAV distance,
     follower-CAV rel speed, follower-CAV distance]; speeds are normalized
    by the target speed, distances (center-to-center along the route) by
    the ego route length. The scan scale is the sensing range: CAV
    neighbors beyond it (or missing entirely) take the sentinel (0, 1.0).
    """
    ego = state.find(cav_id)
    if ego.kind is not VehicleKind.CAV:
        raise UnknownVehicle(f"vehicle {cav_id} is not a CAV")
    L = route_length(state, ego.route_id)
    obs = np.empty(OBS_DIM)
    obs[0] = ego.speed / target_speed
    obs[1] = ego.route_pos / L

    leader, follower = cav_neighbors(state, ego, scan_scale)
    for slot, nb, ahead in ((2, leader, True), (4, follower, False)):
        if nb is None:
            obs[slot] = _SENTINEL_REL_SPEED
            obs[slot + 1] = _SENTINEL_GAP
        else:
            if isinstance(state.network, MergeSpec):
                dist = abs(merge_effective_pos(state.network, nb)
                           - merge_effective_pos(state.network, ego))
            elif ahead:
                dist = (nb.route_pos - ego.route_pos) % L
            else:
                dist = (ego.route_pos - nb.route_pos) % L
            obs[slot] = (nb.speed - ego.speed) / target_speed
            obs[slot + 1] = dist / L
    return obs


def cav_neighbors(state: SimState, ego: VehicleState,
                  scan_scale: float | None = None) -> tuple[VehicleState | None, VehicleState | None]:
    """Nearest CAV ahead and behind the ego along its driving path.

    With a scan scale, neighbors farther than it are out of sensing range
    and reported as missing.
    """
    limit = math.inf if scan_scale is None else scan_scale
    net = state.network
    if isinstance(net, MergeSpec):
        eff = merge_effective_pos(net, ego)
        others = [(merge_effective_pos(net, w), w) for w in state.vehicles
                  if w.kind is VehicleKind.CAV and w.id != ego.id]
        ahead = [(e - eff, w) for e, w in others if e > eff and e - eff <= limit]
        behind = [(eff - e, w) for e, w in others if e <= eff and eff - e <= limit]
        leader = min(ahead, key=lambda t: t[0])[1] if ahead else None
        follower = min(behind, key=lambda t: t[0])[1] if behind else None
        return leader, follower

    mates = [w for w in state.vehicles
             if w.kind is VehicleKind.CAV and w.route_id == ego.route_id and w.id != ego.id]
    if not mates:
        return None, None
    L = route_length(state, ego.route_id)
    ahead_d = {w.id: (w.route_pos - ego.route_pos) % L for w in mates}
    behind_d = {w.id: (ego.route_pos - w.route_pos) % L for w in mates}
    leader = min(mates, key=lambda w: ahead_d[w.id])
    follower = min(mates, key=lambda w: behind_d[w.id])
    if ahead_d[leader.id] > limit:
        leader = None
    if behind_d[follower.id] > limit:
        follower = None
    return leader, follower


# ---------------------------------------------------------------------------
# Trajectory export

TRAJECTORY_HEADER = "step,vehicle_id,kind,route_pos,speed,accel"
VEHICLE_TABLE_HEADER = "vehicle_id,kind,route_id"


def trajectory_rows(infos: list[StepInfo]) -> list[str]:
    rows = [TRAJECTORY_HEADER]
    for info in infos:
        for i, vid in enumerate(info.vehicle_ids):
            rows.append(f"{info.time_step},{vid},{info.kinds[i].value},"
                        f"{float(info.positions[i])!r},{float(info.speeds[i])!r},"
                        f"{float(info.accels[i])!r}")
    return rows


def export_trajectory_csv(infos: list[StepInfo], path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(trajectory_rows(infos)) + "\n")


def vehicle_table_rows(infos: list[StepInfo]) -> list[str]:
    """Auxiliary id -> (kind, route) table; open networks need it for replay."""
    seen: dict[int, tuple[str, int]] = {}
    for info in infos:
        for i, vid in enumerate(info.vehicle_ids):
            seen.setdefault(vid, (info.kinds[i].value, info.route_ids[i]))
    rows = [VEHICLE_TABLE_HEADER]
    rows.extend(f"{vid},{kind},{rid}" for vid, (kind, rid) in sorted(seen.items()))
    return rows
