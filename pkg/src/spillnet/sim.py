"""Deterministic closed-loop containment simulator.

One lockstep tick: scenario/TCP boundary feed -> (optional) model prediction
-> shoreside planning -> lossy/delayed message channel -> vehicle state
machines -> turn-rate-limited kinematics. Identical SimConfig + seed produce
byte-identical event logs.

Coverage is cumulative within a boundary cycle: the fraction of perimeter
sample points that have come within sensing radius of an on-path vehicle
since that cycle's containment began.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import coord, evaluate, features, geo, model as model_mod
from .errors import ConfigError
from .ingest import format_timestamp

VEHICLE_WATCHDOG_MODES = (coord.VehicleMode.STATION_KEEPING,
                          coord.VehicleMode.STARTING_POSITION)


@dataclass
class SimConfig:
    scenario_kind: int = 2
    scenario_seed: int = 7
    fleet_size: int = 4
    vehicle_speed_kmh: float = 24.0
    max_turn_rad: float = 0.5          # per tick
    tick_seconds: float = 10.0
    p_loss: float = 0.0
    delay_ticks: int = 0
    replan_interval_h: float = 3.0
    duration_h: float = 6.0
    sensing_radius_km: float = 0.5
    watchdog_timeout_ticks: int = 360
    heartbeat_ticks: int = 30
    fault_schedule: tuple = ()         # ((tick, vehicle_id), ...)
    predictor: str = "oracle"          # "oracle" or "checkpoint"
    checkpoint_path: str = None
    normalizer_path: str = None
    seed: int = 0
    coverage_sample_km: float = 0.25
    tcp_listen: int = None             # port, 0 for ephemeral; None disables

    def validate(self):
        if not (0.0 <= self.p_loss < 1.0):
            raise ConfigError(f"p_loss {self.p_loss} outside [0, 1)")
        if self.delay_ticks < 0:
            raise ConfigError(f"negative delay {self.delay_ticks}")
        if self.fleet_size < 1:
            raise ConfigError(f"fleet_size {self.fleet_size} < 1")
        if self.tick_seconds <= 0 or self.vehicle_speed_kmh <= 0:
            raise ConfigError("tick_seconds and vehicle_speed_kmh must be positive")
        if self.predictor not in ("oracle", "checkpoint"):
            raise ConfigError(f"unknown predictor {self.predictor!r}")
        if self.predictor == "checkpoint" and not self.checkpoint_path:
            raise ConfigError("checkpoint predictor needs checkpoint_path")


HARD_TURN_RAD = math.pi / 3.0
HARD_TURN_SPEED_FACTOR = 0.25


def vehicle_kinematics(state: coord.VehicleState, target, speed_kmh: float,
                       max_turn: float, dt_h: float) -> coord.VehicleState:
    """Turn toward the target at most max_turn radians, then advance.

    Two refinements keep waypoint capture reliable with a capture radius
    tighter than the turning radius: the step never overshoots the target,
    and the vessel slows through hard turns (residual misalignment beyond
    pi/3) so pursuit contracts instead of settling into an orbit.
    """
    if speed_kmh <= 0:
        raise ValueError(f"speed must be positive, got {speed_kmh}")
    if target is None:
        return state
    x, y = state.position
    bearing = math.atan2(target[1] - y, target[0] - x)
    err = (bearing - state.heading + math.pi) % (2.0 * math.pi) - math.pi
    turn = max(-max_turn, min(max_turn, err))
    heading = state.heading + turn
    residual = abs(err - turn)
    step = speed_kmh * dt_h
    if residual > HARD_TURN_RAD:
        step *= HARD_TURN_SPEED_FACTOR
    step = min(step, math.hypot(target[0] - x, target[1] - y))
    nx = x + step * math.cos(heading)
    ny = y + step * math.sin(heading)
    return replace(state, position=(nx, ny), heading=heading % (2.0 * math.pi))


class Channel:
    """Per-message independent loss and fixed delivery delay."""

    def __init__(self, p_loss: float, delay_ticks: int, rng: np.random.Generator):
        self.p_loss = p_loss
        self.delay = int(delay_ticks)
        self.rng = rng
        self.delivered = 0
        self.dropped = 0

    def offer(self, tick: int):
        """Delivery tick for a message published now, or None if dropped."""
        if self.p_loss > 0.0 and self.rng.random() < self.p_loss:
            self.dropped += 1
            return None
        self.delivered += 1
        return tick + self.delay


def channel_deliver(messages, p_loss: float, d: int, rng: np.random.Generator):
    """Stand-alone channel semantics: survivors keep publication order and
    arrive exactly d ticks after their publish tick."""
    out = []
    for msg in messages:
        if p_loss > 0.0 and rng.random() < p_loss:
            continue
        out.append((msg.tick + d, msg))
    return out


@dataclass
class SimMetrics:
    ticks: int = 0
    time_to_containment: int = None
    coverage_final: float = 0.0
    coverage_max: float = 0.0
    cycles: int = 0
    reassignment_latency: list = field(default_factory=list)
    messages_delivered: int = 0
    messages_dropped: int = 0
    lost_vehicles: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class EventLog:
    def __init__(self):
        self.records = []

    def add(self, tick: int, agent: str, kind: str, payload=None):
        self.records.append({
            "tick": int(tick), "agent": agent, "kind": kind,
            "payload": payload if payload is not None else {},
        })

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records) + "\n"


class _Predictor:
    """Boundary source for planning: ground truth passthrough or a trained
    checkpoint reconstructed into an ellipse outline."""

    def __init__(self, config: SimConfig, observations, env_samples):
        self.config = config
        self.observations = observations
        self.env_samples = env_samples
        self.by_hour = {round((o.timestamp - observations[0].timestamp) / 3600.0): o
                        for o in observations}
        if config.predictor == "checkpoint":
            self.params = model_mod.load_checkpoint(config.checkpoint_path)
            with open(config.normalizer_path) as fh:
                self.normalizer = features.Normalizer.from_dict(json.load(fh))
        else:
            self.params = None

    def boundary_at(self, sim_hour: float, horizon_h: float):
        """Predicted boundary for sim_hour + horizon_h."""
        if self.params is None:
            target = round(sim_hour + horizon_h)
            obs = self.by_hour.get(min(self.by_hour, key=lambda h: abs(h - target)))
            return obs.boundary
        history = [o for o in self.observations
                   if o.timestamp <= self.observations[0].timestamp + sim_hour * 3600.0]
        if len(history) < 2:
            return self.observations[0].boundary
        timed = features.featurize_series(history, self.env_samples,
                                          t0=self.observations[0].timestamp)
        seqs = features.build_sequences(timed, features.SCALE_SHORT)
        window = features.normalize_sequences([seqs[-1]], self.normalizer)[0].window
        pset = model_mod.predict(window, self.params)
        horizon = min(pset.horizons, key=lambda h: abs(h - horizon_h))
        vec = features.denormalize(pset.means[horizon][:features.FEATURE_DIM],
                                   self.normalizer)
        return evaluate.ellipse_from_features(vec)


class Simulation:
    def __init__(self, config: SimConfig, ingress: coord.BoundaryIngress = None):
        config.validate()
        self.config = config
        self.log = EventLog()
        self.metrics = SimMetrics()
        rng = np.random.default_rng(config.seed)
        self.channel = Channel(config.p_loss, config.delay_ticks,
                               np.random.default_rng(int(rng.integers(2**63))))

        horizon_pad = 16
        series = features.generate_scenario(
            config.scenario_kind, config.scenario_seed,
            duration_h=max(48, int(config.duration_h) + horizon_pad), step_h=1)
        self.observations = [o for o, _ in series]
        self.env_samples = [e for _, e in series]
        self.predictor = _Predictor(config, self.observations, self.env_samples)
        self.frame = geo.LocalFrame.for_polygon(self.observations[0].boundary)

        self.bus = coord.MessageBus(delivery_policy=self.channel.offer)
        self.fleet = [f"veh{i+1}" for i in range(config.fleet_size)]
        self.shoreside = coord.ShoresideState(fleet=list(self.fleet),
                                              heartbeat_ticks=config.heartbeat_ticks)
        self.bus.register("shoreside", coord.shoreside_subscriptions(self.fleet))
        self.bus.register("forecaster", [])

        first_xy = self.frame.project_ring(self.observations[0].boundary.exterior)
        cx = float(np.mean([p[0] for p in first_xy]))
        cy = float(np.mean([p[1] for p in first_xy]))
        radius = max(math.hypot(px - cx, py - cy) for px, py in first_xy)
        self.vehicles = {}
        self.alive = {}
        self.last_contact = {}
        for i, vid in enumerate(self.fleet):
            angle = 2.0 * math.pi * i / config.fleet_size + 0.3
            pos = (cx + 1.8 * radius * math.cos(angle) + rng.uniform(-0.2, 0.2),
                   cy + 1.8 * radius * math.sin(angle) + rng.uniform(-0.2, 0.2))
            self.vehicles[vid] = coord.VehicleState(id=vid, position=pos, home=pos)
            self.alive[vid] = True
            self.last_contact[vid] = 0
            self.bus.register(vid, coord.vehicle_subscriptions(vid))

        self.ingress = ingress
        self.faults = {int(t): vid for t, vid in config.fault_schedule}
        self.dt_h = config.tick_seconds / 3600.0
        self.replan_ticks = max(1, int(round(config.replan_interval_h * 3600.0
                                             / config.tick_seconds)))
        self.total_ticks = int(round(config.duration_h * 3600.0 / config.tick_seconds))
        self._coverage_pts = None
        self._covered = None
        self._contain_cycle_logged = set()
        self._pending_fault_tick = None

    # -- helpers ------------------------------------------------------------

    def _publish_reliable(self, agent: str, key: str, value: str):
        """Forecaster-to-shoreside traffic rides the TCP link, not the lossy
        vehicle medium; deliver it unconditionally this tick."""
        self.bus.publish(agent, key, value, visible_tick=self.bus.tick)

    def _boundary_value(self, polygon: geo.GeoPolygon, spill_id: str, ts: float) -> str:
        return json.dumps({
            "type": coord.KEY_BOUNDARY_UPDATE,
            "spill_id": spill_id,
            "exterior": [[lon, lat] for lon, lat in polygon.exterior],
            "timestamp_utc": format_timestamp(ts),
        }, sort_keys=True)

    def _reset_coverage(self, boundary_xy):
        walk = coord._PerimeterWalk(boundary_xy)
        count = max(8, int(walk.total / self.config.coverage_sample_km))
        self._coverage_pts = np.array(
            [walk.point_at(walk.total * k / count) for k in range(count)])
        self._covered = np.zeros(count, dtype=bool)

    def coverage(self) -> float:
        if self._covered is None:
            return 0.0
        return float(np.count_nonzero(self._covered)) / len(self._covered)

    # -- main loop ------------------------------------------------------------

    def step(self):
        tick = self.bus.tick
        cfg = self.config

        # scheduled boundary feed (scenario) and/or TCP ingress
        if self.ingress is not None:
            for spill_id, poly, ts_text in self.ingress.drain():
                self._publish_reliable("forecaster", coord.KEY_BOUNDARY_UPDATE,
                                       self._boundary_value(poly, spill_id, self.bus.tick))
                self.log.add(tick, "forecaster", "boundary_ingress",
                             {"spill_id": spill_id})
        if self.ingress is None and tick % self.replan_ticks == 0:
            sim_hour = tick * cfg.tick_seconds / 3600.0
            boundary = self.predictor.boundary_at(sim_hour, cfg.replan_interval_h)
            obs0 = self.observations[0]
            self._publish_reliable("forecaster", coord.KEY_BOUNDARY_UPDATE,
                                   self._boundary_value(boundary, obs0.spill_id,
                                                        obs0.timestamp + sim_hour * 3600.0))
            self.log.add(tick, "forecaster", "boundary_update",
                         {"sim_hour": sim_hour})

        # fault injection
        if tick in self.faults:
            vid = self.faults[tick]
            if self.alive.get(vid):
                self.alive[vid] = False
                self.metrics.lost_vehicles.append(vid)
                self._pending_fault_tick = tick
                self.log.add(tick, vid, "fault", {"dropped": True})

        prev_cycle = self.shoreside.cycle
        prev_phase = self.shoreside.phase
        coord.shoreside_step(self.shoreside, self.bus, "shoreside", frame=self.frame)
        watchdog(self.shoreside, self.bus, cfg.watchdog_timeout_ticks, self.log)
        if self.shoreside.cycle != prev_cycle:
            self.metrics.cycles = self.shoreside.cycle
            self.log.add(tick, "shoreside", "cycle_start",
                         {"cycle": self.shoreside.cycle})
            if self.shoreside.boundary_xy:
                self._reset_coverage(self.shoreside.boundary_xy)
        if self.shoreside.phase != prev_phase:
            self.log.add(tick, "shoreside", "phase",
                         {"phase": self.shoreside.phase.value,
                          "cycle": self.shoreside.cycle})
            if (self.shoreside.phase == coord.Phase.CONTAIN
                    and self._pending_fault_tick is not None):
                self.metrics.reassignment_latency.append(tick - self._pending_fault_tick)
                self._pending_fault_tick = None

        # vehicles
        any_live_waiting = False
        for vid in self.fleet:
            if not self.alive[vid]:
                continue
            state = self.vehicles[vid]
            inbox = self.bus.fetch(vid)
            if inbox:
                self.last_contact[vid] = tick
            new_state, outbox = coord.fsm_step(state, inbox, state.position)
            if new_state.mode != state.mode:
                self.log.add(tick, vid, "mode", {"mode": new_state.mode.value})
            if (new_state.mode in VEHICLE_WATCHDOG_MODES
                    and tick - self.last_contact[vid] > cfg.watchdog_timeout_ticks):
                new_state = replace(new_state, mode=coord.VehicleMode.RETURNING,
                                    waypoints=(new_state.home,), loop_flag=False)
                self.log.add(tick, vid, "self_return", {"reason": "shoreside silent"})
            for key, value in outbox:
                self.bus.publish(vid, key, value)
            new_state = vehicle_kinematics(new_state, new_state.current_target(),
                                           cfg.vehicle_speed_kmh, cfg.max_turn_rad,
                                           self.dt_h)
            self.vehicles[vid] = new_state
            if new_state.mode in VEHICLE_WATCHDOG_MODES:
                any_live_waiting = True

        # metrics
        live = [v for v in self.fleet if self.alive[v]]
        on_path = [v for v in live
                   if self.vehicles[v].mode == coord.VehicleMode.OIL_PATH]
        if live and len(on_path) == len(live) and self.metrics.time_to_containment is None:
            self.metrics.time_to_containment = tick
            self.log.add(tick, "sim", "contained", {"tick": tick})
        if self._covered is not None and on_path:
            pos = np.array([self.vehicles[v].position for v in on_path])
            d2 = ((self._coverage_pts[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
            self._covered |= (d2 <= cfg.sensing_radius_km ** 2).any(axis=1)
            cov = self.coverage()
            self.metrics.coverage_max = max(self.metrics.coverage_max, cov)

        self.bus.advance()
        self.metrics.ticks = self.bus.tick

    def run(self):
        for _ in range(self.total_ticks):
            self.step()
        self.metrics.coverage_final = self.coverage()
        self.metrics.messages_delivered = self.channel.delivered
        self.metrics.messages_dropped = self.channel.dropped
        self.log.add(self.bus.tick, "sim", "end", {
            "coverage": self.metrics.coverage_final,
            "contained_tick": self.metrics.time_to_containment,
        })
        return self.log, self.metrics

    def trajectories_geojson(self) -> str:
        feats = []
        for vid, state in self.vehicles.items():
            lon, lat = self.frame.to_lonlat(*state.position)
            feats.append({
                "type": "Feature",
                "properties": {"vehicle": vid, "mode": state.mode.value},
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
            })
        return json.dumps({"type": "FeatureCollection", "features": feats})


def watchdog(ss: coord.ShoresideState, bus: coord.MessageBus, timeout_ticks: int,
             log: EventLog = None):
    """Mark vehicles silent past the timeout as lost and replan over the
    survivors; log CRITICAL and idle when nobody is left."""
    if timeout_ticks <= 0:
        raise ValueError("timeout must be positive")
    newly_lost = []
    for vid in ss.live_fleet():
        last = ss.last_nav_tick.get(vid)
        if last is None:
            ss.last_nav_tick[vid] = bus.tick  # grace period from first sight
        elif bus.tick - last >= timeout_ticks:
            ss.lost.add(vid)
            newly_lost.append(vid)
    if newly_lost:
        if log is not None:
            for vid in newly_lost:
                log.add(bus.tick, "shoreside", "lost", {"vehicle": vid})
        if not ss.live_fleet():
            ss.phase = coord.Phase.IDLE
            if log is not None:
                log.add(bus.tick, "shoreside", "critical",
                        {"reason": "all vehicles lost"})
        else:
            coord.replan_over_survivors(ss, bus)
            if log is not None:
                log.add(bus.tick, "shoreside", "replan",
                        {"survivors": ss.live_fleet()})
    return newly_lost


def run_simulation(config: SimConfig):
    """Build and run a simulation; returns (EventLog, SimMetrics)."""
    ingress = None
    if config.tcp_listen is not None:
        ingress = coord.BoundaryIngress(port=config.tcp_listen)
    sim = Simulation(config, ingress=ingress)
    try:
        return sim.run()
    finally:
        if ingress is not None:
            ingress.close()
