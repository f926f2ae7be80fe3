import json
import math
import socket
import time

import numpy as np
import pytest

from spillnet import coord, sim
from spillnet.coord import VehicleMode
from spillnet.errors import ConfigError


def fast_config(**kw):
    """Small boundary + quick ticks so transits finish in a few hundred steps."""
    defaults = dict(scenario_kind=2, scenario_seed=7, fleet_size=4,
                    vehicle_speed_kmh=40.0, tick_seconds=30.0,
                    replan_interval_h=3.0, duration_h=3.0,
                    heartbeat_ticks=10, watchdog_timeout_ticks=60,
                    seed=1)
    defaults.update(kw)
    return sim.SimConfig(**defaults)


class TestKinematics:
    def test_straight_advance_when_aligned(self):
        state = coord.VehicleState(id="v", position=(0.0, 0.0), heading=0.0)
        out = sim.vehicle_kinematics(state, (10.0, 0.0), speed_kmh=20.0,
                                     max_turn=0.5, dt_h=0.1)
        assert out.position == pytest.approx((2.0, 0.0))

    def test_instant_reversal_with_pi_turn(self):
        state = coord.VehicleState(id="v", position=(0.0, 0.0), heading=0.0)
        out = sim.vehicle_kinematics(state, (-10.0, 0.0), speed_kmh=20.0,
                                     max_turn=math.pi, dt_h=0.1)
        assert out.position[0] == pytest.approx(-2.0)
        assert abs(out.position[1]) < 1e-9

    def test_turn_rate_limits_curvature(self):
        # constant off-axis target: per-tick heading change never exceeds max_turn
        state = coord.VehicleState(id="v", position=(0.0, 0.0), heading=0.0)
        max_turn = 0.05
        headings = [state.heading]
        for _ in range(1000):
            state = sim.vehicle_kinematics(state, (0.0, 50.0), speed_kmh=10.0,
                                           max_turn=max_turn, dt_h=0.01)
            headings.append(state.heading)
        deltas = [abs((b - a + math.pi) % (2 * math.pi) - math.pi)
                  for a, b in zip(headings, headings[1:])]
        assert max(deltas) <= max_turn + 1e-12

    def test_speed_never_exceeded(self):
        state = coord.VehicleState(id="v", position=(0.0, 0.0), heading=2.0)
        rng = np.random.default_rng(0)
        for _ in range(200):
            target = (rng.uniform(-5, 5), rng.uniform(-5, 5))
            new = sim.vehicle_kinematics(state, target, speed_kmh=12.0,
                                         max_turn=0.3, dt_h=0.05)
            step = math.hypot(new.position[0] - state.position[0],
                              new.position[1] - state.position[1])
            assert step <= 12.0 * 0.05 + 1e-9
            state = new


class TestChannel:
    def _msgs(self, n):
        return [coord.FleetMessage(key="BOUNDARY_UPDATE", value=str(i),
                                   publisher="x", tick=i) for i in range(n)]

    def test_identity_when_lossless(self):
        msgs = self._msgs(5)
        out = sim.channel_deliver(msgs, 0.0, 0, np.random.default_rng(0))
        assert [m.value for _, m in out] == [str(i) for i in range(5)]
        assert all(t == m.tick for t, m in out)

    def test_total_loss(self):
        out = sim.channel_deliver(self._msgs(100), 1.0 - 1e-12, 0,
                                  np.random.default_rng(0))
        assert out == []

    def test_binomial_concentration(self):
        out = sim.channel_deliver(self._msgs(10_000), 0.3, 2,
                                  np.random.default_rng(3))
        frac = len(out) / 10_000
        assert 0.68 <= frac <= 0.72

    def test_fixed_delay_preserves_order(self):
        out = sim.channel_deliver(self._msgs(50), 0.5, 3, np.random.default_rng(1))
        ticks = [t for t, _ in out]
        assert ticks == sorted(ticks)
        assert all(t == m.tick + 3 for t, m in out)


class TestRunSimulation:
    def test_lossless_containment_and_coverage(self):
        log, metrics = sim.run_simulation(fast_config())
        assert metrics.time_to_containment is not None
        assert metrics.coverage_max == pytest.approx(1.0, abs=1e-9)
        kinds = {r["kind"] for r in log.records}
        assert "contained" in kinds and "boundary_update" in kinds

    def test_determinism_byte_identical(self):
        log1, m1 = sim.run_simulation(fast_config())
        log2, m2 = sim.run_simulation(fast_config())
        assert log1.to_jsonl() == log2.to_jsonl()
        assert m1.to_dict() == m2.to_dict()

    def test_different_seed_differs(self):
        log1, _ = sim.run_simulation(fast_config(seed=1, p_loss=0.2))
        log2, _ = sim.run_simulation(fast_config(seed=2, p_loss=0.2))
        assert log1.to_jsonl() != log2.to_jsonl()

    def test_fault_triggers_covering_replan(self):
        config = fast_config(fleet_size=5, duration_h=4.0,
                             fault_schedule=((150, "veh2"),))
        simu = sim.Simulation(config)
        log, metrics = simu.run()
        assert "veh2" in metrics.lost_vehicles
        kinds = [r["kind"] for r in log.records]
        assert "lost" in kinds and "replan" in kinds
        # post-replan plans exclude the lost vehicle and still cover everything
        live_plans = {vid: plan for vid, (seq, plan) in simu.shoreside.plans.items()}
        assert "veh2" not in live_plans
        assert len(live_plans) == 4
        walk = coord._PerimeterWalk(simu.shoreside.boundary_xy)
        samples = [walk.point_at(walk.total * k / 400) for k in range(400)]
        wpts = [w for plan in live_plans.values() for w in plan.arc]
        for sx, sy in samples:
            assert min(math.hypot(sx - wx, sy - wy) for wx, wy in wpts) < 0.4
        assert metrics.reassignment_latency
        assert metrics.time_to_containment is not None

    def test_lossy_channel_still_contains(self):
        log, metrics = sim.run_simulation(fast_config(p_loss=0.3, delay_ticks=1,
                                                      duration_h=4.0))
        assert metrics.time_to_containment is not None

    def test_speed_bound_per_tick(self):
        config = fast_config(duration_h=2.0)
        simu = sim.Simulation(config)
        max_step = config.vehicle_speed_kmh * config.tick_seconds / 3600.0
        prev = {vid: s.position for vid, s in simu.vehicles.items()}
        for _ in range(simu.total_ticks):
            simu.step()
            for vid, s in simu.vehicles.items():
                d = math.hypot(s.position[0] - prev[vid][0],
                               s.position[1] - prev[vid][1])
                assert d <= max_step + 1e-9
            prev = {vid: s.position for vid, s in simu.vehicles.items()}

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            sim.SimConfig(p_loss=1.0).validate()
        with pytest.raises(ConfigError):
            sim.SimConfig(fleet_size=0).validate()
        with pytest.raises(ConfigError):
            sim.SimConfig(predictor="checkpoint").validate()

    def test_safety_under_loss_randomized(self):
        # the phase-ordering invariant holds under message loss: entry into
        # this cycle's containment only after every live arrival report
        for seed in range(8):
            config = fast_config(p_loss=0.25, seed=seed, duration_h=3.0,
                                 fleet_size=3)
            simu = sim.Simulation(config)
            entered_oil = {}
            reached_seen = {}
            for _ in range(simu.total_ticks):
                simu.step()
                tick = simu.bus.tick
                for vid, s in simu.vehicles.items():
                    if s.mode == VehicleMode.OIL_PATH and vid not in entered_oil:
                        entered_oil[vid] = tick
                    if s.arrived_seq >= 0 and vid not in reached_seen:
                        reached_seen[vid] = tick
            if len(entered_oil) == len(simu.fleet):
                assert min(entered_oil.values()) >= max(reached_seen.values())


class TestWatchdog:
    def test_silent_below_timeout_no_action(self):
        bus = coord.MessageBus()
        ss = coord.ShoresideState(fleet=["a", "b"])
        bus.register("shoreside", coord.shoreside_subscriptions(["a", "b"]))
        ss.last_nav_tick = {"a": 0, "b": 0}
        bus.tick = 5
        assert sim.watchdog(ss, bus, timeout_ticks=10) == []
        assert not ss.lost

    def test_silent_vehicle_marked_lost_and_replanned(self):
        bus = coord.MessageBus()
        ss = coord.ShoresideState(fleet=["a", "b"])
        bus.register("shoreside", coord.shoreside_subscriptions(["a", "b"]))
        ss.boundary_xy = tuple((math.cos(t), math.sin(t))
                               for t in np.linspace(0, 2 * math.pi, 12, endpoint=False))
        ss.last_nav_tick = {"a": 0, "b": 99}
        bus.tick = 50
        lost = sim.watchdog(ss, bus, timeout_ticks=10)
        assert lost == ["a"]
        assert ss.live_fleet() == ["b"]
        assert ss.phase == coord.Phase.AWAIT_POSITIONS  # replan cycle started

    def test_all_lost_goes_critical_idle(self):
        bus = coord.MessageBus()
        ss = coord.ShoresideState(fleet=["a"])
        bus.register("shoreside", coord.shoreside_subscriptions(["a"]))
        ss.last_nav_tick = {"a": 0}
        bus.tick = 100
        log = sim.EventLog()
        sim.watchdog(ss, bus, timeout_ticks=10, log=log)
        assert ss.phase == coord.Phase.IDLE
        assert any(r["kind"] == "critical" for r in log.records)

    def test_vehicle_self_returns_without_contact(self):
        # drop every shoreside->vehicle message: vehicles never hear anything
        config = fast_config(p_loss=0.0, duration_h=1.0,
                             watchdog_timeout_ticks=20)
        simu = sim.Simulation(config)
        simu.bus.delivery_policy = lambda tick: None
        for _ in range(simu.total_ticks):
            simu.step()
        assert all(s.mode == VehicleMode.RETURNING for s in simu.vehicles.values())


class TestTcpSimulation:
    def test_ingress_feeds_boundary(self):
        ingress = coord.BoundaryIngress(port=0)
        config = fast_config(duration_h=2.0, tcp_listen=None)
        simu = sim.Simulation(config, ingress=ingress)
        try:
            ring = simu.observations[0].boundary.exterior
            payload = {"type": "BOUNDARY_UPDATE", "spill_id": "ext",
                       "exterior": [[lon, lat] for lon, lat in ring],
                       "timestamp_utc": "2010-04-24T01:00:00Z"}
            with socket.create_connection(("127.0.0.1", ingress.port)) as conn:
                conn.sendall((json.dumps(payload) + "\n").encode())
            deadline = time.time() + 5.0
            while time.time() < deadline:
                simu.step()
                if any(r["kind"] == "boundary_ingress" for r in simu.log.records):
                    break
                time.sleep(0.005)
            assert any(r["kind"] == "boundary_ingress" for r in simu.log.records)
            # the externally supplied boundary drives a planning cycle
            for _ in range(300):
                simu.step()
                if simu.shoreside.phase == coord.Phase.CONTAIN:
                    break
            assert simu.shoreside.cycle >= 1
        finally:
            ingress.close()
