"""MOOS-style coordination: a logically-ticked publish-subscribe bus,
perimeter path assignment with exact minimum-transit matching, per-vehicle
mode machines, and the shoreside three-phase planner.

Command values carry a monotone sequence number ("<seq>;x1,y1;x2,y2;...").
Vehicles ignore commands older than the last one they applied, echo the
sequence in their NAV reports, and tag arrival reports with the completed
command's sequence, which makes re-publication (at-least-once delivery) safe
under loss, delay, and reordering across boundary cycles.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
import socket
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import geo
from .errors import EmptyFleet, InvalidGeometry, MalformedMessage, UnknownAgent

log = logging.getLogger(__name__)

KEY_STATION_KEEP_ALL = "STATION_KEEP_ALL"
KEY_BOUNDARY_UPDATE = "BOUNDARY_UPDATE"
_KEY_PATTERN = re.compile(
    r"^(STATION_KEEP_ALL|BOUNDARY_UPDATE|"
    r"(NAV_X|NAV_Y|STARTING_POSITION_UPDATES|REACHED_STARTING_POSITION|"
    r"OIL_PATH_UPDATES|RETURN)_[A-Za-z0-9_\-]+)$"
)

CAPTURE_RADIUS_KM = 0.05
SLIP_RADIUS_KM = 0.3    # waypoint also captured when range opens inside this
STATION_RADIUS_KM = 0.1
WAYPOINT_SPACING_KM = 0.5
OVERLAP_FRACTION = 0.02
PHASE_CANDIDATES_PER_SLOT = 8


def nav_x_key(vid: str) -> str:
    return f"NAV_X_{vid}"


def nav_y_key(vid: str) -> str:
    return f"NAV_Y_{vid}"


def start_pos_key(vid: str) -> str:
    return f"STARTING_POSITION_UPDATES_{vid}"


def reached_key(vid: str) -> str:
    return f"REACHED_STARTING_POSITION_{vid}"


def oil_path_key(vid: str) -> str:
    return f"OIL_PATH_UPDATES_{vid}"


def return_key(vid: str) -> str:
    return f"RETURN_{vid}"


@dataclass(frozen=True)
class FleetMessage:
    key: str
    value: str
    publisher: str
    tick: int


class MessageBus:
    """Centralized store with a single global publication order.

    A delivery_policy callable (tick -> visible_tick or None) lets the
    simulator impose loss and delay on every publication; the default
    delivers instantly.
    """

    def __init__(self, delivery_policy=None):
        self.tick = 0
        self.delivery_policy = delivery_policy
        self._log = []            # (visible_tick, serial, FleetMessage)
        self._serial = 0
        self._subs = {}           # agent -> list of key patterns
        self._cursors = {}        # agent -> serial consumed

    def register(self, agent_id: str, subscriptions):
        self._subs[agent_id] = list(subscriptions)
        self._cursors[agent_id] = 0

    def advance(self):
        self.tick += 1

    def publish(self, agent_id: str, key: str, value: str, visible_tick=None):
        if agent_id not in self._subs:
            raise UnknownAgent(f"unregistered publisher {agent_id!r}")
        if not _KEY_PATTERN.match(key):
            raise MalformedMessage(f"key {key!r} outside the message vocabulary")
        msg = FleetMessage(key=key, value=str(value), publisher=agent_id, tick=self.tick)
        if visible_tick is None:
            if self.delivery_policy is not None:
                visible_tick = self.delivery_policy(self.tick)
                if visible_tick is None:
                    return None  # lost in transit
            else:
                visible_tick = self.tick
        self._serial += 1
        self._log.append((visible_tick, self._serial, msg))
        return msg

    def _matches(self, agent_id: str, key: str) -> bool:
        for pat in self._subs[agent_id]:
            if pat.endswith("*"):
                if key.startswith(pat[:-1]):
                    return True
            elif key == pat:
                return True
        return False

    def fetch(self, agent_id: str):
        """All visible subscribed messages since this agent's last fetch,
        in global publication order."""
        if agent_id not in self._subs:
            raise UnknownAgent(f"unregistered agent {agent_id!r}")
        cursor = self._cursors[agent_id]
        out = []
        max_serial = cursor
        for visible, serial, msg in self._log:
            if serial <= cursor or visible > self.tick:
                continue
            max_serial = max(max_serial, serial)
            if self._matches(agent_id, msg.key):
                out.append(msg)
        self._cursors[agent_id] = max_serial
        return out

    def latest(self, key: str):
        best = None
        for visible, serial, msg in self._log:
            if msg.key == key and visible <= self.tick:
                best = msg
        return best


# -- command value encoding -----------------------------------------------------


def encode_command(seq: int, waypoints) -> str:
    parts = [str(int(seq))]
    parts += [f"{x:.6f},{y:.6f}" for x, y in waypoints]
    return ";".join(parts)


def decode_command(value: str):
    try:
        parts = value.split(";")
        seq = int(parts[0])
        wpts = []
        for p in parts[1:]:
            xs, ys = p.split(",")
            wpts.append((float(xs), float(ys)))
        return seq, wpts
    except (ValueError, IndexError) as exc:
        raise MalformedMessage(f"bad command value {value!r}: {exc}") from None


def encode_nav(coord: float, ack_seq: int) -> str:
    return f"{coord:.6f}@{int(ack_seq)}"


def decode_nav(value: str):
    try:
        coord, seq = value.split("@")
        return float(coord), int(seq)
    except ValueError as exc:
        raise MalformedMessage(f"bad NAV value {value!r}: {exc}") from None


# -- path assignment -------------------------------------------------------------


@dataclass(frozen=True)
class PathPlan:
    vehicle_id: str
    start_point: tuple
    arc: tuple            # waypoints covering the slot plus overlap margin
    overlap_margin: float


class _PerimeterWalk:
    """Arc-length parameterization of a closed polygon boundary (km frame)."""

    def __init__(self, ring_xy):
        pts = [tuple(map(float, p)) for p in ring_xy]
        if len(pts) < 3:
            raise InvalidGeometry("boundary needs >= 3 vertices")
        self.pts = pts
        self.seg_len = []
        n = len(pts)
        for i in range(n):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % n]
            self.seg_len.append(math.hypot(x2 - x1, y2 - y1))
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.total = float(self.cum[-1])
        if self.total <= 0:
            raise InvalidGeometry("degenerate boundary: zero perimeter")

    def point_at(self, s: float):
        s = s % self.total
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(i, len(self.pts) - 1)
        seg = self.seg_len[i]
        frac = 0.0 if seg == 0 else (s - self.cum[i]) / seg
        x1, y1 = self.pts[i]
        x2, y2 = self.pts[(i + 1) % len(self.pts)]
        return (x1 + frac * (x2 - x1), y1 + frac * (y2 - y1))

    def sample_arc(self, start_s: float, length: float, spacing: float):
        count = max(2, int(math.ceil(length / spacing)) + 1)
        return [self.point_at(start_s + length * k / (count - 1)) for k in range(count)]


def hungarian(cost: np.ndarray):
    """Exact minimum-cost assignment (O(n^3) potentials + augmenting paths).

    Returns (assignment row->col, total cost).
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n != m:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    INF = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)   # p[j] = row matched to column j (1-based)
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.zeros(n, dtype=int)
    for j in range(1, m + 1):
        assignment[p[j] - 1] = j - 1
    total = float(sum(cost[i, assignment[i]] for i in range(n)))
    return assignment, total


def assign_paths(boundary_xy, vehicle_positions, vehicle_ids=None):
    """Split the perimeter into equal arc-length slots and match vehicles to
    slot entry points with minimum total straight-line transit.

    The slot phase is chosen from N*8 candidate rotations; matching per phase
    is exact. Arcs are discretized at <= 0.5 km spacing and extended by a 2%
    overlap margin so adjacent arcs always meet.
    """
    positions = [tuple(map(float, p)) for p in vehicle_positions]
    n = len(positions)
    if n == 0:
        raise EmptyFleet("no vehicles to assign")
    if vehicle_ids is None:
        vehicle_ids = [f"v{i}" for i in range(n)]
    walk = _PerimeterWalk(boundary_xy)
    slot_len = walk.total / n
    overlap = OVERLAP_FRACTION * walk.total

    best = None
    n_phases = n * PHASE_CANDIDATES_PER_SLOT
    for k in range(n_phases):
        offset = walk.total * k / n_phases
        starts = [walk.point_at(offset + i * slot_len) for i in range(n)]
        cost = np.array([[math.hypot(px - sx, py - sy)
                          for sx, sy in starts] for px, py in positions])
        assignment, total = hungarian(cost)
        if best is None or total < best[0] - 1e-12:
            best = (total, offset, starts, assignment)

    _, offset, starts, assignment = best
    plans = []
    for vi in range(n):
        slot = int(assignment[vi])
        start_s = offset + slot * slot_len
        arc = walk.sample_arc(start_s, slot_len + overlap, WAYPOINT_SPACING_KM)
        plans.append(PathPlan(
            vehicle_id=vehicle_ids[vi],
            start_point=starts[slot],
            arc=tuple(arc),
            overlap_margin=overlap,
        ))
    return plans


# -- vehicle state machine --------------------------------------------------------


class VehicleMode(enum.Enum):
    STATION_KEEPING = "station_keeping"
    STARTING_POSITION = "starting_position"
    OIL_PATH = "oil_path"
    RETURNING = "returning"


@dataclass(frozen=True)
class VehicleState:
    id: str
    mode: VehicleMode = VehicleMode.STATION_KEEPING
    position: tuple = (0.0, 0.0)
    heading: float = 0.0
    waypoints: tuple = ()
    loop_flag: bool = False
    arc: tuple = ()           # full containment loop, rewound when exhausted
    home: tuple = (0.0, 0.0)
    last_seq: int = -1
    arrived_seq: int = -1     # seq of the transit command completed, -1 if none
    last_wp_dist: float = math.inf  # range to current waypoint on the last tick

    def current_target(self):
        if self.mode == VehicleMode.STATION_KEEPING:
            return None
        return self.waypoints[0] if self.waypoints else None


def fsm_step(state: VehicleState, inbox, nav):
    """Apply one tick of messages + navigation to a vehicle.

    Returns (state', outbox) where outbox is a list of (key, value) pairs.
    Commands with stale sequence numbers are ignored; malformed messages are
    logged and skipped.
    """
    vid = state.id
    st = replace(state, position=(float(nav[0]), float(nav[1])))

    for msg in inbox:
        try:
            if msg.key == KEY_STATION_KEEP_ALL:
                seq, _ = decode_command(msg.value)
                if seq > st.last_seq:
                    st = replace(st, mode=VehicleMode.STATION_KEEPING, waypoints=(),
                                 loop_flag=False, arc=(), last_seq=seq, arrived_seq=-1)
            elif msg.key == return_key(vid):
                seq, _ = decode_command(msg.value)
                if seq > st.last_seq:
                    st = replace(st, mode=VehicleMode.RETURNING, waypoints=(st.home,),
                                 loop_flag=False, arc=(), last_seq=seq,
                                 last_wp_dist=math.inf)
            elif msg.key == start_pos_key(vid):
                seq, wpts = decode_command(msg.value)
                if seq > st.last_seq and wpts:
                    st = replace(st, mode=VehicleMode.STARTING_POSITION,
                                 waypoints=tuple(wpts), loop_flag=False, arc=(),
                                 last_seq=seq, arrived_seq=-1,
                                 last_wp_dist=math.inf)
            elif msg.key == oil_path_key(vid):
                seq, wpts = decode_command(msg.value)
                if seq > st.last_seq and wpts:
                    st = replace(st, mode=VehicleMode.OIL_PATH, waypoints=tuple(wpts),
                                 loop_flag=True, arc=tuple(wpts), last_seq=seq,
                                 last_wp_dist=math.inf)
        except MalformedMessage as exc:
            log.warning("vehicle %s skipping message %s: %s", vid, msg.key, exc)

    outbox = []
    x, y = st.position

    # waypoint capture: inside the capture radius, or inside the slip radius
    # with the range opening again (the vessel passed as close as its turn
    # geometry allows)
    if st.mode in (VehicleMode.STARTING_POSITION, VehicleMode.OIL_PATH,
                   VehicleMode.RETURNING) and st.waypoints:
        wx, wy = st.waypoints[0]
        dist = math.hypot(wx - x, wy - y)
        slipped = dist <= SLIP_RADIUS_KM and dist > st.last_wp_dist + 1e-12
        if dist <= CAPTURE_RADIUS_KM or slipped:
            rest = st.waypoints[1:]
            if st.mode == VehicleMode.OIL_PATH and not rest and st.loop_flag:
                rest = st.arc  # containment loops rewind until retasked
            st = replace(st, waypoints=rest, last_wp_dist=math.inf)
            if st.mode == VehicleMode.STARTING_POSITION and not rest:
                st = replace(st, arrived_seq=st.last_seq)
        else:
            st = replace(st, last_wp_dist=dist)

    if st.mode == VehicleMode.STARTING_POSITION and not st.waypoints and st.arrived_seq >= 0:
        # repeat while awaiting tasking; the channel may drop any single copy
        outbox.append((reached_key(vid), f"true@{st.arrived_seq}"))

    outbox.append((nav_x_key(vid), encode_nav(x, st.last_seq)))
    outbox.append((nav_y_key(vid), encode_nav(y, st.last_seq)))
    return st, outbox


# -- shoreside planner -------------------------------------------------------------


class Phase(enum.Enum):
    IDLE = "idle"
    AWAIT_POSITIONS = "await_positions"
    AWAIT_ARRIVALS = "await_arrivals"
    CONTAIN = "contain"


@dataclass
class ShoresideState:
    fleet: list
    heartbeat_ticks: int = 30
    phase: Phase = Phase.IDLE
    cycle: int = 0
    seq: int = 0
    cycle_seq: int = -1   # seq of the current cycle's STATION_KEEP_ALL
    boundary_xy: tuple = ()
    positions: dict = field(default_factory=dict)
    ack_seq: dict = field(default_factory=dict)
    reached: set = field(default_factory=set)
    lost: set = field(default_factory=set)
    last_nav_tick: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)   # vid/None -> (key, value)
    last_broadcast_tick: int = -1
    plans: dict = field(default_factory=dict)

    def live_fleet(self):
        return [v for v in self.fleet if v not in self.lost]


def shoreside_subscriptions(fleet):
    subs = [KEY_BOUNDARY_UPDATE]
    for vid in fleet:
        subs += [nav_x_key(vid), nav_y_key(vid), reached_key(vid)]
    return subs


def vehicle_subscriptions(vid):
    return [KEY_STATION_KEEP_ALL, start_pos_key(vid), oil_path_key(vid), return_key(vid)]


def decode_boundary_value(value: str):
    try:
        doc = json.loads(value)
        ring = [(float(lon), float(lat)) for lon, lat in doc["exterior"]]
        return doc.get("spill_id", ""), ring
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedMessage(f"bad boundary payload: {exc}") from None


def _start_cycle(ss: ShoresideState, bus: MessageBus, agent: str):
    ss.cycle += 1
    ss.phase = Phase.AWAIT_POSITIONS
    ss.positions = {}
    ss.reached = set()
    ss.plans = {}
    ss.seq += 1
    ss.cycle_seq = ss.seq
    value = encode_command(ss.seq, [])
    ss.pending = {None: (KEY_STATION_KEEP_ALL, value)}
    bus.publish(agent, KEY_STATION_KEEP_ALL, value)
    ss.last_broadcast_tick = bus.tick


def shoreside_step(ss: ShoresideState, bus: MessageBus, agent: str = "shoreside",
                   frame: geo.LocalFrame = None):
    """One planner tick: ingest reports, advance the three-phase workflow,
    re-publish unacknowledged commands on the heartbeat."""
    for msg in bus.fetch(agent):
        try:
            if msg.key == KEY_BOUNDARY_UPDATE:
                _, ring = decode_boundary_value(msg.value)
                if frame is not None:
                    ring = [frame.to_xy(lon, lat) for lon, lat in ring]
                ss.boundary_xy = tuple(ring)
                if ss.live_fleet():
                    _start_cycle(ss, bus, agent)
            elif msg.key.startswith("NAV_X_") or msg.key.startswith("NAV_Y_"):
                vid = msg.key[6:]
                coord, ack = decode_nav(msg.value)
                ss.last_nav_tick[vid] = msg.tick
                ss.ack_seq[vid] = max(ss.ack_seq.get(vid, -1), ack)
                cur = ss.positions.get(vid, (None, None))
                if msg.key.startswith("NAV_X_"):
                    ss.positions[vid] = (coord, cur[1])
                else:
                    ss.positions[vid] = (cur[0], coord)
            elif msg.key.startswith("REACHED_STARTING_POSITION_"):
                vid = msg.key[len("REACHED_STARTING_POSITION_"):]
                text = msg.value
                if "@" in text:
                    flag, seq_text = text.split("@", 1)
                    echoed = int(seq_text)
                else:
                    flag, echoed = text, -1
                expected = ss.plans.get(vid, (None, None))[0]
                if flag == "true" and expected is not None and echoed == expected:
                    ss.reached.add(vid)
        except (MalformedMessage, ValueError) as exc:
            log.warning("shoreside skipping %s: %s", msg.key, exc)

    live = ss.live_fleet()
    if ss.phase == Phase.AWAIT_POSITIONS and live:
        # a vehicle counts as reported only once its NAV acknowledges this
        # cycle's station-keep broadcast
        have = [v for v in live
                if v in ss.positions and None not in ss.positions[v]
                and ss.ack_seq.get(v, -1) >= ss.cycle_seq]
        if len(have) == len(live):
            plans = assign_paths(ss.boundary_xy,
                                 [ss.positions[v] for v in live], live)
            ss.pending = {}
            for plan in plans:
                ss.seq += 1
                value = encode_command(ss.seq, [plan.start_point])
                ss.pending[plan.vehicle_id] = (start_pos_key(plan.vehicle_id), value)
                ss.plans[plan.vehicle_id] = (ss.seq, plan)
                bus.publish(agent, start_pos_key(plan.vehicle_id), value)
            ss.phase = Phase.AWAIT_ARRIVALS
            ss.last_broadcast_tick = bus.tick
    elif ss.phase == Phase.AWAIT_ARRIVALS and live:
        if all(v in ss.reached for v in live):
            ss.pending = {}
            for vid in live:
                _, plan = ss.plans[vid]
                ss.seq += 1
                value = encode_command(ss.seq, plan.arc)
                ss.pending[vid] = (oil_path_key(vid), value)
                ss.plans[vid] = (ss.seq, plan)
                bus.publish(agent, oil_path_key(vid), value)
            ss.phase = Phase.CONTAIN
            ss.last_broadcast_tick = bus.tick

    # at-least-once: re-publish until the effect (or ack) is observed
    if ss.pending and bus.tick - ss.last_broadcast_tick >= ss.heartbeat_ticks:
        for vid, (key, value) in list(ss.pending.items()):
            seq = decode_command(value)[0]
            if vid is None:
                bus.publish(agent, key, value)
            elif vid in ss.lost:
                continue
            elif ss.phase == Phase.AWAIT_ARRIVALS and vid in ss.reached:
                continue
            elif ss.phase == Phase.CONTAIN and ss.ack_seq.get(vid, -1) >= seq:
                continue
            else:
                bus.publish(agent, key, value)
        ss.last_broadcast_tick = bus.tick


def replan_over_survivors(ss: ShoresideState, bus: MessageBus, agent: str = "shoreside"):
    """Restart the cycle with the current live fleet (after a loss)."""
    if ss.boundary_xy and ss.live_fleet():
        _start_cycle(ss, bus, agent)


# -- TCP boundary ingress -----------------------------------------------------------


def parse_boundary_line(line: str):
    """One NDJSON ingress record -> (spill_id, GeoPolygon, timestamp text)."""
    doc = json.loads(line)
    if doc.get("type") != KEY_BOUNDARY_UPDATE:
        raise MalformedMessage(f"unexpected record type {doc.get('type')!r}")
    poly = geo.GeoPolygon(exterior=[tuple(p) for p in doc["exterior"]])
    return doc.get("spill_id", ""), poly, doc.get("timestamp_utc", "")


class BoundaryIngress:
    """Line-delimited JSON boundary feed over TCP, drained by the simulator."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.create_server((host, port))
        self.port = self._server.getsockname()[1]
        self._queue = []
        self._lock = threading.Lock()
        self._closing = False
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self):
        while not self._closing:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn):
        buf = b""
        with conn:
            while True:
                try:
                    chunk = conn.recv(4096)
                except OSError:
                    return
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        record = parse_boundary_line(line.decode("utf-8"))
                    except Exception as exc:
                        log.warning("ingress skipping line: %s", exc)
                        continue
                    with self._lock:
                        self._queue.append(record)

    def drain(self):
        with self._lock:
            out, self._queue = self._queue, []
        return out

    def close(self):
        self._closing = True
        try:
            self._server.close()
        except OSError:
            pass
