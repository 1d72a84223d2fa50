"""Deterministic 2D environments rendered by the software rasterizer.

Two arenas are provided: a walled maze navigated by a two-wheeled robot with
five frontal distance sensors, and a disk-push arena where a velocity-driven
pusher shoves a rigid disk around. Both expose top-view RGB observations and
an evaluation-only ground-truth (x, y) position.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import raster
from .firewall import ground_truth_reads

log = logging.getLogger(__name__)

MAZE = "maze"
DISK_PUSH = "diskpush"

# Frontal sensor directions relative to heading.
SENSOR_ANGLES = (-math.pi / 2, -math.pi / 4, 0.0, math.pi / 4, math.pi / 2)

COLORS = {
    "background": (255, 255, 255),
    "wall": (0, 0, 0),
    "robot": (51, 102, 204),
    "robot_tick": (25, 51, 102),
    "object": (204, 51, 51),
}


@dataclass
class ArenaSpec:
    """Static geometry and dynamics constants of one environment."""

    kind: str = MAZE
    width: float = 10.0
    height: float = 10.0
    walls: tuple = ()                # ((ax, ay, bx, by), ...)
    robot_radius: float = 0.3
    wheel_base: float = 0.6
    v_max: float = 0.4               # m/s at wheel command 1.0
    dt: float = 0.05
    sensor_range: float | None = None    # default: half the arena diagonal
    wall_half_width: float = 0.16        # rendering thickness only
    render_radius: float | None = None   # visual marker size; default physical
    start: tuple = (1.0, 8.8, 0.0)       # robot x, y, heading
    disk_radius: float = 0.6
    disk_start: tuple = (6.5, 5.0)

    def __post_init__(self):
        if self.kind not in (MAZE, DISK_PUSH):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.robot_radius <= 0:
            raise ValueError("robot radius must be positive")
        for wall in self.walls:
            ax, ay, bx, by = wall
            for x in (ax, bx):
                if not 0.0 <= x <= self.width:
                    raise ValueError(f"wall {wall} leaves the arena bounds")
            for y in (ay, by):
                if not 0.0 <= y <= self.height:
                    raise ValueError(f"wall {wall} leaves the arena bounds")
        if self.sensor_range is None:
            self.sensor_range = 0.5 * math.hypot(self.width, self.height)
        if self.render_radius is None:
            self.render_radius = self.robot_radius
        self._segments = self._build_segments()
        self._static_frames = {}

    def _build_segments(self):
        w, h = self.width, self.height
        border = [(0.0, 0.0, w, 0.0), (w, 0.0, w, h), (w, h, 0.0, h), (0.0, h, 0.0, 0.0)]
        segs = list(self.walls) + border
        a = np.array([(s[0], s[1]) for s in segs], dtype=np.float64)
        b = np.array([(s[2], s[3]) for s in segs], dtype=np.float64)
        e = b - a
        len2 = np.maximum((e * e).sum(axis=1), 1e-300)
        # contiguous per-coordinate copies, kept hot by sensing and collision
        return (a, e, len2, a[:, 0].copy(), a[:, 1].copy(),
                e[:, 0].copy(), e[:, 1].copy())

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax)"""
        return (0.0, 0.0, self.width, self.height)

    @property
    def action_dim(self) -> int:
        return 2

    @property
    def sensor_dim(self) -> int:
        return len(SENSOR_ANGLES) if self.kind == MAZE else 4

    def static_frame(self, size: int) -> np.ndarray:
        """Background + walls, rasterized once per image size."""
        frame = self._static_frames.get(size)
        if frame is None:
            frame = raster.new_frame(size, COLORS["background"])
            wh = (self.width, self.height)
            for ax, ay, bx, by in self.walls:
                raster.draw_segment(frame, wh, ax, ay, bx, by,
                                    self.wall_half_width, COLORS["wall"])
            frame.setflags(write=False)
            self._static_frames[size] = frame
        return frame

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "width": self.width, "height": self.height,
            "walls": [list(w) for w in self.walls],
            "robot_radius": self.robot_radius, "wheel_base": self.wheel_base,
            "v_max": self.v_max, "dt": self.dt, "sensor_range": self.sensor_range,
            "wall_half_width": self.wall_half_width,
            "render_radius": self.render_radius, "start": list(self.start),
            "disk_radius": self.disk_radius, "disk_start": list(self.disk_start),
        }

    @staticmethod
    def from_dict(d: dict) -> "ArenaSpec":
        d = dict(d)
        d["walls"] = tuple(tuple(w) for w in d.get("walls", ()))
        d["start"] = tuple(d.get("start", (1.0, 8.8, 0.0)))
        d["disk_start"] = tuple(d.get("disk_start", (6.5, 5.0)))
        return ArenaSpec(**d)


ARENA_FIELD_TYPES = {
    "width": float, "height": float, "robot_radius": float, "wheel_base": float,
    "v_max": float, "dt": float, "sensor_range": float, "wall_half_width": float,
    "render_radius": float, "start": "pose", "walls": "walls",
    "disk_radius": float, "disk_start": "point",
}


def parse_arena_mapping(mapping) -> dict:
    """Parses the [arena] section of a config file into ArenaSpec fields."""
    out = {}
    for key, raw in mapping.items():
        if key not in ARENA_FIELD_TYPES:
            raise ValueError(f"unknown key '{key}' in section [arena]")
        kind = ARENA_FIELD_TYPES[key]
        try:
            if kind == "walls":
                walls = []
                for line in raw.strip().splitlines():
                    parts = [float(v) for v in line.replace(",", " ").split()]
                    if len(parts) != 4:
                        raise ValueError
                    walls.append(tuple(parts))
                out[key] = tuple(walls)
            elif kind in ("pose", "point"):
                parts = [float(v) for v in raw.replace(",", " ").split()]
                if len(parts) != (3 if kind == "pose" else 2):
                    raise ValueError
                out[key] = tuple(parts)
            else:
                out[key] = kind(raw)
        except ValueError:
            raise ValueError(
                f"key '{key}' in section [arena]: cannot parse {raw!r}") from None
    return out


_DEFAULT_ARENA_FILES = {MAZE: "maze_arena.cfg", DISK_PUSH: "diskpush_arena.cfg"}
_default_arena_cache: dict[str, dict] = {}


def default_arena_fields(kind: str) -> dict:
    """Arena geometry shipped with the package, one config file per environment."""
    if kind not in _DEFAULT_ARENA_FILES:
        raise ValueError(f"unknown environment {kind!r}")
    fields = _default_arena_cache.get(kind)
    if fields is None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        text = resources.files("taxons.data").joinpath(
            _DEFAULT_ARENA_FILES[kind]).read_text()
        parser.read_string(text)
        fields = parse_arena_mapping(parser["arena"])
        _default_arena_cache[kind] = fields
    return dict(fields)


def make_arena(kind: str, overrides: dict | None = None) -> ArenaSpec:
    fields = default_arena_fields(kind)
    if overrides:
        unknown = set(overrides) - set(ARENA_FIELD_TYPES)
        if unknown:
            raise ValueError(f"unknown arena fields: {', '.join(sorted(unknown))}")
        fields.update(overrides)
    return ArenaSpec(kind=kind, **fields)


@dataclass
class EnvState:
    x: float
    y: float
    heading: float
    obj_x: float | None = None
    obj_y: float | None = None
    step_count: int = 0
    collided: bool = False


def initial_state(spec: ArenaSpec) -> EnvState:
    x, y, heading = spec.start
    if spec.kind == DISK_PUSH:
        return EnvState(x, y, heading, obj_x=spec.disk_start[0], obj_y=spec.disk_start[1])
    return EnvState(x, y, heading)


# ---------------------------------------------------------------------------
# Dynamics (float-based cores shared by step() and rollout())
# ---------------------------------------------------------------------------

def _resolve_disk(spec, px, py, radius, ox, oy):
    """Push a disk of the given radius out of every wall it penetrates.

    (ox, oy) is the pre-move position, used to orient the push when the center
    lands exactly on a segment. Returns (x, y, collided)."""
    _, _, len2, a0, a1, e0, e1 = spec._segments
    collided = False
    r2 = radius * radius
    for _ in range(4):
        nx = min(max(px, radius), spec.width - radius)
        ny = min(max(py, radius), spec.height - radius)
        if nx != px or ny != py:
            collided = True
            px, py = nx, ny
        # closest point on each segment
        t = ((px - a0) * e0 + (py - a1) * e1) / len2
        np.minimum(t, 1.0, out=t)
        np.maximum(t, 0.0, out=t)
        cx = a0 + t * e0
        cy = a1 + t * e1
        dx = px - cx
        dy = py - cy
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        if d2[i] >= r2:
            break
        collided = True
        d = math.sqrt(d2[i])
        if d > 1e-12:
            ux, uy = dx[i] / d, dy[i] / d
        else:
            # Center exactly on the segment: push back toward where we came from.
            ux, uy = ox - px, oy - py
            n = math.hypot(ux, uy)
            ux, uy = (ux / n, uy / n) if n > 1e-12 else (0.0, 1.0)
        px = cx[i] + ux * radius
        py = cy[i] + uy * radius
    return px, py, collided


def _maze_core(spec, x, y, heading, vl, vr, dt):
    v = 0.5 * (vl + vr) * spec.v_max
    omega = (vr - vl) * spec.v_max / spec.wheel_base
    nx = x + v * math.cos(heading) * dt
    ny = y + v * math.sin(heading) * dt
    nx, ny, collided = _resolve_disk(spec, nx, ny, spec.robot_radius, x, y)
    return nx, ny, heading + omega * dt, collided


def _diskpush_core(spec, x, y, obj_x, obj_y, ax, ay, dt):
    nx = x + ax * spec.v_max * dt
    ny = y + ay * spec.v_max * dt
    nx, ny, collided = _resolve_disk(spec, nx, ny, spec.robot_radius, x, y)
    ox, oy = obj_x, obj_y
    min_sep = spec.robot_radius + spec.disk_radius
    dx = ox - nx
    dy = oy - ny
    d = math.hypot(dx, dy)
    if d < min_sep:
        # Rigid non-penetrating disk: push it out along the contact normal.
        if d > 1e-12:
            ux, uy = dx / d, dy / d
        else:
            ux, uy = 1.0, 0.0
        ox = nx + ux * min_sep
        oy = ny + uy * min_sep
        ox = min(max(ox, spec.disk_radius), spec.width - spec.disk_radius)
        oy = min(max(oy, spec.disk_radius), spec.height - spec.disk_radius)
        # Disk pinned against a wall: keep the pusher outside it instead.
        ddx = nx - ox
        ddy = ny - oy
        dd = math.hypot(ddx, ddy)
        if dd < min_sep:
            if dd > 1e-12:
                nx = ox + ddx / dd * min_sep
                ny = oy + ddy / dd * min_sep
            else:
                nx = ox + min_sep
    return nx, ny, ox, oy, collided


def _clamp_action(action, dim):
    act = np.asarray(action, dtype=np.float64)
    if act.shape != (dim,):
        raise ValueError(f"action must have shape ({dim},), got {act.shape}")
    clamped = np.clip(act, -1.0, 1.0)
    n_clamped = int(np.sum(clamped != act))
    return clamped, n_clamped


def step(spec: ArenaSpec, state: EnvState, action, dt: float | None = None) -> EnvState:
    """One control step. Out-of-range action components are clamped (and the
    clamping is surfaced in rollout logs); collisions clamp motion to contact
    and set the collision flag."""
    dt = spec.dt if dt is None else dt
    action, n_clamped = _clamp_action(action, spec.action_dim)
    if n_clamped:
        log.warning("action outside [-1, 1] clamped (%d components)", n_clamped)
    if spec.kind == MAZE:
        x, y, heading, collided = _maze_core(
            spec, state.x, state.y, state.heading, action[0], action[1], dt)
        return EnvState(x, y, heading, step_count=state.step_count + 1,
                        collided=collided)
    x, y, ox, oy, collided = _diskpush_core(
        spec, state.x, state.y, state.obj_x, state.obj_y, action[0], action[1], dt)
    return EnvState(x, y, 0.0, obj_x=ox, obj_y=oy,
                    step_count=state.step_count + 1, collided=collided)


# ---------------------------------------------------------------------------
# Sensing
# ---------------------------------------------------------------------------

_SENSOR_OFFSETS = np.asarray(SENSOR_ANGLES)[:, None]


def _sensor_core(spec, x, y, heading):
    _, _, _, a0, a1, e0, e1 = spec._segments
    angles = heading + _SENSOR_OFFSETS
    dx = np.cos(angles)
    dy = np.sin(angles)
    # Ray p + t*d against segments a + u*e, intersection where both in range.
    ax = a0 - x
    ay = a1 - y
    den = dx * e1 - dy * e0
    bad = np.abs(den) < 1e-300
    den[bad] = 1.0
    t = (ax * e1 - ay * e0) / den
    u = (ax * dy - ay * dx) / den
    miss = bad | (t < 0.0) | (u < 0.0) | (u > 1.0)
    t[miss] = np.inf
    dist = t.min(axis=1)
    np.minimum(dist, spec.sensor_range, out=dist)
    dist /= spec.sensor_range
    return dist


def sensors(spec: ArenaSpec, state: EnvState) -> np.ndarray:
    """Five frontal ray readings in [0, 1]: distance to the nearest wall along
    each ray, capped at the sensor range and normalized by it."""
    if spec.kind != MAZE:
        raise ValueError("distance sensors exist only in the maze environment")
    return _sensor_core(spec, state.x, state.y, state.heading)


def controller_input(spec: ArenaSpec, state: EnvState) -> np.ndarray:
    """What the policy sees each step."""
    if spec.kind == MAZE:
        return sensors(spec, state)
    # Pusher pose and disk offset, scaled to roughly [-1, 1].
    return np.array([
        2.0 * state.x / spec.width - 1.0,
        2.0 * state.y / spec.height - 1.0,
        (state.obj_x - state.x) / spec.width,
        (state.obj_y - state.y) / spec.height,
    ])


# ---------------------------------------------------------------------------
# Rendering and rollouts
# ---------------------------------------------------------------------------

def render(spec: ArenaSpec, state: EnvState, size: int) -> np.ndarray:
    """Top-view uint8 frame: walls from the static layer plus the moving disks."""
    if size < 16:
        raise ValueError("observation size must be at least 16 pixels")
    img = spec.static_frame(size).copy()
    wh = (spec.width, spec.height)
    if spec.kind == DISK_PUSH:
        raster.draw_disk(img, wh, state.obj_x, state.obj_y,
                         spec.disk_radius, COLORS["object"])
    r = spec.render_radius
    raster.draw_disk(img, wh, state.x, state.y, r, COLORS["robot"])
    tx, ty = math.cos(state.heading), math.sin(state.heading)
    raster.draw_segment(img, wh, state.x + 0.4 * r * tx, state.y + 0.4 * r * ty,
                        state.x + r * tx, state.y + r * ty, 0.2 * r,
                        COLORS["robot_tick"])
    return img


def ground_truth(spec: ArenaSpec, state: EnvState) -> tuple[float, float]:
    """Evaluation-only position: robot center (maze) or disk center (disk-push)."""
    if spec.kind == DISK_PUSH:
        return (state.obj_x, state.obj_y)
    return (state.x, state.y)


class RolloutResult:
    """Outcome of one policy evaluation.

    ``observation`` is the only behavioral record available to search code.
    The final position is exposed two ways: ``ground_truth`` counts the read
    against the firewall (for the privileged NS observer), while
    ``eval_ground_truth`` is the unmonitored evaluation-side field.
    """

    __slots__ = ("observation_u8", "eval_ground_truth", "trajectory",
                 "collisions", "action_clamps", "valid")

    def __init__(self, observation_u8, eval_ground_truth, trajectory,
                 collisions, action_clamps, valid):
        self.observation_u8 = observation_u8
        self.eval_ground_truth = eval_ground_truth
        self.trajectory = trajectory
        self.collisions = collisions
        self.action_clamps = action_clamps
        self.valid = valid

    @property
    def observation(self) -> np.ndarray:
        return raster.to_observation(self.observation_u8)

    @property
    def ground_truth(self) -> tuple[float, float]:
        ground_truth_reads.increment()
        return self.eval_ground_truth


def rollout(spec: ArenaSpec, controller, horizon: int, observation_size: int,
            seed: int = 0) -> RolloutResult:
    """Runs the controller for ``horizon`` steps and renders the final frame.

    Pure function of its arguments: the environments are deterministic, so the
    seed is accepted only for interface stability with stochastic setups.
    """
    del seed
    x, y, heading = spec.start
    obj_x, obj_y = spec.disk_start if spec.kind == DISK_PUSH else (None, None)
    maze = spec.kind == MAZE
    dt = spec.dt
    width, height = spec.width, spec.height
    act = controller.act
    traj = np.empty((horizon + 1, 2))
    traj[0] = (x, y) if maze else (obj_x, obj_y)
    collisions = 0
    clamps = 0
    for i in range(horizon):
        if maze:
            obs_in = _sensor_core(spec, x, y, heading)
        else:
            obs_in = np.array([2.0 * x / width - 1.0, 2.0 * y / height - 1.0,
                               (obj_x - x) / width, (obj_y - y) / height])
        action = act(obs_in)
        a0 = float(action[0])
        a1 = float(action[1])
        if not (math.isfinite(a0) and math.isfinite(a1)):
            log.warning("non-finite controller output at step %d; rollout aborted", i)
            return RolloutResult(None, None, traj[:i + 1].copy(), collisions,
                                 clamps, valid=False)
        if a0 < -1.0 or a0 > 1.0:
            a0 = min(max(a0, -1.0), 1.0)
            clamps += 1
        if a1 < -1.0 or a1 > 1.0:
            a1 = min(max(a1, -1.0), 1.0)
            clamps += 1
        if maze:
            x, y, heading, collided = _maze_core(spec, x, y, heading, a0, a1, dt)
            traj[i + 1] = (x, y)
        else:
            x, y, obj_x, obj_y, collided = _diskpush_core(
                spec, x, y, obj_x, obj_y, a0, a1, dt)
            traj[i + 1] = (obj_x, obj_y)
        collisions += collided
    state = EnvState(x, y, heading, obj_x=obj_x, obj_y=obj_y, step_count=horizon)
    frame = render(spec, state, observation_size)
    return RolloutResult(frame, ground_truth(spec, state), traj,
                         collisions, clamps, valid=True)
