"""Fixed-timestep rigid-box engine built on the compiled kernels in ``_kernels``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import AlreadyRemoved, InvalidInput, SimulationExploded, UnknownBox
from .geometry import quat_yaw
from .scene_model import RigidBox, Scene, shelf_colliders


@dataclass(frozen=True)
class SimConfig:
    gravity: float = 9.81
    density: float = 1.0
    surface_friction: float = 0.75
    spinning_friction: float = 0.01
    timestep: float = 1.0 / 240.0
    solver_iterations: int = 10
    contact_slop: float = 0.002
    settle_time: float = 0.5
    disturbance_force_std: float = 0.02
    extraction_speed: float = 0.15
    monitor_time: float = 1.5
    rng_seed: int = 0
    # disturbance_force_std is the std for a box of this volume (a 20 cm
    # cube); other boxes get a force scaled by their mass, i.e. every box
    # sees the same acceleration spread, like shelf vibration would cause
    disturbance_reference_volume: float = 0.008
    # real-to-sim sampling
    depth_min: float = 0.05
    sample_retries: int = 64
    # sampled scenes whose boxes drift further than this while settling are redrawn
    sample_stability_tolerance: float = 0.01
    # sampled scenes that collapse in any of these spells of disturbances
    # alone (no extraction) are redrawn; 0 disables the check
    sample_vibration_time: float = 2.0
    sample_vibration_trials: int = 3
    # execution cost model: seconds per executed pick
    per_pick_cost: float = 22.0
    # solver internals
    position_iterations: int = 4
    penetration_allowance: float = 0.001
    correction_factor: float = 0.2
    max_speed: float = 100.0
    warm_start_tolerance: float = 0.01
    # stop settling/monitoring early once every box has been at rest this long
    rest_exit: bool = True
    rest_linear_speed: float = 0.002
    rest_angular_speed: float = 0.01
    rest_time: float = 0.1

    def __post_init__(self):
        positive = ("gravity", "density", "surface_friction", "spinning_friction", "timestep",
                    "solver_iterations", "contact_slop", "settle_time", "extraction_speed",
                    "monitor_time", "depth_min", "sample_retries", "per_pick_cost",
                    "max_speed", "rest_time", "disturbance_reference_volume")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidInput(f"config value {name} must be positive")
        if self.disturbance_force_std < 0:
            raise InvalidInput("disturbance_force_std must be non-negative")
        if self.sample_vibration_trials < 0:
            raise InvalidInput("sample_vibration_trials must be non-negative")
        if self.sample_vibration_time < 0:
            raise InvalidInput("sample_vibration_time must be non-negative")
        if self.timestep > 1.0 / 120.0 + 1e-15:
            raise InvalidInput("timestep must not exceed 1/120 s")

    def steps_for(self, duration: float) -> int:
        return max(1, int(math.ceil(duration / self.timestep - 1e-9)))

    @property
    def rest_steps(self) -> int:
        return self.steps_for(self.rest_time) if self.rest_exit else 0

    def params(self) -> np.ndarray:
        p = np.zeros(K.N_PARAMS)
        p[K.P_GRAVITY] = self.gravity
        p[K.P_DT] = self.timestep
        p[K.P_MU] = self.surface_friction
        p[K.P_MU_SPIN] = self.spinning_friction
        p[K.P_SLOP] = self.contact_slop
        p[K.P_PEN_ALLOW] = self.penetration_allowance
        p[K.P_BETA] = self.correction_factor
        p[K.P_ITERS] = self.solver_iterations
        p[K.P_POS_ITERS] = self.position_iterations
        p[K.P_EXTRACT_SPEED] = self.extraction_speed
        p[K.P_REST_LIN] = self.rest_linear_speed
        p[K.P_REST_ANG] = self.rest_angular_speed
        p[K.P_MAX_SPEED] = self.max_speed
        p[K.P_WARM_TOL] = self.warm_start_tolerance
        return p

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        defaults = cls()
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = type(getattr(defaults, key))(value)
        return cls(**kwargs)


@dataclass
class Trace:
    """Per-step record of a stretch of simulation (box bodies only)."""
    speed: np.ndarray
    spin: np.ndarray
    positions: np.ndarray
    quats: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, n: int, with_quats: bool = False) -> "Trace":
        return cls(np.zeros((0, n)), np.zeros((0, n)), np.zeros((0, n, 3)),
                   np.zeros((0, n, 4)) if with_quats else None)

    def __len__(self):
        return self.speed.shape[0]

    def extend(self, other: "Trace") -> "Trace":
        quats = None
        if self.quats is not None and other.quats is not None:
            quats = np.concatenate([self.quats, other.quats])
        return Trace(np.concatenate([self.speed, other.speed]),
                     np.concatenate([self.spin, other.spin]),
                     np.concatenate([self.positions, other.positions]), quats)


@dataclass
class WorldState:
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    angvel: np.ndarray
    kind: np.ndarray
    elapsed: float
    steps: int
    rng_state: dict
    wc_pair: np.ndarray
    wc_local: np.ndarray
    wc_imp: np.ndarray
    wc_count: np.ndarray
    pending: Optional[np.ndarray]


class World:
    """Mutable simulation state for one scene.

    Boxes occupy the first ``n_boxes`` body slots in scene order; the static
    shelf slabs follow.
    """

    def __init__(self, scene: Scene, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()
        self.shelf = scene.shelf
        self.ids = [b.id for b in scene.boxes]
        self._index = {b.id: i for i, b in enumerate(scene.boxes)}
        statics = shelf_colliders(scene.shelf)
        self.static_ids = [s[0] for s in statics]
        nb = len(scene.boxes)
        n = nb + len(statics)
        self.n_boxes = nb
        self.pos = np.zeros((n, 3))
        self.quat = np.zeros((n, 4))
        self.vel = np.zeros((n, 3))
        self.angvel = np.zeros((n, 3))
        self.half = np.zeros((n, 3))
        self.inv_mass = np.zeros(n)
        self.inv_inertia = np.zeros((n, 3))
        self.kind = np.full(n, K.KIND_STATIC, dtype=np.int64)
        density = self.config.density
        for i, b in enumerate(scene.boxes):
            self.pos[i] = b.position
            self.quat[i] = b.quat
            self.vel[i] = b.linear_velocity
            self.angvel[i] = b.angular_velocity
            self.half[i] = b.half_extents
            m = b.mass(density)
            hx, hy, hz = b.half_extents
            self.inv_mass[i] = 1.0 / m
            self.inv_inertia[i] = [3.0 / (m * (hy * hy + hz * hz)),
                                   3.0 / (m * (hx * hx + hz * hz)),
                                   3.0 / (m * (hx * hx + hy * hy))]
            self.kind[i] = K.KIND_REMOVED if b.removed else K.KIND_DYNAMIC
        for j, (_, center, half) in enumerate(statics):
            self.pos[nb + j] = center
            self.quat[nb + j] = (1.0, 0.0, 0.0, 0.0)
            self.half[nb + j] = half
        self.params = self.config.params()
        self.elapsed = 0.0
        self.steps = 0
        self.rng = np.random.Generator(np.random.PCG64(self.config.rng_seed))
        cap = max(64, 24 * n)
        self._wc_pair = np.zeros((cap, 2), dtype=np.int64)
        self._wc_local = np.zeros((cap, 3))
        self._wc_imp = np.zeros((cap, 5))
        self._wc_count = np.zeros(1, dtype=np.int64)
        self._pending: Optional[np.ndarray] = None
        self.snapshots: list = []

    # -- bookkeeping -------------------------------------------------------
    def index(self, box_id) -> int:
        try:
            return self._index[box_id]
        except KeyError:
            raise UnknownBox(box_id) from None

    def is_removed(self, box_id) -> bool:
        return self.kind[self.index(box_id)] == K.KIND_REMOVED

    @property
    def driven(self) -> Optional[str]:
        for i in range(self.n_boxes):
            if self.kind[i] == K.KIND_DRIVEN:
                return self.ids[i]
        return None

    def active_ids(self) -> list:
        return [bid for i, bid in enumerate(self.ids) if self.kind[i] != K.KIND_REMOVED]

    def box_positions(self) -> np.ndarray:
        return self.pos[:self.n_boxes].copy()

    def kinetic_energy(self) -> float:
        total = 0.0
        for i in range(self.n_boxes):
            if self.kind[i] != K.KIND_DYNAMIC:
                continue
            m = 1.0 / self.inv_mass[i]
            total += 0.5 * m * float(self.vel[i] @ self.vel[i])
            # world-frame angular velocity into body frame
            from .geometry import quat_matrix
            wb = quat_matrix(self.quat[i]).T @ self.angvel[i]
            total += 0.5 * float(np.sum(wb * wb / self.inv_inertia[i]))
        return total

    def momentum(self) -> np.ndarray:
        p = np.zeros(3)
        for i in range(self.n_boxes):
            if self.kind[i] == K.KIND_DYNAMIC:
                p += self.vel[i] / self.inv_mass[i]
        return p

    def to_scene(self) -> Scene:
        boxes = []
        for i, bid in enumerate(self.ids):
            q = tuple(float(c) for c in self.quat[i])
            boxes.append(RigidBox(bid, tuple(self.half[i]), tuple(self.pos[i]), yaw=quat_yaw(q),
                                  linear_velocity=tuple(self.vel[i]),
                                  angular_velocity=tuple(self.angvel[i]),
                                  removed=bool(self.kind[i] == K.KIND_REMOVED), orientation=q))
        return Scene(self.shelf, tuple(boxes))

    # -- snapshots ---------------------------------------------------------
    def snapshot(self) -> WorldState:
        return WorldState(self.pos.copy(), self.quat.copy(), self.vel.copy(), self.angvel.copy(),
                          self.kind.copy(), self.elapsed, self.steps,
                          self.rng.bit_generator.state, self._wc_pair.copy(),
                          self._wc_local.copy(), self._wc_imp.copy(), self._wc_count.copy(),
                          None if self._pending is None else self._pending.copy())

    def restore(self, state: WorldState) -> "World":
        self.pos[:] = state.pos
        self.quat[:] = state.quat
        self.vel[:] = state.vel
        self.angvel[:] = state.angvel
        self.kind[:] = state.kind
        self.elapsed = state.elapsed
        self.steps = state.steps
        self.rng.bit_generator.state = state.rng_state
        self._wc_pair[:] = state.wc_pair
        self._wc_local[:] = state.wc_local
        self._wc_imp[:] = state.wc_imp
        self._wc_count[:] = state.wc_count
        self._pending = None if state.pending is None else state.pending.copy()
        return self

    def push(self) -> None:
        self.snapshots.append(self.snapshot())

    def pop(self) -> "World":
        return self.restore(self.snapshots.pop())

    def reseed(self, seed: int) -> None:
        self.rng = np.random.Generator(np.random.PCG64(seed))

    # -- stepping ----------------------------------------------------------
    def _draw_forces(self, nsteps: int) -> np.ndarray:
        n = self.pos.shape[0]
        out = np.zeros((nsteps, n, 3))
        std = self.config.disturbance_force_std
        if std > 0.0:
            ref_mass = self.config.density * self.config.disturbance_reference_volume
            scale = (1.0 / self.inv_mass[:self.n_boxes]) / ref_mass
            out[:, :self.n_boxes] = self.rng.normal(0.0, std, (nsteps, self.n_boxes, 3)) \
                * scale[None, :, None]
        return out

    def inject_disturbance(self) -> "World":
        """Queue one random force per box for the next step."""
        if self.driven is None:
            raise InvalidInput("disturbances are injected only during an extraction")
        self._pending = self._draw_forces(1)
        return self

    def _run(self, nsteps: int, forces: np.ndarray, record: bool, with_quats: bool,
             stop_on_clear: bool, rest_steps: int):
        nb = self.n_boxes
        n = self.pos.shape[0]
        rows = nsteps if record else 0
        hs = np.zeros((rows, n))
        hw = np.zeros((rows, n))
        hp = np.zeros((rows, n, 3))
        hq = np.zeros((rows if with_quats else 0, n, 4))
        done, status = K.run_steps(self.pos, self.quat, self.vel, self.angvel, self.half,
                                   self.inv_mass, self.inv_inertia, self.kind, self.params,
                                   forces, nsteps, stop_on_clear, rest_steps,
                                   self._wc_pair, self._wc_local, self._wc_imp, self._wc_count,
                                   hs, hw, hp, hq)
        self.steps += done
        self.elapsed = self.steps * self.config.timestep
        if status == K.STATUS_EXPLODED:
            raise SimulationExploded(f"a body exceeded {self.config.max_speed} m/s "
                                     f"at t={self.elapsed:.4f} s")
        trace = None
        if record:
            trace = Trace(hs[:done, :nb].copy(), hw[:done, :nb].copy(), hp[:done, :nb].copy(),
                          hq[:done, :nb].copy() if with_quats else None)
        return done, status, trace

    def step(self) -> "World":
        forces = self._pending if self._pending is not None else np.zeros((0, 0, 3))
        self._pending = None
        self._run(1, forces, False, False, False, 0)
        return self

    def advance(self, nsteps: int, disturb: bool = False, record: bool = False,
                with_quats: bool = False, stop_on_clear: bool = False,
                rest_exit: bool = False):
        """Run up to ``nsteps`` steps; returns (steps_done, status, trace or None)."""
        if nsteps <= 0:
            return 0, K.STATUS_DONE, (Trace.empty(self.n_boxes, with_quats) if record else None)
        if disturb and self.config.disturbance_force_std > 0.0:
            forces = self._draw_forces(nsteps)
        else:
            forces = np.zeros((0, 0, 3))
        if self._pending is not None:
            if forces.shape[0] == 0:
                forces = np.zeros((nsteps,) + self._pending.shape[1:])
            forces[0] += self._pending[0]
            self._pending = None
        rest = self.config.rest_steps if rest_exit else 0
        return self._run(nsteps, forces, record, with_quats, stop_on_clear, rest)

    def settle(self, duration: float, rest_exit: bool = False) -> dict:
        """Step for ``duration`` seconds; returns net centroid displacement per box id."""
        if duration <= 0:
            raise InvalidInput("settle duration must be positive")
        start = self.box_positions()
        self.advance(self.config.steps_for(duration), rest_exit=rest_exit)
        moved = np.linalg.norm(self.box_positions() - start, axis=1)
        return {bid: float(moved[i]) for i, bid in enumerate(self.ids)
                if self.kind[i] != K.KIND_REMOVED}

    def begin_extraction(self, box_id) -> "World":
        i = self.index(box_id)
        if self.kind[i] == K.KIND_REMOVED:
            raise AlreadyRemoved(f"box {box_id!r} was already removed")
        if self.driven is not None:
            raise InvalidInput("another extraction is already in progress")
        self.kind[i] = K.KIND_DRIVEN
        self.vel[i] = (0.0, 0.0, -self.config.extraction_speed)
        self.angvel[i] = 0.0
        return self

    def extraction_steps_bound(self, box_id) -> int:
        """Generous step budget for pulling ``box_id`` clear of the front plane."""
        from .geometry import quat_matrix
        i = self.index(box_id)
        R = quat_matrix(self.quat[i])
        zmax = self.pos[i, 2] + float(np.abs(R[2]) @ self.half[i])
        return self.config.steps_for(1.5 * (zmax + 0.01) / self.config.extraction_speed)

    def extract(self, box_id, disturb: bool = True, record: bool = False,
                with_quats: bool = False):
        """Pull ``box_id`` until it clears the shelf front; returns the trace if recorded."""
        self.begin_extraction(box_id)
        bound = self.extraction_steps_bound(box_id)
        done, status, trace = self.advance(bound, disturb=disturb, record=record,
                                           with_quats=with_quats, stop_on_clear=True)
        i = self.index(box_id)
        if self.kind[i] != K.KIND_REMOVED:
            # a jammed box is taken out by the gripper at the end of its stroke
            self.kind[i] = K.KIND_REMOVED
            self.vel[i] = 0.0
            self.angvel[i] = 0.0
        return trace

    def remove(self, box_id) -> "World":
        """Delete a box instantly (no pull)."""
        i = self.index(box_id)
        if self.kind[i] == K.KIND_REMOVED:
            raise AlreadyRemoved(f"box {box_id!r} was already removed")
        self.kind[i] = K.KIND_REMOVED
        self.vel[i] = 0.0
        self.angvel[i] = 0.0
        return self
