"""Kinematic surrogate of the three-arm cooperative disk lift.

N grippers hold a disk at fixed angular stations ``phi_i = 2*pi*i/N`` on a
ring of radius ``R``. Each gripper has a radial offset ``rho``, a height
``h`` and a grip scalar ``g``. Its action ``(vertical, radial, grip)`` is
bounded by ``action_bound``: the vertical component is the per-step height
displacement, the radial and grip components are rates applied for one
control period ``dt``. The disk pose is the least-squares plane through the
gripper points, so every agent's action moves the shared object state
``(height, tilt)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ARM_DIM = 6
OBJECT_DIM = 2
ACTION_DIM = 3
GRIP_TOLERANCE = 0.5

# arm-state columns
RHO, HEIGHT, GRIP, D_RHO, D_HEIGHT, D_GRIP = range(ARM_DIM)


class TerminationReason(str, Enum):
    NONE = "none"
    GRIP_DEVIATION = "grip_deviation"
    CENTER_DEVIATION = "center_deviation"
    TILT_LIMIT = "tilt_limit"
    HORIZON = "horizon"

    @property
    def is_safety(self) -> bool:
        return self not in (TerminationReason.NONE, TerminationReason.HORIZON)


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int = 3
    grasp_radius: float = 0.5
    initial_height: float = 0.896
    target_height: float = 1.36
    horizon: int = 200
    dt: float = 0.25
    action_bound: float = 0.05
    grip_deviation_delta: float = 0.03
    center_deviation_eps: float = 0.05
    tilt_limit: float = math.pi / 4
    tilt_weight: float = 1.0

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 2:
            raise ValueError(f"n_agents must be an integer >= 2, got {self.n_agents}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        for name in ("grasp_radius", "initial_height", "target_height", "dt", "action_bound",
                     "grip_deviation_delta", "center_deviation_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.tilt_limit < math.pi / 2:
            raise ValueError("tilt_limit must lie in (0, pi/2)")
        if self.tilt_weight < 0:
            raise ValueError("tilt_weight must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)

    @property
    def stations(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_agents) / self.n_agents


@dataclass(frozen=True)
class ObjectState:
    height: float
    tilt: float

    def as_array(self) -> np.ndarray:
        return np.array([self.height, self.tilt])


@dataclass(frozen=True)
class EnvState:
    arms: np.ndarray  # (n_agents, 6)
    obj: ObjectState
    center_dev: np.ndarray  # (2,)
    step_count: int
    d0: np.ndarray  # initial grasp distances
    g0: np.ndarray  # initial grip scalars

    @property
    def n_agents(self) -> int:
        return self.arms.shape[0]


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    reward: float
    terminated: bool
    reason: TerminationReason

    @property
    def safety_violation(self) -> bool:
        return self.reason.is_safety


def object_pose(positions, grasp_radius: float) -> tuple[float, float, np.ndarray]:
    """Disk ``(height, tilt, center deviation)`` from gripper ``(rho, phi, h)`` triples.

    The disk plane is the least-squares fit ``z = a x + b y + c`` through the
    gripper points. Its height is taken at the points' centroid (the mean
    gripper height) and its tilt is ``arctan(|(a, b)|)``. The center deviation
    is the mean radial displacement vector relative to ``grasp_radius``.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("positions must be an (N, 3) array of (rho, phi, h)")
    n = p.shape[0]
    if n < 2:
        raise ValueError("at least two grippers are needed to define a pose")
    rho, phi, h = p[:, 0], p[:, 1], p[:, 2]
    cos, sin = np.cos(phi), np.sin(phi)
    x, y = rho * cos, rho * sin
    level = bool(np.all(h == h[0]))
    z = float(h[0]) if level else float(np.mean(h))
    xc, yc, hc = x - x.mean(), y - y.mean(), h - z
    sxx, syy, sxy = xc @ xc, yc @ yc, xc @ yc
    sxh, syh = xc @ hc, yc @ hc
    det = sxx * syy - sxy * sxy
    if level:
        grad = 0.0
    elif n >= 3 and det > 1e-12 * sxx * syy:
        a = (syy * sxh - sxy * syh) / det
        b = (sxx * syh - sxy * sxh) / det
        grad = math.hypot(a, b)
    else:
        # collinear points (N = 2): slope of the line fit along their common direction
        norm = math.hypot(xc[0], yc[0])
        t = (xc * xc[0] + yc * yc[0]) / norm if norm > 0 else np.zeros(n)
        stt = float(t @ t)
        grad = abs(float(t @ hc)) / stt if stt > 0 else 0.0
    tilt = math.atan(grad)
    off = rho - grasp_radius
    center = np.array([np.mean(off * cos), np.mean(off * sin)])
    return z, tilt, center


def _pose_from_arms(arms: np.ndarray, config: EnvConfig) -> tuple[float, float, np.ndarray]:
    pts = np.column_stack([arms[:, RHO], config.stations, arms[:, HEIGHT]])
    z, tilt, center = object_pose(pts, config.grasp_radius)
    if np.all(arms[:, RHO] == arms[0, RHO]):
        # equal offsets on evenly spaced stations cancel exactly
        center = np.zeros(2)
    return z, tilt, center


def reset(config: EnvConfig, seed: int = 0) -> EnvState:
    """Symmetric grasp at rest; the surrogate has no stochastic initial state, so ``seed`` is unused."""
    n = config.n_agents
    arms = np.zeros((n, ARM_DIM))
    arms[:, RHO] = config.grasp_radius
    arms[:, HEIGHT] = config.initial_height
    z, tilt, center = _pose_from_arms(arms, config)
    return EnvState(arms, ObjectState(z, tilt), center, 0, arms[:, RHO].copy(), arms[:, GRIP].copy())


def reward_of(obj: ObjectState, config: EnvConfig) -> float:
    # height reward saturates at the target so the optimum is to reach it, not to climb forever
    return min(obj.height, config.target_height) - config.tilt_weight * obj.tilt


def check_termination(state: EnvState, config: EnvConfig) -> TerminationReason:
    arms = state.arms
    if np.any(np.abs(arms[:, RHO] - state.d0) > config.grip_deviation_delta) or np.any(
        np.abs(arms[:, GRIP] - state.g0) > GRIP_TOLERANCE
    ):
        return TerminationReason.GRIP_DEVIATION
    if float(np.hypot(*state.center_dev)) > config.center_deviation_eps:
        return TerminationReason.CENTER_DEVIATION
    if state.obj.tilt > config.tilt_limit:
        return TerminationReason.TILT_LIMIT
    if state.step_count >= config.horizon:
        return TerminationReason.HORIZON
    return TerminationReason.NONE


def step(state: EnvState, actions, config: EnvConfig) -> StepResult:
    """Apply one joint action; ``actions[i] = (vertical, radial, grip)`` displacements."""
    a = np.asarray(actions, dtype=float)
    if a.ndim == 1 and a.size == ACTION_DIM * state.n_agents:
        a = a.reshape(state.n_agents, ACTION_DIM)
    if a.shape != (state.n_agents, ACTION_DIM):
        raise ValueError(f"expected {state.n_agents} action 3-vectors, got shape {a.shape}")
    a = np.clip(a, -config.action_bound, config.action_bound)
    # radial and grip commands are rates held over one control period; vertical is a direct displacement
    disp = np.column_stack([config.dt * a[:, 1], a[:, 0], config.dt * a[:, 2]])  # (rho, h, g) order
    arms = state.arms.copy()
    arms[:, :3] += disp
    arms[:, 3:] = disp
    z, tilt, center = _pose_from_arms(arms, config)
    new = EnvState(arms, ObjectState(z, tilt), center, state.step_count + 1, state.d0, state.g0)
    reason = check_termination(new, config)
    return StepResult(new, reward_of(new.obj, config), reason is not TerminationReason.NONE, reason)


def observe(state: EnvState, mode: str = "centralized", agent: int | None = None) -> np.ndarray:
    """Centralized: all arm states then ``(height, tilt)``; decentralized: own arm state then ``(height, tilt)``."""
    obj = state.obj.as_array()
    if mode == "centralized":
        return np.concatenate([state.arms.ravel(), obj])
    if mode == "decentralized":
        if agent is None or not 0 <= agent < state.n_agents:
            raise IndexError(f"agent index {agent} out of range for {state.n_agents} agents")
        return np.concatenate([state.arms[agent], obj])
    raise ValueError(f"unknown observation mode {mode!r}")


def noisy_observe(observation, noise: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Add Gaussian noise to the trailing ``(height, tilt)`` entries only."""
    sigma_h, sigma_t = noise
    if sigma_h < 0 or sigma_t < 0:
        raise ValueError("noise standard deviations must be non-negative")
    obs = np.array(observation, dtype=float, copy=True)
    if sigma_h == 0 and sigma_t == 0:
        return obs
    eps = rng.standard_normal(2)
    obs[-2] += sigma_h * eps[0]
    obs[-1] += sigma_t * eps[1]
    return obs


TRACE_HEADER = ("step", "height_m", "tilt_rad", "reward", "terminated", "reason")


def write_trace(path: str | Path, rows: Iterable[Sequence]) -> None:
    """Rows of ``(step, height, tilt, reward, terminated, reason)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for step_i, z, tilt, r, done, reason in rows:
            w.writerow([step_i, repr(float(z)), repr(float(tilt)), repr(float(r)), int(bool(done)),
                        getattr(reason, "value", reason)])


def rollout_trace(config: EnvConfig, action_fn, seed: int = 0) -> list[tuple]:
    """Roll an episode with ``action_fn(state) -> actions`` and return trace rows."""
    state = reset(config, seed)
    rows = [(0, state.obj.height, state.obj.tilt, 0.0, False, TerminationReason.NONE)]
    while True:
        res = step(state, action_fn(state), config)
        state = res.state
        rows.append((state.step_count, state.obj.height, state.obj.tilt, res.reward, res.terminated, res.reason))
        if res.terminated:
            return rows
