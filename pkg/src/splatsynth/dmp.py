"""Dynamic Movement Primitives: per-segment fitting and goal-retargeted rollout.

Position uses one transformation system per Cartesian axis; orientation is
modeled in the rotation-vector chart r(t) = log(q0^-1 * q(t)) with a 3D DMP,
and reconstructed as q(t) = q0 * exp(r(t)).

Transformation system (tau-scaled form):

    tau * dv/dt = alpha_z * (beta_z * (g - y) - v) + f(s)
    tau * dy/dt = v
    tau * ds/dt = -alpha_s * s,   s(0) = 1

with a normalized-RBF forcing term f(s) = (sum w_i psi_i / sum psi_i) * s * (g - y0)
whose weights are fit by ridge regression against the demonstrated
accelerations.  Retargeting changes only the attractor and the (g - y0)
scaling; the weights stay fixed, preserving the demonstrated shape and phase.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Pose,
    Trajectory,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    unwrap_rotation_vectors,
)

DEFAULT_ALPHA_Z = 25.0
DEFAULT_ALPHA_S = 4.0
DEFAULT_N_BASIS = 30
DEFAULT_RIDGE_LAMBDA = 1e-6
DEFAULT_HORIZON_FACTOR = 1.25
DEGENERATE_GOAL_TOL = 1e-6
REST_PAD_SAMPLES = 50
REST_PAD_WEIGHT = 10.0


class FitError(RuntimeError):
    """Raised when a segment cannot be fit (too short or rank-deficient)."""


class RolloutError(RuntimeError):
    """Raised when integration produces a non-finite state."""


@dataclass(frozen=True)
class CanonicalSystem:
    alpha_s: float = DEFAULT_ALPHA_S
    tau: float = 1.0

    def __post_init__(self):
        if self.alpha_s <= 0 or self.tau <= 0:
            raise ValueError("alpha_s and tau must be positive")


def canonical_phase(cs: CanonicalSystem, t: float) -> float:
    """Closed-form phase s(t) = exp(-alpha_s * t / tau)."""
    return math.exp(-cs.alpha_s * t / cs.tau)


def rbf_centers_widths(n_basis: int, alpha_s: float):
    """Centers uniform in time mapped through the phase; widths from spacing."""
    i = np.arange(n_basis)
    centers = np.exp(-alpha_s * i / (n_basis - 1))
    gaps = np.diff(centers)
    widths = 1.0 / (2.0 * gaps ** 2)
    widths = np.append(widths, widths[-1])
    return centers, widths


@dataclass(frozen=True)
class ForcingTerm:
    centers: np.ndarray  # (n,), strictly decreasing in (0, 1]
    widths: np.ndarray   # (n,)
    weights: np.ndarray  # (dims, n)

    def basis(self, s: float) -> np.ndarray:
        psi = np.exp(-self.widths * (s - self.centers) ** 2)
        return psi * (s / np.sum(psi))

    def evaluate(self, s: float, scale: np.ndarray) -> np.ndarray:
        """f(s) per output dimension; scale carries the (g - y0) factor."""
        return (self.weights @ self.basis(s)) * scale


@dataclass(frozen=True)
class DmpModel:
    canonical: CanonicalSystem
    alpha_z: float
    beta_z: float
    position_forcing: ForcingTerm
    orientation_forcing: ForcingTerm
    y0: np.ndarray               # demo start position
    goal: np.ndarray             # demo goal position
    q0: np.ndarray               # demo start orientation
    q_goal: np.ndarray           # demo goal orientation
    rot_goal: np.ndarray         # log(q0^-1 * q_goal), unwrapped branch
    pos_scale: np.ndarray        # per-axis forcing scale used at fit time
    pos_degenerate: np.ndarray   # bool per axis: goal ~= start at fit time
    rot_scale: np.ndarray
    rot_degenerate: np.ndarray
    duration: float

    def to_dict(self) -> dict:
        return {
            "alpha_s": self.canonical.alpha_s,
            "tau": self.canonical.tau,
            "alpha_z": self.alpha_z,
            "beta_z": self.beta_z,
            "centers": self.position_forcing.centers.tolist(),
            "widths": self.position_forcing.widths.tolist(),
            "position_weights": self.position_forcing.weights.tolist(),
            "orientation_weights": self.orientation_forcing.weights.tolist(),
            "y0": self.y0.tolist(),
            "goal": self.goal.tolist(),
            "q0": self.q0.tolist(),
            "q_goal": self.q_goal.tolist(),
            "rot_goal": self.rot_goal.tolist(),
            "pos_scale": self.pos_scale.tolist(),
            "pos_degenerate": [bool(v) for v in self.pos_degenerate],
            "rot_scale": self.rot_scale.tolist(),
            "rot_degenerate": [bool(v) for v in self.rot_degenerate],
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DmpModel":
        cs = CanonicalSystem(alpha_s=d["alpha_s"], tau=d["tau"])
        centers = np.asarray(d["centers"], dtype=float)
        widths = np.asarray(d["widths"], dtype=float)
        return cls(
            canonical=cs,
            alpha_z=d["alpha_z"],
            beta_z=d["beta_z"],
            position_forcing=ForcingTerm(centers, widths, np.asarray(d["position_weights"], dtype=float)),
            orientation_forcing=ForcingTerm(centers, widths, np.asarray(d["orientation_weights"], dtype=float)),
            y0=np.asarray(d["y0"], dtype=float),
            goal=np.asarray(d["goal"], dtype=float),
            q0=np.asarray(d["q0"], dtype=float),
            q_goal=np.asarray(d["q_goal"], dtype=float),
            rot_goal=np.asarray(d["rot_goal"], dtype=float),
            pos_scale=np.asarray(d["pos_scale"], dtype=float),
            pos_degenerate=np.asarray(d["pos_degenerate"], dtype=bool),
            rot_scale=np.asarray(d["rot_scale"], dtype=float),
            rot_degenerate=np.asarray(d["rot_degenerate"], dtype=bool),
            duration=d["duration"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _nonuniform_gradient(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # np.gradient uses the exact three-point weights on non-uniform grids
    return np.gradient(y, t, axis=0)


def _fit_channels(values: np.ndarray, times: np.ndarray, s: np.ndarray,
                  goal: np.ndarray, y0: np.ndarray, tau: float,
                  alpha_z: float, beta_z: float,
                  centers: np.ndarray, widths: np.ndarray,
                  ridge_lambda: float):
    """Ridge-fit forcing weights for a multi-channel signal; returns
    (weights (dims, n), scale (dims,), degenerate (dims,))."""
    vel = _nonuniform_gradient(values, times)
    acc = _nonuniform_gradient(vel, times)

    def _design(phase):
        psi = np.exp(-widths[None, :] * (phase[:, None] - centers[None, :]) ** 2)
        return psi * (phase / np.sum(psi, axis=1))[:, None]

    basis = _design(s)  # (T, n)
    # Anchor the small-phase tail: the demo ends at rest at its goal, so the
    # continuation beyond tau has zero target forcing.  Weighted rest rows on
    # s in (s(tau), s(1.5*tau)] pin the otherwise underdetermined late weights
    # so retargeted rollouts settle onto the new goal.
    alpha_s = -math.log(s[-1])  # s = exp(-alpha_s * t / tau) with t[-1] = tau
    pad_phase = np.exp(-alpha_s * np.linspace(1.0, 1.5, REST_PAD_SAMPLES + 1)[1:])
    pad = REST_PAD_WEIGHT * _design(pad_phase)
    dims = values.shape[1]
    n = len(centers)
    weights = np.zeros((dims, n))
    scale = np.zeros(dims)
    degenerate = np.zeros(dims, dtype=bool)
    for c in range(dims):
        amp = goal[c] - y0[c]
        if abs(amp) < DEGENERATE_GOAL_TOL:
            degenerate[c] = True
            amp = max(abs(amp), float(np.ptp(values[:, c])), DEGENERATE_GOAL_TOL)
        scale[c] = amp
        f_target = tau ** 2 * acc[:, c] - alpha_z * (beta_z * (goal[c] - values[:, c]) - tau * vel[:, c])
        phi = np.vstack([basis, pad]) * amp
        rhs = np.concatenate([f_target, np.zeros(len(pad))])
        A = phi.T @ phi + ridge_lambda * np.eye(n)
        if ridge_lambda == 0.0 and np.linalg.cond(A) > 1e12:
            raise FitError("singular normal equations with ridge_lambda=0")
        weights[c] = np.linalg.solve(A, phi.T @ rhs)
    return weights, scale, degenerate


def fit_dmp(segment: Trajectory, n_basis: int = DEFAULT_N_BASIS,
            ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
            alpha_z: float = DEFAULT_ALPHA_Z,
            alpha_s: float = DEFAULT_ALPHA_S) -> DmpModel:
    """Fit position and orientation DMPs to one demonstration segment."""
    if len(segment) < max(10, n_basis):
        raise FitError(f"segment too short: {len(segment)} samples, need {max(10, n_basis)}")
    beta_z = alpha_z / 4.0  # critical damping
    times = segment.times - segment.times[0]
    tau = float(times[-1])
    cs = CanonicalSystem(alpha_s=alpha_s, tau=tau)
    s = np.exp(-alpha_s * times / tau)
    centers, widths = rbf_centers_widths(n_basis, alpha_s)

    y0 = segment.positions[0].copy()
    goal = segment.positions[-1].copy()
    pos_w, pos_scale, pos_deg = _fit_channels(
        segment.positions, times, s, goal, y0, tau, alpha_z, beta_z,
        centers, widths, ridge_lambda)

    q0 = segment.quaternions[0]
    q0_inv = quat_conj(q0)
    rs = unwrap_rotation_vectors([quat_log(quat_mul(q0_inv, q)) for q in segment.quaternions])
    rot_goal = rs[-1].copy()
    rot_w, rot_scale, rot_deg = _fit_channels(
        rs, times, s, rot_goal, np.zeros(3), tau, alpha_z, beta_z,
        centers, widths, ridge_lambda)

    return DmpModel(
        canonical=cs,
        alpha_z=alpha_z,
        beta_z=beta_z,
        position_forcing=ForcingTerm(centers, widths, pos_w),
        orientation_forcing=ForcingTerm(centers, widths, rot_w),
        y0=y0, goal=goal, q0=q0, q_goal=segment.quaternions[-1],
        rot_goal=rot_goal,
        pos_scale=pos_scale, pos_degenerate=pos_deg,
        rot_scale=rot_scale, rot_degenerate=rot_deg,
        duration=tau,
    )


def _rollout_scale(degenerate: np.ndarray, fit_scale: np.ndarray,
                   new_amp: np.ndarray) -> np.ndarray:
    # degenerate-at-fit channels keep their stored scale; others rescale
    # with the new goal amplitude
    return np.where(degenerate, fit_scale, new_amp)


def rollout(model: DmpModel, new_start: Pose | None = None,
            new_goal: Pose | None = None, dt: float = 0.01,
            coupling=None,
            horizon_factor: float = DEFAULT_HORIZON_FACTOR) -> Trajectory:
    """Integrate the DMP with semi-implicit Euler for ceil(horizon*tau/dt) steps.

    coupling, when given, is called as coupling(step_index, position,
    velocity_m_per_s) and must return an extra acceleration added into the
    tau-scaled transformation dynamics (tau*dv/dt = a_dmp + a_coupling).
    Orientation is reconstructed as q0 * exp(r(t)).
    """
    tau = model.canonical.tau
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > tau / 50.0:
        raise ValueError(f"dt={dt} too coarse: must be <= tau/50 = {tau / 50.0}")
    start = new_start or Pose(model.y0, model.q0)
    goal = new_goal or Pose(model.goal, model.q_goal)

    y = start.position.astype(float).copy()
    v = np.zeros(3)
    q0 = start.orientation
    r = np.zeros(3)
    rv = np.zeros(3)
    rot_goal = quat_log(quat_mul(quat_conj(q0), goal.orientation))
    pos_scale = _rollout_scale(model.pos_degenerate, model.pos_scale,
                               goal.position - start.position)
    rot_scale = _rollout_scale(model.rot_degenerate, model.rot_scale, rot_goal)

    n_steps = math.ceil(horizon_factor * tau / dt)
    alpha_s = model.canonical.alpha_s
    az, bz = model.alpha_z, model.beta_z

    times = np.empty(n_steps + 1)
    positions = np.empty((n_steps + 1, 3))
    quaternions = np.empty((n_steps + 1, 4))
    times[0] = 0.0
    positions[0] = y
    quaternions[0] = q0

    s = 1.0
    for n in range(n_steps):
        a = az * (bz * (goal.position - y) - v) + model.position_forcing.evaluate(s, pos_scale)
        if coupling is not None:
            a = a + coupling(n, y, v / tau)
        a_r = az * (bz * (rot_goal - r) - rv) + model.orientation_forcing.evaluate(s, rot_scale)
        v = v + a * (dt / tau)
        y = y + v * (dt / tau)
        rv = rv + a_r * (dt / tau)
        r = r + rv * (dt / tau)
        s = s - alpha_s * s * (dt / tau)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(r))):
            raise RolloutError(f"non-finite state at step {n}")
        times[n + 1] = (n + 1) * dt
        positions[n + 1] = y
        quaternions[n + 1] = quat_mul(q0, quat_exp(r))

    return Trajectory(times, positions, quaternions,
                      np.zeros(n_steps + 1), [0, n_steps])
