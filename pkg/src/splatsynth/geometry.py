"""Core geometric types: quaternion calculus, poses, and trajectories.

Quaternions are stored as length-4 numpy arrays in [w, x, y, z] order and
canonicalized so that w >= 0 (tie broken by x >= 0), which makes serialized
trajectories byte-stable and handles the double cover deterministically.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8


class TrajectoryError(ValueError):
    """Raised when trajectory data violates its structural invariants."""


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so that w >= 0 (tie: x >= 0); q and -q encode the same rotation."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0 or (q[0] == 0.0 and q[1] < 0.0):
        return -q
    return q.copy()


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    return quat_canonical(q / n)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (both [w,x,y,z])."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, with norm in [0, pi].

    quat_exp(quat_log(q)) recovers q up to the double-cover sign.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = min(q[0], 1.0)
    v = q[1:4]
    n = np.linalg.norm(v)
    if n < SMALL_ANGLE:
        # second-order series of 2*atan2(n, w)/n about n = 0
        scale = 2.0 / w * (1.0 - n * n / (3.0 * w * w))
    else:
        scale = 2.0 * math.atan2(n, w) / n
    return v * scale


def quat_exp(r: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation of angle ||r|| about r/||r||."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < SMALL_ANGLE:
        # second-order series: sin(t/2)/t ~ 1/2 - t^2/48
        scale = 0.5 - theta * theta / 48.0
        q = np.array([1.0 - theta * theta / 8.0, *(r * scale)])
    else:
        half = 0.5 * theta
        q = np.array([math.cos(half), *(r * (math.sin(half) / theta))])
    return quat_normalize(q)


def quat_geodesic_distance(q1: np.ndarray, q2: np.ndarray) -> float:
    """2*arccos(|q1.q2|): rotation angle between orientations, in [0, pi]."""
    d = abs(float(np.dot(q1, q2)))
    return 2.0 * math.acos(min(d, 1.0))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero axis")
    return quat_exp(axis / n * angle)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def unwrap_rotation_vectors(rs) -> np.ndarray:
    """Make a sequence of rotation vectors elementwise continuous.

    Consecutive quat_log outputs can jump by a 2*pi multiple along the shared
    axis when the angle crosses pi (quaternion branch flip).  Each element is
    replaced by the branch r + 2*pi*k*r_hat, k in {-1, 0, 1}, closest to its
    predecessor.
    """
    rs = np.asarray(rs, dtype=float)
    out = rs.copy()
    for t in range(1, len(out)):
        r = rs[t]
        n = np.linalg.norm(r)
        best = r
        if n > SMALL_ANGLE:
            r_hat = r / n
            best_d = np.linalg.norm(r - out[t - 1])
            for k in (-1, 1):
                cand = r + 2.0 * math.pi * k * r_hat
                d = np.linalg.norm(cand - out[t - 1])
                if d < best_d:
                    best_d = d
                    best = cand
        out[t] = best
    return out


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion [w,x,y,z]

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))
        if not np.all(np.isfinite(self.position)) or self.position.shape != (3,):
            raise ValueError("position must be a finite 3-vector")


_CSV_FIELDS = ["t", "x", "y", "z", "qw", "qx", "qy", "qz", "gripper", "split"]


@dataclass
class Trajectory:
    """Timestamped end-effector poses with gripper state and split markers.

    splits is an ordered index list; the first split is always the first
    sample index and the last is the last sample index, so K segments are
    bounded by K+1 splits.
    """

    times: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    gripper: np.ndarray
    splits: list = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.quaternions = np.asarray(self.quaternions, dtype=float)
        self.gripper = np.asarray(self.gripper, dtype=float)
        n = len(self.times)
        if self.positions.shape != (n, 3) or self.quaternions.shape != (n, 4):
            raise TrajectoryError("inconsistent sample array shapes")
        if self.gripper.shape != (n,):
            raise TrajectoryError("gripper channel length mismatch")
        if n < 2:
            raise TrajectoryError("trajectory needs at least 2 samples")
        if np.any(np.diff(self.times) <= 0):
            raise TrajectoryError("times must be strictly increasing")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.positions)):
            raise TrajectoryError("non-finite sample values")
        norms = np.linalg.norm(self.quaternions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise TrajectoryError("orientations must be unit quaternions")
        self.quaternions = np.array([quat_canonical(q / nq) for q, nq in zip(self.quaternions, norms)])
        if not self.splits:
            self.splits = [0, n - 1]
        self.splits = [int(s) for s in self.splits]
        if self.splits[0] != 0 or self.splits[-1] != n - 1:
            raise TrajectoryError("splits must start at 0 and end at the last index")
        if any(b <= a for a, b in zip(self.splits, self.splits[1:])):
            raise TrajectoryError("splits must be strictly increasing")
        if any(b - a < 1 for a, b in zip(self.splits, self.splits[1:])):
            raise TrajectoryError("each segment needs at least 2 samples")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_segments(self) -> int:
        return len(self.splits) - 1

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def arc_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], self.quaternions[i])

    def segment(self, k: int) -> "Trajectory":
        """Sub-trajectory for segment k (inclusive of both boundary samples)."""
        a, b = self.splits[k], self.splits[k + 1]
        return Trajectory(
            self.times[a:b + 1],
            self.positions[a:b + 1],
            self.quaternions[a:b + 1],
            self.gripper[a:b + 1],
        )

    # ---- serialization --------------------------------------------------

    def to_csv(self) -> str:
        split_set = set(self.splits)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_CSV_FIELDS)
        for i in range(len(self)):
            w.writerow([
                repr(float(self.times[i])),
                *[repr(float(v)) for v in self.positions[i]],
                *[repr(float(v)) for v in self.quaternions[i]],
                repr(float(self.gripper[i])),
                1 if i in split_set else 0,
            ])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def from_rows(cls, rows) -> "Trajectory":
        times, pos, quat, grip, splits = [], [], [], [], []
        for i, r in enumerate(rows):
            times.append(r["t"])
            pos.append([r["x"], r["y"], r["z"]])
            quat.append([r["qw"], r["qx"], r["qy"], r["qz"]])
            grip.append(r["gripper"])
            if int(r["split"]):
                splits.append(i)
        return cls(np.array(times), np.array(pos), np.array(quat), np.array(grip), splits)

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != _CSV_FIELDS:
                raise TrajectoryError(f"bad trajectory header in {path}: expected {_CSV_FIELDS}")
            rows = [{k: float(v) for k, v in row.items()} for row in reader]
        return cls.from_rows(rows)

    def to_json(self) -> str:
        samples = []
        split_set = set(self.splits)
        for i in range(len(self)):
            samples.append({
                "t": float(self.times[i]),
                "x": float(self.positions[i][0]),
                "y": float(self.positions[i][1]),
                "z": float(self.positions[i][2]),
                "qw": float(self.quaternions[i][0]),
                "qx": float(self.quaternions[i][1]),
                "qy": float(self.quaternions[i][2]),
                "qz": float(self.quaternions[i][3]),
                "gripper": float(self.gripper[i]),
                "split": 1 if i in split_set else 0,
            })
        return json.dumps({"samples": samples}, indent=2, sort_keys=True)

    @classmethod
    def load_json(cls, path) -> "Trajectory":
        with open(path) as f:
            data = json.load(f)
        if "samples" not in data:
            raise TrajectoryError(f"missing 'samples' key in {path}")
        return cls.from_rows(data["samples"])

    @classmethod
    def load(cls, path) -> "Trajectory":
        if str(path).endswith(".json"):
            return cls.load_json(path)
        return cls.load_csv(path)
