"""Conversion between continuous end-effector states and the integer action space.

A single-arm action lives in Z^7: three voxel indices in [0, 99], three
5-degree rotation bins in [0, 71], and a binary gripper bit (0=closed,
1=open). A bimanual action concatenates right then left, giving Z^14.
All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from scipy.spatial.transform import Rotation

from .errors import GimbalWarning, OutOfWorkspace, RangeError

VOXELS_PER_AXIS = 100
ROTATION_BINS = 72
ROTATION_BIN_DEG = 5.0

# Nudge applied before flooring angle/position quotients so that exact bin
# boundaries (e.g. a rotation of exactly 5 deg) land in the upper bin even
# when the quaternion->Euler round trip loses the last ulp.
_BIN_EPS = 1e-9


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned box bounding reachable end-effector positions, in meters."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        if len(self.min) != 3 or len(self.max) != 3:
            raise ValueError("bounds need exactly three axes")
        for lo, hi in zip(self.min, self.max):
            if not lo < hi:
                raise ValueError(f"degenerate bounds: min {self.min} max {self.max}")

    @property
    def span(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.min, self.max))

    def contains(self, position) -> bool:
        return all(lo <= p <= hi for p, lo, hi in zip(position, self.min, self.max))


DEFAULT_BOUNDS = WorkspaceBounds(min=(-0.3, -0.5, 0.6), max=(0.7, 0.5, 1.6))


@dataclass(frozen=True)
class ContinuousPose:
    """End-effector position, unit quaternion (x, y, z, w), and gripper aperture."""

    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]
    gripper: float

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.orientation))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {norm} not within 1e-6 of 1")
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError(f"gripper aperture {self.gripper} outside [0, 1]")


@dataclass(frozen=True)
class DiscreteAction:
    """One arm's discretized keyframe command: voxel triple, rotation bins, gripper bit."""

    voxel: tuple[int, int, int]
    rot: tuple[int, int, int]
    gripper: int

    def __post_init__(self):
        for v in self.voxel:
            if not 0 <= v < VOXELS_PER_AXIS:
                raise RangeError(f"voxel component {v} outside [0, {VOXELS_PER_AXIS - 1}]")
        for r in self.rot:
            if not 0 <= r < ROTATION_BINS:
                raise RangeError(f"rotation bin {r} outside [0, {ROTATION_BINS - 1}]")
        if self.gripper not in (0, 1):
            raise RangeError(f"gripper bit {self.gripper} not in {{0, 1}}")

    def as_tuple(self) -> tuple[int, ...]:
        return (*self.voxel, *self.rot, self.gripper)

    @classmethod
    def from_tuple(cls, values) -> "DiscreteAction":
        values = tuple(int(v) for v in values)
        if len(values) != 7:
            raise RangeError(f"expected 7 components, got {len(values)}")
        return cls(voxel=values[0:3], rot=values[3:6], gripper=values[6])


@dataclass(frozen=True)
class BimanualAction:
    """Joint command for both arms; serializes right arm first."""

    right: DiscreteAction
    left: DiscreteAction

    def as_tuple(self) -> tuple[int, ...]:
        return self.right.as_tuple() + self.left.as_tuple()

    @classmethod
    def from_tuple(cls, values) -> "BimanualAction":
        values = tuple(int(v) for v in values)
        if len(values) != 14:
            raise RangeError(f"expected 14 components, got {len(values)}")
        return cls(
            right=DiscreteAction.from_tuple(values[0:7]),
            left=DiscreteAction.from_tuple(values[7:14]),
        )

    def arm(self, name: str) -> DiscreteAction:
        if name == "right":
            return self.right
        if name == "left":
            return self.left
        raise ValueError(f"unknown arm {name!r}")


def voxelize(position, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> tuple[int, int, int]:
    """Map a continuous in-bounds position to its voxel index triple.

    Each axis maps via floor((p - min) / (max - min) * 99); only the exact
    upper bound reaches index 99, so the top bin is degenerate by design.
    Out-of-bounds positions are rejected rather than clamped: a silently
    clamped demo would corrupt the in-context pattern.
    """
    out = []
    for p, lo, hi in zip(position, bounds.min, bounds.max):
        if not lo <= p <= hi:
            raise OutOfWorkspace(f"position {tuple(position)} outside bounds on axis [{lo}, {hi}]")
        out.append(int(math.floor((p - lo) / (hi - lo) * (VOXELS_PER_AXIS - 1))))
    return tuple(out)


def devoxelize(voxel, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> tuple[float, float, float]:
    """Return the cell-center position for a voxel triple.

    Centers advance in steps of span/100 while the quantizer's cells are
    span/99 wide, so devoxelize(voxelize(p)) drifts low by up to
    (v + 50.5)/9900 of the span per axis (under 0.015 everywhere), and
    voxelize(devoxelize(v)) = v holds exactly for v <= 49.
    """
    out = []
    for v, lo, hi in zip(voxel, bounds.min, bounds.max):
        if not 0 <= v < VOXELS_PER_AXIS:
            raise RangeError(f"voxel component {v} outside [0, {VOXELS_PER_AXIS - 1}]")
        out.append(lo + (v + 0.5) / VOXELS_PER_AXIS * (hi - lo))
    return tuple(out)


def bin_rotation(quaternion) -> tuple[int, int, int]:
    """Bin a unit quaternion into three 5-degree intrinsic-xyz Euler bins.

    Angles are normalized into [0, 360) before binning. Quaternions are
    scalar-last (x, y, z, w). Emits GimbalWarning when the pitch is within
    1e-3 rad of +/-90 deg, where roll and yaw become degenerate.
    """
    norm = math.sqrt(sum(c * c for c in quaternion))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {norm} not within 1e-6 of 1")
    with warnings.catch_warnings():
        # scipy warns on exact gimbal lock; we emit our own typed flag below.
        warnings.simplefilter("ignore", UserWarning)
        angles = Rotation.from_quat(tuple(quaternion)).as_euler("XYZ", degrees=True)
    if abs(abs(math.radians(angles[1])) - math.pi / 2) < 1e-3:
        warnings.warn(
            f"pitch {angles[1]:.4f} deg is near gimbal lock; roll/yaw bins unreliable",
            GimbalWarning,
            stacklevel=2,
        )
    bins = []
    for a in angles:
        a = a % 360.0
        if a >= 360.0:
            a = 0.0
        b = int(math.floor(a / ROTATION_BIN_DEG + _BIN_EPS))
        bins.append(min(b, ROTATION_BINS - 1))
    return tuple(bins)


def unbin_rotation(rot) -> tuple[float, float, float, float]:
    """Reconstruct the bin-center rotation as a scalar-last unit quaternion.

    Bin r maps to the center angle (r + 0.5) * 5 deg. bin_rotation composed
    with this is the identity exactly when the pitch bin's center angle lies
    in the canonical Euler band [0, 90) or (270, 360) deg, i.e. pitch bins
    0-17 and 54-71; outside it the xyz Euler chart cannot be inverted.
    """
    for r in rot:
        if not 0 <= r < ROTATION_BINS:
            raise RangeError(f"rotation bin {r} outside [0, {ROTATION_BINS - 1}]")
    angles = [(r + 0.5) * ROTATION_BIN_DEG for r in rot]
    return tuple(Rotation.from_euler("XYZ", angles, degrees=True).as_quat())


def discretize_pose(pose: ContinuousPose, bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> DiscreteAction:
    """Discretize a full pose; the gripper bit is 1 (open) iff aperture >= 0.5."""
    return DiscreteAction(
        voxel=voxelize(pose.position, bounds),
        rot=bin_rotation(pose.orientation),
        gripper=1 if pose.gripper >= 0.5 else 0,
    )
