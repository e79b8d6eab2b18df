"""Pinhole-camera math: masked depth observations to 3D positions and boxes.

Camera frame convention: +x right, +y down, +z forward (depth axis).
Pixel coordinates are (u, v) with u along image columns and v along rows.
Depth values <= 0 mark invalid pixels; every valid depth is finite and
positive, in meters.

Back-projection of a pixel (u, v) at depth d through intrinsics
(fx, fy, cx, cy):

    x = (u - cx) * d / fx
    y = (v - cy) * d / fy
    z = d
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RegraspError

# A 3D record needs at least this many valid masked pixels; fewer is noise.
DEFAULT_MIN_VALID_PIXELS = 10

Point3 = tuple[float, float, float]

# Depth images are (height, width) float arrays; instance masks are
# (height, width) boolean arrays over the same pixel grid.
DepthImage = np.ndarray
InstanceMask = np.ndarray


class GeometryError(RegraspError):
    """Base for geometry failures."""


class NonPositiveDepthError(GeometryError):
    """A single-pixel back-projection was asked for an invalid depth."""


class OutOfBoundsError(GeometryError):
    """Pixel coordinates fall outside the image bounds."""


class InsufficientDepthError(GeometryError):
    """Too few masked pixels carry valid depth to form a 3D record."""


class EmptyMaskError(GeometryError):
    """An instance mask contains no true pixel."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class Box2:
    """Tight 2D pixel-aligned bounding rectangle (inclusive corners)."""

    u_min: int
    v_min: int
    u_max: int
    v_max: int

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError(f"degenerate box corners: {self}")

    def to_dict(self) -> dict:
        return {"u_min": self.u_min, "v_min": self.v_min, "u_max": self.u_max, "v_max": self.v_max}


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned 3D box in the camera frame, meters."""

    min: Point3
    max: Point3

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min, self.max)):
            raise ValueError(f"box min exceeds max: {self}")

    def contains(self, p: Point3, tol: float = 1e-9) -> bool:
        return all(lo - tol <= x <= hi + tol for x, lo, hi in zip(p, self.min, self.max))

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}


@dataclass(frozen=True)
class SpatialRecord:
    """Per-object 3D spatial summary produced from one masked observation."""

    object_id: str
    caption: str
    box2: Box2
    centroid: Point3
    box3: Aabb3

    def __post_init__(self):
        if not self.box3.contains(self.centroid):
            raise ValueError(f"centroid {self.centroid} outside box {self.box3}")


def backproject_pixel(u: float, v: float, depth: float, k: CameraIntrinsics) -> Point3:
    """Map one pixel plus depth to a 3D camera-frame point.

    Raises:
        NonPositiveDepthError: depth is not finite and positive.
        OutOfBoundsError: (u, v) lies outside the image.
    """
    if not math.isfinite(depth) or depth <= 0:
        raise NonPositiveDepthError(f"depth must be positive and finite, got {depth}")
    if not (0 <= u < k.width) or not (0 <= v < k.height):
        raise OutOfBoundsError(f"pixel ({u}, {v}) outside {k.width}x{k.height}")
    return ((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)


def project_point(point: Point3, k: CameraIntrinsics) -> Point3:
    """Forward pinhole map: camera-frame point to (u, v, depth).

    Inverse of :func:`backproject_pixel` for points with positive z.
    """
    x, y, z = point
    if z <= 0:
        raise NonPositiveDepthError(f"point depth must be positive, got z={z}")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy, z)


def box2_from_mask(mask: InstanceMask) -> Box2:
    """Tight bounding rectangle over the true pixels of a mask."""
    mask = np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(mask)
    if us.size == 0:
        raise EmptyMaskError("mask has no true pixel")
    return Box2(int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))


def mask_to_spatial(
    mask: InstanceMask,
    depth: DepthImage,
    k: CameraIntrinsics,
    min_valid: int = DEFAULT_MIN_VALID_PIXELS,
) -> tuple[Point3, Aabb3]:
    """Back-project every valid masked pixel; return (centroid, 3D box).

    The centroid is the mean of the back-projected points and the box is
    their componentwise min/max. Pixels with depth <= 0 are skipped.

    Raises:
        EmptyMaskError: the mask has no true pixel.
        InsufficientDepthError: fewer than ``min_valid`` masked pixels
            carry valid depth.
    """
    mask = np.asarray(mask, dtype=bool)
    depth = np.asarray(depth, dtype=np.float64)
    if mask.shape != depth.shape:
        raise ValueError(f"mask shape {mask.shape} != depth shape {depth.shape}")
    if mask.shape != (k.height, k.width):
        raise ValueError(f"image shape {mask.shape} != intrinsics {k.height}x{k.width}")
    if not mask.any():
        raise EmptyMaskError("mask has no true pixel")

    vs, us = np.nonzero(mask)
    ds = depth[vs, us]
    valid = np.isfinite(ds) & (ds > 0)
    if int(valid.sum()) < min_valid:
        raise InsufficientDepthError(
            f"only {int(valid.sum())} masked pixels with valid depth (need {min_valid})"
        )
    us, vs, ds = us[valid], vs[valid], ds[valid]

    xs = (us - k.cx) * ds / k.fx
    ys = (vs - k.cy) * ds / k.fy
    pts = np.stack([xs, ys, ds], axis=1)
    centroid = pts.mean(axis=0)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (
        (float(centroid[0]), float(centroid[1]), float(centroid[2])),
        Aabb3((float(lo[0]), float(lo[1]), float(lo[2])), (float(hi[0]), float(hi[1]), float(hi[2]))),
    )


def spatial_record(
    object_id: str,
    caption: str,
    mask: InstanceMask,
    depth: DepthImage,
    k: CameraIntrinsics,
    min_valid: int = DEFAULT_MIN_VALID_PIXELS,
) -> SpatialRecord:
    """Bundle one object's masked observation into a SpatialRecord."""
    centroid, box3 = mask_to_spatial(mask, depth, k, min_valid=min_valid)
    return SpatialRecord(
        object_id=object_id,
        caption=caption,
        box2=box2_from_mask(mask),
        centroid=centroid,
        box3=box3,
    )
