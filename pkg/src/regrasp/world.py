"""Deterministic tabletop simulator of ambiguous-condition objects.

Objects are axis-aligned boxes split into named regions, each carrying a
grasp semantic: solid, hollow (collapses above a force threshold),
detachable (separates from the body on lift), or forbidden (graspable but
must not be touched). Grasp outcomes are closed-form rule lookups, not
dynamics: the failure taxonomy here is categorical, so simulating contact
forces would add noise without adding coverage.

Poses live in the camera frame of :mod:`regrasp.geometry` (+x right,
+y down, +z forward). The camera looks straight down at the table, so
"above" an object means smaller z and the topmost region of an object is
the one with the smallest z extent.

Depth rendering is deliberately crude: each object appears as its 2D
footprint rectangle filled with the object's centroid depth. That is all
the geometry module's contract needs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RegraspError
from .geometry import Aabb3, CameraIntrinsics, InstanceMask, Point3, project_point

SCENE_SPEC_VERSION = 1

# Region semantics.
SOLID = "solid"
HOLLOW = "hollow"
DETACHABLE = "detachable"
FORBIDDEN = "forbidden"
REGION_KINDS = (SOLID, HOLLOW, DETACHABLE, FORBIDDEN)

# Grasp approach directions. Outcomes do not depend on the approach (the
# rule table is positional, not kinematic), but plans carry it and reports
# surface it.
APPROACHES = ("top", "side", "angled")

# Calibration. No published force or threshold magnitudes exist for these
# objects; the values are chosen so the naive top-down default grasp fails
# on every ambiguous object while a corrected grasp stays feasible.
DEFAULT_GRIP_FORCE = 0.8
HOLLOW_COLLAPSE_THRESHOLD = 0.3
LOOSE_LID_STRENGTH = 0.2
MAX_APERTURE = 0.14
# Normalized pull a lift exerts on an attachment; a detachable joint
# weaker than this separates.
LIFT_PULL = 1.0
HOVER_CLEARANCE = 0.05

# Event kinds that count as adverse/outcome flags on snapshots. Everything
# else in the log ("grasp_contact", "grasped", "released", "no_contact")
# is narrative only.
FLAG_KINDS = ("deformed", "slipped", "detached", "contacted_forbidden", "lifted")

FLAG_SENTENCES = {
    "deformed": "The grasped surface deformed under pressure.",
    "slipped": "The object slipped out of the gripper.",
    "detached": "A part detached and separated from the main body.",
    "contacted_forbidden": "The gripper contacted a region that must not be touched.",
    "lifted": "The held item was lifted off the table.",
}

DEFAULT_CAMERA = CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)


class WorldError(RegraspError):
    """Base for simulator failures."""


class UnknownObjectError(WorldError):
    """A scene or plan referenced an object model or instance that does not exist."""


class MalformedSceneError(WorldError):
    """A scene description document failed validation."""


class InvalidPrimitiveError(WorldError):
    """A primitive violated the action vocabulary."""


class NoContactError(WorldError):
    """The gripper closed with no region under it."""


class AmbiguityClass:
    """Why an object is hard to grasp without interaction. NONE marks
    idealized objects with no hidden catch."""

    SOFT_DEFORMABLE = "soft_deformable"
    ASSEMBLED = "assembled"
    FORBIDDEN_REGION = "forbidden_region"
    NONE = "none"

    ALL = (SOFT_DEFORMABLE, ASSEMBLED, FORBIDDEN_REGION, NONE)


@dataclass(frozen=True)
class Region:
    """One named sub-volume of an object with a grasp semantic.

    ``extent`` is an (min, max) offset box relative to the object centroid,
    meters, camera axes. ``width`` is the graspable width the gripper sees
    when closing on this region.
    """

    name: str
    kind: str
    extent: tuple[Point3, Point3]
    width: float
    collapse_threshold: float | None = None
    attachment_strength: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("region name must be nonempty")
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.width <= 0:
            raise ValueError(f"region width must be positive, got {self.width}")
        lo, hi = self.extent
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"region extent min exceeds max: {self.extent}")
        if self.kind == HOLLOW:
            if self.collapse_threshold is None or not 0 < self.collapse_threshold <= 1:
                raise ValueError(f"hollow region needs collapse_threshold in (0,1], got {self.collapse_threshold}")
        if self.kind == DETACHABLE:
            if self.attachment_strength is None or self.attachment_strength < 0:
                raise ValueError(f"detachable region needs attachment_strength >= 0, got {self.attachment_strength}")

    @property
    def center(self) -> Point3:
        lo, hi = self.extent
        return ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "extent": [list(self.extent[0]), list(self.extent[1])],
            "width": self.width,
        }
        if self.collapse_threshold is not None:
            d["collapse_threshold"] = self.collapse_threshold
        if self.attachment_strength is not None:
            d["attachment_strength"] = self.attachment_strength
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        lo, hi = d["extent"]
        return cls(
            name=d["name"],
            kind=d["kind"],
            extent=(tuple(float(x) for x in lo), tuple(float(x) for x in hi)),
            width=float(d["width"]),
            collapse_threshold=d.get("collapse_threshold"),
            attachment_strength=d.get("attachment_strength"),
        )


@dataclass(frozen=True)
class ObjectModel:
    """An object template: regions plus the texts the agent gets to see.

    The caption is deliberately ambiguous. It must never leak the hidden
    condition tag; that is the whole premise of the testbed.
    """

    id: str
    label: str
    caption: str
    ambiguity_class: str
    hidden_condition: str
    regions: tuple[Region, ...]

    def __post_init__(self):
        if self.ambiguity_class not in AmbiguityClass.ALL:
            raise ValueError(f"unknown ambiguity class {self.ambiguity_class!r}")
        if not self.regions:
            raise ValueError(f"object {self.id} has no regions")
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise ValueError(f"object {self.id} has duplicate region names {names}")
        if self.hidden_condition and self.hidden_condition in self.caption:
            raise ValueError(f"caption of {self.id} leaks hidden condition {self.hidden_condition!r}")
        if all(r.kind == FORBIDDEN for r in self.regions):
            raise ValueError(f"object {self.id} has no graspable region")
        for a in self.regions:
            for b in self.regions:
                if a.name < b.name and _interiors_overlap(a.extent, b.extent):
                    raise ValueError(f"object {self.id}: regions {a.name} and {b.name} overlap")

    @property
    def graspable_widths(self) -> dict[str, float]:
        return {r.name: r.width for r in self.regions}

    def region(self, name: str) -> Region | None:
        for r in self.regions:
            if r.name == name:
                return r
        return None

    def topmost_region(self) -> Region:
        return min(self.regions, key=lambda r: r.center[2])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "caption": self.caption,
            "ambiguity_class": self.ambiguity_class,
            "hidden_condition": self.hidden_condition,
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectModel":
        try:
            return cls(
                id=d["id"],
                label=d["label"],
                caption=d["caption"],
                ambiguity_class=d["ambiguity_class"],
                hidden_condition=d.get("hidden_condition", ""),
                regions=tuple(Region.from_dict(r) for r in d["regions"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSceneError(f"bad inline object model: {exc}") from exc


def _interiors_overlap(a: tuple[Point3, Point3], b: tuple[Point3, Point3]) -> bool:
    return all(a[0][i] < b[1][i] and b[0][i] < a[1][i] for i in range(3))


# ---------------------------------------------------------------------------
# Atomic action vocabulary. The action module re-exports these; they live
# here because step() interprets them.

@dataclass(frozen=True)
class Move:
    """Move the gripper to a pose, or above a named object instance."""

    target: str | None = None
    pose: Point3 | None = None
    above: bool = True

    def __post_init__(self):
        if (self.target is None) == (self.pose is None):
            raise InvalidPrimitiveError("Move takes exactly one of target or pose")


@dataclass(frozen=True)
class GraspOn:
    """Close the gripper on a region of whatever sits under it.

    ``region`` is a region name or the symbolic selector "topmost",
    resolved against the contacted object at execution time.
    """

    region: str = "topmost"
    grip_force: float = DEFAULT_GRIP_FORCE
    approach: str = "top"

    def __post_init__(self):
        if not 0 < self.grip_force <= 1:
            raise InvalidPrimitiveError(f"grip_force must be in (0,1], got {self.grip_force}")
        if self.approach not in APPROACHES:
            raise InvalidPrimitiveError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if not self.region:
            raise InvalidPrimitiveError("GraspOn needs a region selector")


@dataclass(frozen=True)
class GraspOff:
    """Open the gripper, releasing any attachment."""


@dataclass(frozen=True)
class Lift:
    """Raise the gripper straight up (toward the camera) by height meters."""

    height: float

    def __post_init__(self):
        if self.height <= 0:
            raise InvalidPrimitiveError(f"Lift height must be positive, got {self.height}")


Primitive = Move | GraspOn | GraspOff | Lift


# ---------------------------------------------------------------------------
# Scene state.

@dataclass(frozen=True)
class Event:
    """One append-only log record. ``kind`` in FLAG_KINDS marks an outcome
    flag; other kinds are narrative."""

    step_index: int
    kind: str
    object_id: str = ""
    region: str = ""

    def to_dict(self) -> dict:
        return {"step_index": self.step_index, "kind": self.kind, "object_id": self.object_id, "region": self.region}


@dataclass
class PlacedObject:
    instance_id: str
    model: ObjectModel
    pose: Point3

    def footprint(self) -> Aabb3:
        los = [r.extent[0] for r in self.model.regions]
        his = [r.extent[1] for r in self.model.regions]
        lo = tuple(min(p[i] for p in los) + self.pose[i] for i in range(3))
        hi = tuple(max(p[i] for p in his) + self.pose[i] for i in range(3))
        return Aabb3(lo, hi)

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "model": self.model.to_dict(), "pose": list(self.pose)}


@dataclass
class GripperState:
    pose: Point3 = (0.0, 0.0, 0.1)
    max_aperture: float = MAX_APERTURE
    hover_target: str | None = None

    def to_dict(self) -> dict:
        return {"pose": list(self.pose), "max_aperture": self.max_aperture, "hover_target": self.hover_target}


@dataclass(frozen=True)
class Attachment:
    object_id: str
    contact_region: str
    grip_force: float
    approach: str

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "contact_region": self.contact_region,
            "grip_force": self.grip_force,
            "approach": self.approach,
        }


@dataclass(frozen=True)
class GraspResult:
    """What closing the gripper produced, before any lift."""

    object_id: str
    region: str
    region_kind: str
    attached: bool
    grip_force: float
    approach: str

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "region": self.region,
            "region_kind": self.region_kind,
            "attached": self.attached,
            "grip_force": self.grip_force,
            "approach": self.approach,
        }


@dataclass
class SceneState:
    """Mutable world state. One owner at a time; distinct scenes are
    independent and may run in parallel."""

    scenario_id: str
    seed: int
    camera: CameraIntrinsics
    objects: dict[str, PlacedObject]
    gripper: GripperState = field(default_factory=GripperState)
    attachment: Attachment | None = None
    last_grasp: GraspResult | None = None
    events: list[Event] = field(default_factory=list)
    step_index: int = 0

    def flags(self) -> frozenset[str]:
        return frozenset(e.kind for e in self.events if e.kind in FLAG_KINDS)

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "camera": self.camera.to_dict(),
            "objects": [o.to_dict() for o in self.objects.values()],
            "gripper": self.gripper.to_dict(),
            "attachment": self.attachment.to_dict() if self.attachment else None,
            "last_grasp": self.last_grasp.to_dict() if self.last_grasp else None,
            "events": [e.to_dict() for e in self.events],
            "step_index": self.step_index,
        }


@dataclass(frozen=True, eq=False)
class ObjectView:
    """One object's appearance in a snapshot: caption plus a rendered
    footprint mask and constant-depth tile (full image frames)."""

    object_id: str
    caption: str
    mask: InstanceMask
    depth: np.ndarray


@dataclass(frozen=True, eq=False)
class Snapshot:
    """What the agent sees after a step. ``text`` is the one-paragraph
    stand-in for an RGB frame; it names every raised flag verbatim."""

    step_index: int
    objects: tuple[ObjectView, ...]
    gripper_pose: Point3
    holding: str | None
    flags: frozenset[str]
    text: str

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "object_ids": [v.object_id for v in self.objects],
            "gripper_pose": list(self.gripper_pose),
            "holding": self.holding,
            "flags": sorted(self.flags),
            "text": self.text,
        }


# ---------------------------------------------------------------------------
# Builtin object catalog. Dimensions are meters; layer lists run top to
# bottom (ascending z). Captions are shared across hidden-condition
# variants of the same family on purpose: memory keyed on captions can be
# deceived by a look-alike in a different condition, and experiments need
# to surface that, not hide it.

def _layers(footprint_y: float, layers: list[tuple]) -> tuple[Region, ...]:
    total = sum(h for _, _, h, _, _ in layers)
    z = -total / 2
    out = []
    for name, kind, height, width, params in layers:
        extent = ((-width / 2, -footprint_y / 2, z), (width / 2, footprint_y / 2, z + height))
        out.append(Region(name=name, kind=kind, extent=extent, width=width, **params))
        z += height
    return tuple(out)


def _tissue_bag(condition: str) -> ObjectModel:
    upper_kind = HOLLOW if condition == "empty" else SOLID
    params = {"collapse_threshold": HOLLOW_COLLAPSE_THRESHOLD} if condition == "empty" else {}
    return ObjectModel(
        id="tissue_bag",
        label="tissue bag",
        caption="a soft plastic tissue bag",
        ambiguity_class=AmbiguityClass.SOFT_DEFORMABLE,
        hidden_condition=condition,
        regions=_layers(0.08, [
            ("upper_half", upper_kind, 0.05, 0.08, params),
            ("lower_half", SOLID, 0.05, 0.08, {}),
        ]),
    )


def _ice_cream_bar(condition: str) -> ObjectModel:
    return ObjectModel(
        id="ice_cream_bar",
        label="ice cream bar",
        caption="an ice cream bar on a wooden stick",
        ambiguity_class=AmbiguityClass.FORBIDDEN_REGION,
        hidden_condition=condition,
        regions=_layers(0.03, [
            ("cream", FORBIDDEN, 0.08, 0.05, {}),
            ("stick", SOLID, 0.08, 0.012, {}),
        ]),
    )


def _cookies(condition: str) -> ObjectModel:
    return ObjectModel(
        id="cookies",
        label="cookies",
        caption="a stack of thin cookies",
        ambiguity_class=AmbiguityClass.SOFT_DEFORMABLE,
        hidden_condition=condition,
        regions=_layers(0.06, [
            ("stack", HOLLOW, 0.06, 0.06, {"collapse_threshold": HOLLOW_COLLAPSE_THRESHOLD}),
        ]),
    )


def _cup_noodles(condition: str) -> ObjectModel:
    sealed = condition == "sealed"
    top_kind = SOLID if sealed else HOLLOW
    params = {} if sealed else {"collapse_threshold": HOLLOW_COLLAPSE_THRESHOLD}
    return ObjectModel(
        id="cup_noodles_sealed" if sealed else "cup_noodles_unsealed",
        label=("sealed" if sealed else "unsealed") + " cup noodles",
        caption="a cup of instant noodles",
        ambiguity_class=AmbiguityClass.NONE if sealed else AmbiguityClass.SOFT_DEFORMABLE,
        hidden_condition=condition,
        regions=_layers(0.09, [
            ("top", top_kind, 0.05, 0.09, params),
            ("body", SOLID, 0.05, 0.09, {}),
        ]),
    )


def _cup(condition: str) -> ObjectModel:
    secure = condition == "lid_secure"
    lid_kind = SOLID if secure else DETACHABLE
    params = {} if secure else {"attachment_strength": LOOSE_LID_STRENGTH}
    return ObjectModel(
        id="cup_closed" if secure else "cup_open",
        label=("closed" if secure else "open") + "-lid cup",
        caption="a cup with a lid",
        ambiguity_class=AmbiguityClass.NONE if secure else AmbiguityClass.ASSEMBLED,
        hidden_condition=condition,
        regions=_layers(0.08, [
            ("lid", lid_kind, 0.02, 0.08, params),
            ("body", SOLID, 0.08, 0.08, {}),
        ]),
    )


def _hard_drive(condition: str) -> ObjectModel:
    return ObjectModel(
        id="hard_drive",
        label="hard drive",
        caption="an external hard drive",
        ambiguity_class=AmbiguityClass.FORBIDDEN_REGION,
        hidden_condition=condition,
        regions=_layers(0.08, [
            ("upper_half", FORBIDDEN, 0.01, 0.08, {}),
            ("lower_half", SOLID, 0.01, 0.08, {}),
        ]),
    )


# family name -> (builder, allowed hidden conditions, default condition)
_FAMILIES = {
    "tissue_bag": (_tissue_bag, ("empty", "full"), "empty"),
    "ice_cream_bar": (_ice_cream_bar, ("edible_top",), "edible_top"),
    "cookies": (_cookies, ("fragile",), "fragile"),
    "cup_noodles": (_cup_noodles, ("sealed", "unsealed"), None),
    "cup": (_cup, ("lid_secure", "lid_loose"), None),
    "hard_drive": (_hard_drive, ("untouchable_top",), "untouchable_top"),
}

# catalog id -> (family, condition)
_ALIASES = {
    "cup_noodles_sealed": ("cup_noodles", "sealed"),
    "cup_noodles_unsealed": ("cup_noodles", "unsealed"),
    "cup_closed": ("cup", "lid_secure"),
    "cup_open": ("cup", "lid_loose"),
}

CATALOG_IDS = (
    "tissue_bag",
    "ice_cream_bar",
    "cookies",
    "cup_noodles_sealed",
    "cup_noodles_unsealed",
    "cup_closed",
    "cup_open",
    "hard_drive",
)


def build_model(name: str, condition: str | None = None) -> ObjectModel:
    """Build one object model by catalog id or family name.

    Family names ("cup", "cup_noodles") require a condition; catalog ids
    carry their own. An explicit condition overrides a catalog id's.
    """
    if name in _ALIASES:
        family, default = _ALIASES[name]
    elif name in _FAMILIES:
        family, default = name, _FAMILIES[name][2]
    else:
        raise UnknownObjectError(f"unknown object model {name!r}")
    builder, allowed, _ = _FAMILIES[family]
    cond = condition if condition is not None else default
    if cond is None:
        raise UnknownObjectError(f"model {name!r} needs an explicit hidden_condition from {allowed}")
    if cond not in allowed:
        raise UnknownObjectError(f"model {name!r} has no condition {cond!r} (allowed: {allowed})")
    return builder(cond)


def builtin_catalog() -> list[ObjectModel]:
    """The eight standard objects, in fixed order."""
    return [build_model(cid) for cid in CATALOG_IDS]


# ---------------------------------------------------------------------------
# Scene loading.

def load_scene(spec: dict) -> SceneState:
    """Construct a SceneState from a scene description document.

    Schema (JSON-compatible dict):

        {
          "spec_version": 1,
          "scenario_id": "...",
          "seed": 0,
          "camera": {fx, fy, cx, cy, width, height},   # optional
          "objects": [
            {"model": "<catalog or family name>",       # or "inline": {...}
             "pose": [x, y, z],
             "hidden_condition": "tag"                   # optional; or
                                 {"sample": {tag: prob, ...}}}
          ]
        }

    Loading is deterministic: identical spec + seed gives an identical
    state, including any sampled hidden conditions.
    """
    if not isinstance(spec, dict):
        raise MalformedSceneError(f"scene spec must be a mapping, got {type(spec).__name__}")
    version = spec.get("spec_version")
    if version != SCENE_SPEC_VERSION:
        raise MalformedSceneError(f"unsupported spec_version {version!r} (expected {SCENE_SPEC_VERSION})")
    try:
        scenario_id = spec["scenario_id"]
        seed = int(spec["seed"])
        entries = spec["objects"]
    except KeyError as exc:
        raise MalformedSceneError(f"scene spec missing field {exc}") from exc
    if not isinstance(scenario_id, str) or not scenario_id:
        raise MalformedSceneError("scenario_id must be a nonempty string")
    if not isinstance(entries, list):
        raise MalformedSceneError("objects must be a list")

    camera = CameraIntrinsics.from_dict(spec["camera"]) if "camera" in spec else DEFAULT_CAMERA
    rng = random.Random(seed)
    objects: dict[str, PlacedObject] = {}
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise MalformedSceneError(f"objects[{i}] must be a mapping")
        condition = entry.get("hidden_condition")
        if isinstance(condition, dict):
            weights = condition.get("sample")
            if not weights or not isinstance(weights, dict):
                raise MalformedSceneError(f"objects[{i}]: sampled condition needs a 'sample' table")
            tags = list(weights)
            condition = rng.choices(tags, weights=[float(weights[t]) for t in tags])[0]
        if "inline" in entry:
            model = ObjectModel.from_dict(entry["inline"])
            if condition is not None:
                model = replace(model, hidden_condition=condition)
        elif "model" in entry:
            model = build_model(entry["model"], condition)
        else:
            raise MalformedSceneError(f"objects[{i}] needs 'model' or 'inline'")
        try:
            pose = tuple(float(x) for x in entry["pose"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSceneError(f"objects[{i}] needs a numeric pose [x, y, z]") from exc
        if len(pose) != 3:
            raise MalformedSceneError(f"objects[{i}] pose must have 3 components")
        instance_id = model.id
        n = 2
        while instance_id in objects:
            instance_id = f"{model.id}#{n}"
            n += 1
        objects[instance_id] = PlacedObject(instance_id=instance_id, model=model, pose=pose)

    return SceneState(scenario_id=scenario_id, seed=seed, camera=camera, objects=objects)


# ---------------------------------------------------------------------------
# Observation.

def _footprint_mask(obj: PlacedObject, k: CameraIntrinsics) -> InstanceMask:
    box = obj.footprint()
    z = obj.pose[2]
    mask = np.zeros((k.height, k.width), dtype=bool)
    if z <= 0:
        return mask
    u0, v0, _ = project_point((box.min[0], box.min[1], z), k)
    u1, v1, _ = project_point((box.max[0], box.max[1], z), k)
    ui0 = max(int(np.ceil(u0)), 0)
    vi0 = max(int(np.ceil(v0)), 0)
    ui1 = min(int(np.floor(u1)), k.width - 1)
    vi1 = min(int(np.floor(v1)), k.height - 1)
    if ui0 <= ui1 and vi0 <= vi1:
        mask[vi0 : vi1 + 1, ui0 : ui1 + 1] = True
    return mask


def observe(state: SceneState) -> Snapshot:
    """Render the agent-visible view of the scene.

    Masks are per-object footprint rectangles; depth inside a mask is the
    constant centroid depth of that object. The text paragraph describes
    each object, the gripper, and every outcome flag raised so far.
    """
    views = []
    sentences = []
    holding = state.attachment.object_id if state.attachment else None
    for obj in state.objects.values():
        mask = _footprint_mask(obj, state.camera)
        depth = np.where(mask, obj.pose[2], 0.0)
        views.append(ObjectView(object_id=obj.instance_id, caption=obj.model.caption, mask=mask, depth=depth))
        if obj.instance_id == holding:
            sentences.append(f"The gripper is holding the {obj.model.label} at depth {obj.pose[2]:.2f} m.")
        else:
            sentences.append(f"A {obj.model.label} rests on the table at depth {obj.pose[2]:.2f} m.")
    if holding is None:
        gp = state.gripper.pose
        sentences.append(f"The gripper is empty at ({gp[0]:.2f}, {gp[1]:.2f}, {gp[2]:.2f}).")
    flags = state.flags()
    for kind in FLAG_KINDS:
        if kind in flags:
            sentences.append(FLAG_SENTENCES[kind])
    if flags:
        sentences.append("Flags raised so far: " + ", ".join(k for k in FLAG_KINDS if k in flags) + ".")
    else:
        sentences.append("No adverse flags raised.")
    return Snapshot(
        step_index=state.step_index,
        objects=tuple(views),
        gripper_pose=state.gripper.pose,
        holding=holding,
        flags=flags,
        text=" ".join(sentences),
    )


# ---------------------------------------------------------------------------
# Stepping.

def _object_under_gripper(state: SceneState) -> PlacedObject | None:
    if state.gripper.hover_target and state.gripper.hover_target in state.objects:
        return state.objects[state.gripper.hover_target]
    gx, gy, _ = state.gripper.pose
    for obj in state.objects.values():
        box = obj.footprint()
        if box.min[0] <= gx <= box.max[0] and box.min[1] <= gy <= box.max[1]:
            return obj
    return None


def _select_region(obj: PlacedObject, selector: str) -> Region:
    if selector == "topmost":
        return obj.model.topmost_region()
    region = obj.model.region(selector.lower())
    if region is None:
        raise NoContactError(f"object {obj.instance_id} has no region named {selector!r}")
    return region


def resolve_grasp(state: SceneState, region_selector: str, grip_force: float, approach: str) -> GraspResult:
    """Apply the grasp-outcome rule table to whatever is under the gripper.

    Returns the result; does not mutate the state (step() applies it).

    Rules: hollow collapses (deformed + slipped, no attachment) when the
    force exceeds its threshold, else attaches; forbidden attaches AND
    raises contacted_forbidden, never silently; solid attaches when its
    width fits the aperture, else slips; detachable attaches now and may
    separate later, on lift.
    """
    obj = _object_under_gripper(state)
    if obj is None:
        raise NoContactError(f"nothing under the gripper at {state.gripper.pose}")
    region = _select_region(obj, region_selector)
    attached = False
    if region.kind == HOLLOW:
        attached = grip_force <= region.collapse_threshold
    elif region.kind == SOLID:
        attached = region.width <= state.gripper.max_aperture
    else:
        # Forbidden and detachable regions both hold the grasp; the
        # consequence lands as a flag now or at lift time.
        attached = True
    return GraspResult(
        object_id=obj.instance_id,
        region=region.name,
        region_kind=region.kind,
        attached=attached,
        grip_force=grip_force,
        approach=approach,
    )


def _emit(state: SceneState, kind: str, object_id: str = "", region: str = "") -> Event:
    event = Event(step_index=state.step_index, kind=kind, object_id=object_id, region=region)
    state.events.append(event)
    return event


def _translate(p: Point3, d: Point3) -> Point3:
    return (p[0] + d[0], p[1] + d[1], p[2] + d[2])


def _split_attached_part(state: SceneState, obj: PlacedObject, region: Region) -> PlacedObject:
    """Separate a detachable region into its own object; the remaining
    regions stay behind as the body. Both halves are recentered so that
    poses remain centroids."""
    body_regions = tuple(r for r in obj.model.regions if r.name != region.name)
    part_center = region.center
    part_region = replace(region, extent=(
        tuple(a - c for a, c in zip(region.extent[0], part_center)),
        tuple(a - c for a, c in zip(region.extent[1], part_center)),
    ))
    part_model = ObjectModel(
        id=f"{obj.model.id}:{region.name}",
        label=f"{obj.model.label} {region.name}",
        caption=f"the separated {region.name} of {obj.model.caption}",
        ambiguity_class=obj.model.ambiguity_class,
        hidden_condition=obj.model.hidden_condition,
        regions=(part_region,),
    )
    lo = tuple(min(r.extent[0][i] for r in body_regions) for i in range(3))
    hi = tuple(max(r.extent[1][i] for r in body_regions) for i in range(3))
    body_center = tuple((a + b) / 2 for a, b in zip(lo, hi))
    recentered = tuple(
        replace(r, extent=(
            tuple(a - c for a, c in zip(r.extent[0], body_center)),
            tuple(a - c for a, c in zip(r.extent[1], body_center)),
        ))
        for r in body_regions
    )
    obj.model = replace(obj.model, regions=recentered)
    obj.pose = _translate(obj.pose, body_center)
    part = PlacedObject(
        instance_id=f"{obj.instance_id}:{region.name}",
        model=part_model,
        pose=_translate(obj.pose, tuple(a - b for a, b in zip(part_center, body_center))),
    )
    state.objects[part.instance_id] = part
    return part


def step(state: SceneState, primitive: Primitive) -> tuple[SceneState, list[Event]]:
    """Execute one primitive, mutating the state in place.

    Adverse outcomes become events, never exceptions; the only error here
    is a vocabulary violation. Returns the state and the events this step
    raised.
    """
    state.step_index += 1
    before = len(state.events)

    if isinstance(primitive, Move):
        if primitive.target is not None:
            obj = state.objects.get(primitive.target)
            if obj is None:
                raise InvalidPrimitiveError(f"Move targets unknown object {primitive.target!r}")
            top_z = obj.footprint().min[2]
            dest = (obj.pose[0], obj.pose[1], top_z - HOVER_CLEARANCE if primitive.above else obj.pose[2])
            state.gripper.hover_target = obj.instance_id
        else:
            dest = primitive.pose
            state.gripper.hover_target = None
        delta = tuple(b - a for a, b in zip(state.gripper.pose, dest))
        state.gripper.pose = dest
        if state.attachment is not None:
            held = state.objects[state.attachment.object_id]
            held.pose = _translate(held.pose, delta)

    elif isinstance(primitive, GraspOn):
        if state.attachment is not None:
            raise InvalidPrimitiveError("GraspOn while already holding something")
        try:
            result = resolve_grasp(state, primitive.region, primitive.grip_force, primitive.approach)
        except NoContactError:
            _emit(state, "no_contact", region=primitive.region)
        else:
            state.last_grasp = result
            _emit(state, "grasp_contact", result.object_id, result.region)
            if result.region_kind == HOLLOW and not result.attached:
                _emit(state, "deformed", result.object_id, result.region)
                _emit(state, "slipped", result.object_id, result.region)
            elif result.region_kind == SOLID and not result.attached:
                _emit(state, "slipped", result.object_id, result.region)
            if result.attached:
                state.attachment = Attachment(
                    object_id=result.object_id,
                    contact_region=result.region,
                    grip_force=result.grip_force,
                    approach=result.approach,
                )
                _emit(state, "grasped", result.object_id, result.region)
                if result.region_kind == FORBIDDEN:
                    _emit(state, "contacted_forbidden", result.object_id, result.region)

    elif isinstance(primitive, GraspOff):
        if state.attachment is not None:
            _emit(state, "released", state.attachment.object_id, state.attachment.contact_region)
            state.attachment = None

    elif isinstance(primitive, Lift):
        delta = (0.0, 0.0, -primitive.height)
        state.gripper.pose = _translate(state.gripper.pose, delta)
        if state.attachment is not None:
            held = state.objects[state.attachment.object_id]
            region = held.model.region(state.attachment.contact_region)
            separable = (
                region is not None
                and region.kind == DETACHABLE
                and region.attachment_strength < LIFT_PULL
                and len(held.model.regions) > 1
            )
            if separable:
                part = _split_attached_part(state, held, region)
                part.pose = _translate(part.pose, delta)
                state.attachment = Attachment(
                    object_id=part.instance_id,
                    contact_region=region.name,
                    grip_force=state.attachment.grip_force,
                    approach=state.attachment.approach,
                )
                _emit(state, "detached", held.instance_id, region.name)
                _emit(state, "lifted", part.instance_id, region.name)
            else:
                held.pose = _translate(held.pose, delta)
                _emit(state, "lifted", held.instance_id, state.attachment.contact_region)

    else:
        raise InvalidPrimitiveError(f"unknown primitive {primitive!r}")

    return state, state.events[before:]
