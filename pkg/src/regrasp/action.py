"""Atomic-action plans: a strict mini-language, reasoner-backed plan
compilation, and run-to-completion execution with trace recording.

The primitive vocabulary (Move, GraspOn, GraspOff, Lift) is defined next
to the simulator's step function and re-exported here.

Reasoners emit plans in a line-based mini-language, one primitive per
line. Grammar (EBNF):

    plan      = { line , newline } ;
    line      = move | grasp_on | grasp_off | lift ;
    move      = "MOVE" , ws , ( "target=" , name , [ ws , "above=" , bool ]
                              | "pose=" , num , "," , num , "," , num ) ;
    grasp_on  = "GRASP_ON" , ws , "region=" , name ,
                [ ws , "approach=" , ( "top" | "side" | "angled" ) ] ,
                [ ws , "force=" , num ] ;
    grasp_off = "GRASP_OFF" ;
    lift      = "LIFT" , ws , "height=" , num ;
    bool      = "true" | "false" ;

Blank lines are skipped. Anything else fails the whole plan: a strict
grammar is the price of accepting free-form model output.

Execution never aborts early. Adverse outcomes are events in the trace,
because judgment reads the final frame and needs the episode to finish.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import RegraspError, ReplyParseError
from .geometry import SpatialRecord
from .prompts import ReasonerRequest, render, spatial_lines
from .world import (
    APPROACHES,
    DEFAULT_GRIP_FORCE,
    GraspOff,
    GraspOn,
    InvalidPrimitiveError,
    Lift,
    Move,
    Primitive,
    SceneState,
    Snapshot,
    observe,
    step,
)

__all__ = [
    "ActionPlan",
    "DEFAULT_LIFT_HEIGHT",
    "GraspOff",
    "GraspOn",
    "Instruction",
    "InvalidReasonerPlanError",
    "Lift",
    "Move",
    "PlanError",
    "PlanProvenance",
    "Primitive",
    "Trace",
    "UnknownTargetError",
    "compile_plan",
    "default_initial_plan",
    "execute",
    "format_plan",
    "parse_plan",
    "resolve_target",
]

DEFAULT_LIFT_HEIGHT = 0.2

# Routine words that never identify an object.
_STOPWORDS = frozenset(
    "a an and the this that of on in with to for at from by it its is are "
    "pick up grasp grab lift take put place hold please carefully".split()
)


class PlanError(RegraspError):
    """Base for plan construction failures."""


class UnknownTargetError(PlanError):
    """The instruction names no observed object."""


class InvalidReasonerPlanError(PlanError, ReplyParseError):
    """The reasoner emitted text outside the plan mini-language.

    Doubles as a reply-parse error so that callers handling unparseable
    reasoner output catch plan and judgment failures alike.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Instruction:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("instruction text must be nonempty")


@dataclass(frozen=True)
class PlanProvenance:
    reasoner: str
    memory_hit: bool = False
    reflection_hint: bool = False

    def to_dict(self) -> dict:
        return {"reasoner": self.reasoner, "memory_hit": self.memory_hit, "reflection_hint": self.reflection_hint}


@dataclass(frozen=True)
class ActionPlan:
    """An ordered primitive sequence bound to one target instance."""

    primitives: tuple[Primitive, ...]
    target: str
    provenance: PlanProvenance

    def __post_init__(self):
        holding = False
        for prim in self.primitives:
            if isinstance(prim, GraspOn):
                if holding:
                    raise PlanError("plan closes the gripper twice without releasing")
                holding = True
            elif isinstance(prim, GraspOff):
                holding = False

    def grasp(self) -> GraspOn | None:
        for prim in self.primitives:
            if isinstance(prim, GraspOn):
                return prim
        return None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "provenance": self.provenance.to_dict(),
            "primitives": format_plan(self.primitives).splitlines(),
        }


@dataclass(frozen=True, eq=False)
class Trace:
    """Snapshots bracketing every primitive: one before the plan, one
    after each step. The final snapshot is the judgment input."""

    snapshots: tuple[Snapshot, ...]
    plan: ActionPlan

    def __post_init__(self):
        if len(self.snapshots) != len(self.plan.primitives) + 1:
            raise ValueError(
                f"trace has {len(self.snapshots)} snapshots for {len(self.plan.primitives)} primitives"
            )

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "snapshots": [s.to_dict() for s in self.snapshots]}


# ---------------------------------------------------------------------------
# Mini-language.

def format_plan(primitives) -> str:
    lines = []
    for prim in primitives:
        if isinstance(prim, Move):
            if prim.target is not None:
                lines.append(f"MOVE target={prim.target} above={'true' if prim.above else 'false'}")
            else:
                x, y, z = prim.pose
                lines.append(f"MOVE pose={x:g},{y:g},{z:g}")
        elif isinstance(prim, GraspOn):
            lines.append(f"GRASP_ON region={prim.region} approach={prim.approach} force={prim.grip_force:g}")
        elif isinstance(prim, GraspOff):
            lines.append("GRASP_OFF")
        elif isinstance(prim, Lift):
            lines.append(f"LIFT height={prim.height:g}")
        else:
            raise InvalidPrimitiveError(f"cannot format {prim!r}")
    return "\n".join(lines)


def _fields(tokens: list[str], line: str) -> dict[str, str]:
    out = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key or not value:
            raise InvalidReasonerPlanError(f"malformed field {token!r} in line {line!r}", raw=line)
        if key in out:
            raise InvalidReasonerPlanError(f"duplicate field {key!r} in line {line!r}", raw=line)
        out[key] = value
    return out


def _number(value: str, line: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise InvalidReasonerPlanError(f"expected a number, got {value!r} in line {line!r}", raw=line) from None


def parse_plan(text: str) -> tuple[Primitive, ...]:
    """Parse mini-language text into primitives. Strict: every nonblank
    line must be a well-formed primitive."""
    primitives: list[Primitive] = []
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        tokens = line.split()
        verb = tokens[0].upper()
        try:
            if verb == "MOVE":
                fields = _fields(tokens[1:], line)
                unknown = set(fields) - {"target", "pose", "above"}
                if unknown:
                    raise InvalidReasonerPlanError(f"unknown MOVE fields {sorted(unknown)} in {line!r}", raw=line)
                if "pose" in fields:
                    parts = fields["pose"].split(",")
                    if len(parts) != 3 or "target" in fields:
                        raise InvalidReasonerPlanError(f"bad MOVE pose in {line!r}", raw=line)
                    primitives.append(Move(pose=tuple(_number(p, line) for p in parts)))
                elif "target" in fields:
                    above = fields.get("above", "true").lower()
                    if above not in ("true", "false"):
                        raise InvalidReasonerPlanError(f"bad MOVE above flag in {line!r}", raw=line)
                    primitives.append(Move(target=fields["target"], above=above == "true"))
                else:
                    raise InvalidReasonerPlanError(f"MOVE needs target or pose in {line!r}", raw=line)
            elif verb == "GRASP_ON":
                fields = _fields(tokens[1:], line)
                unknown = set(fields) - {"region", "approach", "force"}
                if unknown:
                    raise InvalidReasonerPlanError(f"unknown GRASP_ON fields {sorted(unknown)} in {line!r}", raw=line)
                if "region" not in fields:
                    raise InvalidReasonerPlanError(f"GRASP_ON needs a region in {line!r}", raw=line)
                approach = fields.get("approach", "top")
                if approach not in APPROACHES:
                    raise InvalidReasonerPlanError(f"bad approach {approach!r} in {line!r}", raw=line)
                primitives.append(GraspOn(
                    region=fields["region"],
                    approach=approach,
                    grip_force=_number(fields.get("force", str(DEFAULT_GRIP_FORCE)), line),
                ))
            elif verb == "GRASP_OFF":
                if tokens[1:]:
                    raise InvalidReasonerPlanError(f"GRASP_OFF takes no fields in {line!r}", raw=line)
                primitives.append(GraspOff())
            elif verb == "LIFT":
                fields = _fields(tokens[1:], line)
                if set(fields) != {"height"}:
                    raise InvalidReasonerPlanError(f"LIFT takes exactly height= in {line!r}", raw=line)
                primitives.append(Lift(height=_number(fields["height"], line)))
            else:
                raise InvalidReasonerPlanError(f"unknown primitive {verb!r} in line {line!r}", raw=line)
        except InvalidPrimitiveError as exc:
            raise InvalidReasonerPlanError(f"invalid primitive values: {exc}", raw=line) from exc
    return tuple(primitives)


# ---------------------------------------------------------------------------
# Compilation.

def _tokens(text: str) -> set[str]:
    words = "".join(c.lower() if c.isalnum() else " " for c in text).split()
    return {w for w in words if w not in _STOPWORDS}


def resolve_target(ins: Instruction, spatial: list[SpatialRecord]) -> SpatialRecord:
    """Pick the observed object whose caption best overlaps the
    instruction's content words."""
    if not spatial:
        raise UnknownTargetError("no objects observed")
    wanted = _tokens(ins.text)
    best, best_score = None, 0
    for record in spatial:
        score = len(wanted & _tokens(record.caption))
        if score > best_score:
            best, best_score = record, score
    if best is None:
        raise UnknownTargetError(f"instruction {ins.text!r} matches no observed object")
    return best


def _proposal_of(hint) -> object | None:
    # Hints are discussion outcomes (duck-typed): the revised reflection's
    # proposal carries the actionable fields.
    if hint is None:
        return None
    return hint.revised.proposal


def _hint_text(proposal) -> str:
    if proposal is None:
        return "none"
    avoid = ", ".join(proposal.avoid_regions) if proposal.avoid_regions else "nothing"
    return (
        f"grasp the {proposal.target_region} region, approach from the {proposal.approach}, "
        f"force scale {proposal.grip_force_scale:g}, avoid: {avoid}"
    )


def compile_plan(
    ins: Instruction,
    spatial: list[SpatialRecord],
    reasoner,
    memory_hint=None,
    reflection_hint=None,
) -> ActionPlan:
    """Ask a reasoner for a plan, parse it, and bind it to a target.

    A fresh reflection hint wins over a remembered one. A structured hint
    is authoritative: whatever the reasoner emits, the grasp primitive is
    pinned to the hint's region, approach, and scaled force, so corrective
    knowledge cannot be planned away.
    """
    record = resolve_target(ins, spatial)
    hint = reflection_hint if reflection_hint is not None else memory_hint
    proposal = _proposal_of(hint)
    prompt = render(
        "plan",
        instruction=ins.text,
        objects=spatial_lines(spatial),
        target=record.object_id,
        hint=_hint_text(proposal),
    )
    proposal_ctx = None
    if proposal is not None:
        proposal_ctx = {
            "target_region": proposal.target_region,
            "approach": proposal.approach,
            "grip_force_scale": proposal.grip_force_scale,
            "avoid_regions": list(proposal.avoid_regions),
        }
    reply = reasoner.respond(ReasonerRequest(
        role="plan",
        prompt=prompt,
        oracle_context={"target": record.object_id, "hint": proposal_ctx},
    ))
    primitives = parse_plan(reply)
    if proposal is not None:
        pinned = []
        found = False
        for prim in primitives:
            if isinstance(prim, GraspOn) and not found:
                prim = replace(
                    prim,
                    region=proposal.target_region,
                    approach=proposal.approach,
                    grip_force=DEFAULT_GRIP_FORCE * proposal.grip_force_scale,
                )
                found = True
            pinned.append(prim)
        if not found:
            raise InvalidReasonerPlanError("plan has no grasp to apply the hint to", raw=reply)
        primitives = tuple(pinned)
    return ActionPlan(
        primitives=tuple(primitives),
        target=record.object_id,
        provenance=PlanProvenance(
            reasoner=getattr(reasoner, "name", type(reasoner).__name__),
            memory_hit=memory_hint is not None and reflection_hint is None,
            reflection_hint=reflection_hint is not None,
        ),
    )


def default_initial_plan(object_id: str, state: SceneState | None = None) -> ActionPlan:
    """The standardized first attempt: hover above the object, close on
    its topmost region with default force, lift."""
    if state is not None and object_id not in state.objects:
        raise UnknownTargetError(f"no object instance {object_id!r} in the scene")
    return ActionPlan(
        primitives=(
            Move(target=object_id),
            GraspOn(region="topmost", grip_force=DEFAULT_GRIP_FORCE, approach="top"),
            Lift(height=DEFAULT_LIFT_HEIGHT),
        ),
        target=object_id,
        provenance=PlanProvenance(reasoner="default"),
    )


# ---------------------------------------------------------------------------
# Execution.

def execute(plan: ActionPlan, state: SceneState) -> tuple[Trace, SceneState]:
    """Run every primitive in order, observing before the first and after
    each one. Adverse events land in snapshots, never as exceptions."""
    snapshots = [observe(state)]
    for prim in plan.primitives:
        step(state, prim)
        snapshots.append(observe(state))
    return Trace(snapshots=tuple(snapshots), plan=plan), state
