"""Grasp verdicts: the two-condition success rule, a ground-truth oracle
judge, and a reasoner-backed judge.

A grasp counts as successful only when both conditions hold: the grasp
itself succeeded (the intended object is held and lifted, g_s) and the
grasp position was acceptable (nothing forbidden touched, g_p). The
position bit is evaluated even when the grasp failed; success is the same
either way, but reflection is better informed with both bits.
"""

from __future__ import annotations

from dataclasses import dataclass

from .action import Trace
from .errors import ReplyParseError
from .geometry import SpatialRecord
from .prompts import ReasonerRequest, render, spatial_lines
from .world import FORBIDDEN, SceneState


class JudgmentParseError(ReplyParseError):
    """A judge reply did not contain the required yes/no answers."""


@dataclass(frozen=True)
class GraspVerdict:
    g_s: int
    g_p: int
    success: int
    rationale: str = ""

    def __post_init__(self):
        if self.g_s not in (0, 1) or self.g_p not in (0, 1):
            raise ValueError(f"verdict bits must be 0 or 1, got g_s={self.g_s} g_p={self.g_p}")
        if self.success != combine(self.g_s, self.g_p):
            raise ValueError(f"success={self.success} inconsistent with g_s={self.g_s}, g_p={self.g_p}")

    def to_dict(self) -> dict:
        return {"g_s": self.g_s, "g_p": self.g_p, "success": self.success, "rationale": self.rationale}

    @classmethod
    def from_bits(cls, g_s: int, g_p: int, rationale: str = "") -> "GraspVerdict":
        return cls(g_s=g_s, g_p=g_p, success=combine(g_s, g_p), rationale=rationale)


def combine(g_s: int, g_p: int) -> int:
    """Success needs both conditions: 1 iff g_s = g_p = 1."""
    if g_s not in (0, 1) or g_p not in (0, 1):
        raise ValueError(f"inputs must be 0 or 1, got ({g_s}, {g_p})")
    return 1 if g_s == 1 and g_p == 1 else 0


def _attempted_region_kind(trace: Trace, state: SceneState) -> str | None:
    # The region the gripper actually closed on, falling back to the
    # plan's selector when no contact was ever made.
    if state.last_grasp is not None:
        return state.last_grasp.region_kind
    grasp = trace.plan.grasp()
    if grasp is None:
        return None
    obj = state.objects.get(trace.plan.target)
    if obj is None:
        return None
    if grasp.region == "topmost":
        return obj.model.topmost_region().kind
    region = obj.model.region(grasp.region)
    return region.kind if region else None


def judge_oracle(trace: Trace, state: SceneState) -> GraspVerdict:
    """Evaluate both conditions from simulator ground truth.

    g_s: the whole intended object is attached and was lifted; holding a
    detached part only does not count. g_p: the attempted contact region
    is not forbidden and no forbidden contact was flagged.
    """
    target = trace.plan.target
    attached = state.attachment is not None and state.attachment.object_id == target
    lifted = any(e.kind == "lifted" and e.object_id == target for e in state.events)
    g_s = 1 if attached and lifted else 0

    kind = _attempted_region_kind(trace, state)
    touched_forbidden = "contacted_forbidden" in state.flags()
    g_p = 0 if kind == FORBIDDEN or touched_forbidden else 1

    parts = []
    parts.append(f"target {target} is {'held and lifted' if g_s else 'not held and lifted'}")
    if touched_forbidden or kind == FORBIDDEN:
        parts.append("a forbidden region was targeted or touched")
    else:
        parts.append("no forbidden contact")
    return GraspVerdict.from_bits(g_s, g_p, rationale="; ".join(parts))


def parse_yes_no(text: str, expected: int = 2) -> list[int]:
    """Extract yes/no answers, one per line.

    A line answers iff its first token (after an optional leading
    "ANSWER:" marker, case-insensitive) is yes or no, trailing punctuation
    ignored. Fewer than ``expected`` answers is a parse error carrying the
    raw reply.
    """
    bits = []
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if line.upper().startswith("ANSWER:"):
            line = line[len("ANSWER:"):].strip()
        token = line.split(maxsplit=1)[0].lower().rstrip(".,!;:") if line else ""
        if token == "yes":
            bits.append(1)
        elif token == "no":
            bits.append(0)
    if len(bits) < expected:
        raise JudgmentParseError(
            f"needed {expected} yes/no answers, found {len(bits)}", raw=text
        )
    return bits[:expected]


def judge_reasoner(
    trace: Trace,
    ins,
    spatial: list[SpatialRecord],
    reasoner,
    state: SceneState | None = None,
) -> GraspVerdict:
    """Ask a reasoner the two questions about the final frame.

    ``state`` is the simulator handle for ground-truth backends; it rides
    in the request's oracle context and never reaches the wire.
    """
    prompt = render(
        "judge",
        instruction=ins.text,
        spatial=spatial_lines(spatial),
        final_frame=trace.final.text,
    )
    reply = reasoner.respond(ReasonerRequest(
        role="judge",
        prompt=prompt,
        attachments=(trace.final.text,),
        oracle_context={"trace": trace, "state": state},
    ))
    g_s, g_p = parse_yes_no(reply, expected=2)
    return GraspVerdict.from_bits(g_s, g_p, rationale=reply)
