"""Failure reflection and supervised discussion.

After a failed attempt the agent produces a reflection: an error cause
(tagged PropertyChange, BadPosition, or Unknown) plus a corrective
proposal naming the region to grasp next, the approach, a force scale,
and regions to avoid. The proposal is structured rather than free text so
the next plan can consume it mechanically; a free-text field keeps room
for untyped model commentary.

A second reasoner then supervises the reflection over a fixed number of
Q&A turns: it verifies the reflection against the episode evidence and,
when it disagrees, emits a corrected one. The transcript always holds
2 x turns messages, whether or not the first verdict already settled it.

``rule_reflection`` is the deterministic reference analysis: the mapping
from episode evidence to the corrective proposal used by ground-truth
backends, both to produce reflections and to verify them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import RegraspError
from .world import (
    APPROACHES,
    FORBIDDEN,
    HOLLOW,
    SOLID,
    SceneState,
)
from .prompts import ReasonerRequest, render

CAUSE_PROPERTY = "PropertyChange"
CAUSE_POSITION = "BadPosition"
CAUSE_UNKNOWN = "Unknown"
CAUSE_TAGS = (CAUSE_PROPERTY, CAUSE_POSITION, CAUSE_UNKNOWN)

# Fraction of the default force that counts as a gentle grip; low enough
# to stay under every collapse threshold in the catalog.
GENTLE_FORCE_SCALE = 0.25

DEFAULT_DISCUSSION_TURNS = 2


class ReflectionOnSuccessError(RegraspError):
    """self_reflect was called for an episode that did not fail."""


@dataclass(frozen=True)
class Proposal:
    """The actionable half of a reflection."""

    target_region: str
    approach: str = "top"
    grip_force_scale: float = 1.0
    avoid_regions: tuple[str, ...] = ()
    free_text: str = ""

    def __post_init__(self):
        if not self.target_region:
            raise ValueError("proposal needs a target_region")
        if self.approach not in APPROACHES:
            raise ValueError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if not 0 < self.grip_force_scale <= 1:
            raise ValueError(f"grip_force_scale must be in (0,1], got {self.grip_force_scale}")

    def to_dict(self) -> dict:
        return {
            "target_region": self.target_region,
            "approach": self.approach,
            "grip_force_scale": self.grip_force_scale,
            "avoid_regions": list(self.avoid_regions),
            "free_text": self.free_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Proposal":
        return cls(
            target_region=d["target_region"],
            approach=d.get("approach", "top"),
            grip_force_scale=float(d.get("grip_force_scale", 1.0)),
            avoid_regions=tuple(d.get("avoid_regions", ())),
            free_text=d.get("free_text", ""),
        )


@dataclass(frozen=True)
class Reflection:
    cause_tag: str
    cause_text: str
    proposal: Proposal

    def __post_init__(self):
        if self.cause_tag not in CAUSE_TAGS:
            raise ValueError(f"cause_tag must be one of {CAUSE_TAGS}, got {self.cause_tag!r}")
        if self.cause_tag == CAUSE_POSITION and not self.proposal.avoid_regions:
            raise ValueError("a BadPosition reflection must name regions to avoid")

    def to_dict(self) -> dict:
        return {"cause_tag": self.cause_tag, "cause_text": self.cause_text, "proposal": self.proposal.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Reflection":
        return cls(
            cause_tag=d["cause_tag"],
            cause_text=d.get("cause_text", ""),
            proposal=Proposal.from_dict(d["proposal"]),
        )


@dataclass(frozen=True)
class DiscussionOutcome:
    """A reflection after supervision: kept as-is (accepted) or revised."""

    accepted: bool
    revised: Reflection
    transcript: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.transcript) % 2 != 0:
            raise ValueError("transcript must alternate question/answer pairs")

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "revised": self.revised.to_dict(), "transcript": list(self.transcript)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscussionOutcome":
        return cls(
            accepted=bool(d["accepted"]),
            revised=Reflection.from_dict(d["revised"]),
            transcript=tuple(d.get("transcript", ())),
        )


# ---------------------------------------------------------------------------
# Structured-output grammar: one field per line, strict keys.

def format_reflection(r: Reflection) -> str:
    avoid = ", ".join(r.proposal.avoid_regions) if r.proposal.avoid_regions else "none"
    notes = r.proposal.free_text if r.proposal.free_text else "none"
    return "\n".join([
        f"CAUSE_TAG: {r.cause_tag}",
        f"CAUSE: {r.cause_text}",
        f"TARGET_REGION: {r.proposal.target_region}",
        f"APPROACH: {r.proposal.approach}",
        f"GRIP_FORCE_SCALE: {r.proposal.grip_force_scale:g}",
        f"AVOID_REGIONS: {avoid}",
        f"NOTES: {notes}",
    ])


def _unknown_fallback(raw: str) -> Reflection:
    return Reflection(
        cause_tag=CAUSE_UNKNOWN,
        cause_text="the reply did not parse into a structured reflection",
        proposal=Proposal(target_region="topmost", free_text=raw),
    )


def parse_reflection(text: str) -> Reflection:
    """Parse the field-per-line grammar. Never raises: anything that does
    not yield a valid structured reflection falls back to cause_tag
    Unknown with the raw text preserved in the proposal's free_text."""
    fields: dict[str, str] = {}
    for raw_line in text.splitlines():
        key, sep, value = raw_line.strip().partition(":")
        if sep:
            fields.setdefault(key.strip().upper(), value.strip())
    tag = fields.get("CAUSE_TAG", "")
    matched = next((t for t in CAUSE_TAGS if t.lower() == tag.lower()), None)
    if matched is None or not fields.get("TARGET_REGION"):
        return _unknown_fallback(text)
    avoid_text = fields.get("AVOID_REGIONS", "none")
    avoid = () if avoid_text.lower() in ("none", "") else tuple(
        a.strip() for a in avoid_text.split(",") if a.strip()
    )
    notes = fields.get("NOTES", "")
    if notes.lower() == "none":
        notes = ""
    try:
        proposal = Proposal(
            target_region=fields["TARGET_REGION"],
            approach=fields.get("APPROACH", "top").lower(),
            grip_force_scale=float(fields.get("GRIP_FORCE_SCALE", "1")),
            avoid_regions=avoid,
            free_text=notes,
        )
        return Reflection(cause_tag=matched, cause_text=fields.get("CAUSE", ""), proposal=proposal)
    except ValueError:
        return _unknown_fallback(text)


def reflections_equivalent(a: Reflection, b: Reflection) -> bool:
    """Structural equality over the machine-actionable fields; free text
    and cause wording do not count."""
    return (
        a.cause_tag == b.cause_tag
        and a.proposal.target_region == b.proposal.target_region
        and a.proposal.approach == b.proposal.approach
        and a.proposal.grip_force_scale == b.proposal.grip_force_scale
        and sorted(a.proposal.avoid_regions) == sorted(b.proposal.avoid_regions)
    )


# ---------------------------------------------------------------------------
# Deterministic reference analysis.

def _intended_regions(state: SceneState, target: str):
    # The intended object's regions, including any part that split off
    # during the episode, paired with absolute z of each region center.
    pairs = []
    for obj in state.objects.values():
        if obj.instance_id == target or obj.instance_id.startswith(target + ":"):
            for region in obj.model.regions:
                pairs.append((obj.pose[2] + region.center[2], region))
    return pairs


def intended_region_names(state: SceneState, target: str) -> list[str]:
    """Region names on the intended object (split parts included), in
    model order."""
    return [region.name for _, region in _intended_regions(state, target)]


def _pick_alternative(pairs, exclude: str, aperture: float):
    """Best alternative region: a fitting solid first, then a hollow one
    grasped gently. Returns (region, force_scale) or (None, 1.0)."""
    fitting = [r for _, r in pairs if r.name != exclude and r.kind != FORBIDDEN and r.width <= aperture]
    for r in fitting:
        if r.kind == SOLID:
            return r, 1.0
    for r in fitting:
        if r.kind == HOLLOW:
            return r, GENTLE_FORCE_SCALE
    return (fitting[0], 1.0) if fitting else (None, 1.0)


def rule_reflection(state: SceneState, plan) -> Reflection:
    """Map episode evidence (flags, contact, regions) to the corrective
    reflection. Used by ground-truth backends for both producing and
    verifying reflections."""
    flags = state.flags()
    contact = state.last_grasp.region if state.last_grasp else None
    pairs = _intended_regions(state, plan.target)
    if not pairs:
        return Reflection(
            cause_tag=CAUSE_UNKNOWN,
            cause_text="the intended object is no longer in the scene",
            proposal=Proposal(target_region="topmost"),
        )
    topmost_name = min(pairs, key=lambda p: p[0])[1].name
    aperture = state.gripper.max_aperture

    def approach_for(name: str) -> str:
        return "top" if name == topmost_name else "side"

    if "contacted_forbidden" in flags and contact is not None:
        alt, scale = _pick_alternative(pairs, contact, aperture)
        if alt is not None:
            return Reflection(
                cause_tag=CAUSE_POSITION,
                cause_text=f"the grasp touched the {contact} region, which must not be contacted",
                proposal=Proposal(
                    target_region=alt.name,
                    approach=approach_for(alt.name),
                    grip_force_scale=scale,
                    avoid_regions=(contact,),
                ),
            )
    elif "detached" in flags and contact is not None:
        alt, scale = _pick_alternative(pairs, contact, aperture)
        if alt is not None:
            return Reflection(
                cause_tag=CAUSE_PROPERTY,
                cause_text=f"lifting by the {contact} separated it from the body; the parts are loosely joined",
                proposal=Proposal(
                    target_region=alt.name,
                    approach=approach_for(alt.name),
                    grip_force_scale=scale,
                ),
            )
    elif "deformed" in flags and contact is not None:
        alt, scale = _pick_alternative(pairs, contact, aperture)
        if alt is not None:
            return Reflection(
                cause_tag=CAUSE_PROPERTY,
                cause_text=f"the {contact} region collapsed under the default grip; the object is not as rigid as it looks",
                proposal=Proposal(
                    target_region=alt.name,
                    approach=approach_for(alt.name),
                    grip_force_scale=scale,
                ),
            )
        return Reflection(
            cause_tag=CAUSE_PROPERTY,
            cause_text=f"the {contact} region collapsed under the default grip and there is nothing else to hold",
            proposal=Proposal(
                target_region=contact,
                approach=approach_for(contact),
                grip_force_scale=GENTLE_FORCE_SCALE,
            ),
        )
    elif "slipped" in flags and contact is not None:
        alt, scale = _pick_alternative(pairs, contact, aperture)
        if alt is not None:
            return Reflection(
                cause_tag=CAUSE_POSITION,
                cause_text=f"the grip at the {contact} region could not hold the object",
                proposal=Proposal(
                    target_region=alt.name,
                    approach=approach_for(alt.name),
                    grip_force_scale=scale,
                    avoid_regions=(contact,),
                ),
            )
    return Reflection(
        cause_tag=CAUSE_UNKNOWN,
        cause_text="no clear cause could be read from the episode",
        proposal=Proposal(target_region="topmost"),
    )


# ---------------------------------------------------------------------------
# Reflection via a reasoner: staged chain of prompts.

def self_reflect(obj_desc: str, trace, ins, reasoner, verdict, state: SceneState | None = None) -> Reflection:
    """Produce a reflection for a failed episode.

    Four stages: analyze the object description, link the episode outcome
    to possible hidden states, classify the cause, then emit the
    structured reflection. Only the last stage is parsed.
    """
    if verdict is not None and verdict.success:
        raise ReflectionOnSuccessError("reflection requested for a successful episode")

    def ask(stage: int, prompt: str) -> str:
        return reasoner.respond(ReasonerRequest(
            role="reflect",
            prompt=prompt,
            attachments=(trace.final.text,),
            oracle_context={"state": state, "trace": trace, "stage": stage},
        ))

    analysis = ask(1, render("reflect_analyze", instruction=ins.text, caption=obj_desc))
    linkage = ask(2, render("reflect_link", analysis=analysis, final_frame=trace.final.text))
    classification = ask(3, render("reflect_classify", analysis=analysis, linkage=linkage))
    emitted = ask(4, render(
        "reflect_emit",
        instruction=ins.text,
        caption=obj_desc,
        final_frame=trace.final.text,
        classification=classification,
    ))
    return parse_reflection(emitted)


# ---------------------------------------------------------------------------
# Discussion.

def _verify_says_correct(reply: str) -> bool:
    for raw_line in reply.splitlines():
        line = raw_line.strip().upper()
        if line.startswith("VERDICT:"):
            value = line[len("VERDICT:"):].strip().rstrip(".").lower()
            return value.startswith("correct")
    # No explicit verdict is treated as disagreement: supervision should
    # err toward revising.
    return False


def discuss(reflection: Reflection, trace, ins, discussion_reasoner, turns: int = DEFAULT_DISCUSSION_TURNS,
            state: SceneState | None = None) -> DiscussionOutcome:
    """Supervise a reflection over a fixed number of Q&A turns.

    Turn 1 verifies the reflection against the evidence. If it holds, the
    outcome keeps it unchanged and the remaining turns just reconfirm. If
    not, each remaining turn asks for a corrected reflection; the last
    answer wins.
    """
    if turns < 1:
        raise ValueError(f"turns must be >= 1, got {turns}")

    def ask(phase: str, prompt: str, current: Reflection) -> str:
        return discussion_reasoner.respond(ReasonerRequest(
            role="discuss",
            prompt=prompt,
            attachments=(trace.final.text,),
            oracle_context={"state": state, "trace": trace, "reflection": current, "phase": phase},
        ))

    transcript: list[str] = []
    prompt = render(
        "discuss_verify",
        instruction=ins.text,
        final_frame=trace.final.text,
        reflection=format_reflection(reflection),
    )
    reply = ask("verify", prompt, reflection)
    transcript += [prompt, reply]
    accepted = _verify_says_correct(reply)

    revised = reflection
    for _ in range(turns - 1):
        if accepted:
            prompt = render("discuss_confirm", reflection=format_reflection(revised))
            reply = ask("confirm", prompt, revised)
            transcript += [prompt, reply]
        else:
            prompt = render(
                "discuss_revise",
                instruction=ins.text,
                final_frame=trace.final.text,
                reflection=format_reflection(reflection),
            )
            reply = ask("revise", prompt, revised)
            transcript += [prompt, reply]
            revised = parse_reflection(reply)

    if accepted:
        revised = reflection
    return DiscussionOutcome(accepted=accepted, revised=revised, transcript=tuple(transcript))


def identity_discussion(reflection: Reflection) -> DiscussionOutcome:
    """Pass-through used when discussion is disabled: the reflection is
    kept verbatim with an empty transcript."""
    return DiscussionOutcome(accepted=True, revised=reflection, transcript=())
