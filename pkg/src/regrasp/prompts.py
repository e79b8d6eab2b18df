"""Prompt templates and the request envelope handed to reasoner backends.

Templates live in the package's ``templates/`` directory as plain text
with ``{placeholder}`` fields. They are deliberately example-free: the
default prompts carry no in-context demonstrations.

A ReasonerRequest is what every role module (planning, judging,
reflecting, discussing) sends to a backend. ``oracle_context`` carries
simulator-side handles (scene state, traces, structured hints) for
ground-truth backends; it is never serialized onto the wire and remote
backends must ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .errors import RegraspError

ROLES = ("plan", "judge", "reflect", "discuss")


class TemplateError(RegraspError):
    """A prompt template is missing or its placeholders do not match."""


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    ref = resources.files("regrasp").joinpath("templates", f"{name}.txt")
    try:
        return ref.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise TemplateError(f"no prompt template named {name!r}") from exc


def render(name: str, **fields: str) -> str:
    """Fill a template's placeholders. Field values may contain anything;
    only the template's own braces are interpreted."""
    try:
        return load_template(name).format(**fields)
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"template {name!r} placeholder mismatch: {exc}") from exc


def spatial_lines(records) -> str:
    """One prompt bullet per observed object: id, caption, centroid."""
    lines = []
    for r in records:
        c = r.centroid
        lines.append(f"- {r.object_id}: {r.caption}; centroid ({c[0]:.3f}, {c[1]:.3f}, {c[2]:.3f}) m")
    return "\n".join(lines)


@dataclass
class ReasonerRequest:
    role: str
    prompt: str
    attachments: tuple[str, ...] = ()
    oracle_context: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
