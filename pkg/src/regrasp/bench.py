"""Episode orchestration, experiment runner, and reporting.

An episode is the full autonomous loop on one scene: observe, plan,
execute, judge, and on failure reflect, discuss, and retry with the
revised correction carried forward as a hint. Experiments repeat
episodes over object groups and aggregate per-group success rates,
failed trial indices, and failed (trial, attempt) pairs.

Three experiment designs are built in:

* main8: the eight standard catalog objects, each its own scenario.
* no_discussion: main8 with the discussion stage replaced by an
  identity pass-through (the reflection is used as produced).
* memory_ablation: two mixed-condition pairs (a cup whose lid may or
  may not be attached; a noodle cup that may or may not be sealed),
  with the condition redrawn each trial, run once with scenario memory
  and once without.

Reports exist in two forms: a canonical machine-readable record whose
bytes depend only on (config, seed), and a text table. Wall-clock time
never enters the canonical record; it goes in a sidecar. The run log is
line-delimited JSON, one record per attempt, and is sufficient to
rebuild the report (see replay).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .action import Instruction, compile_plan, execute
from .errors import RegraspError, ReplyParseError
from .geometry import GeometryError, SpatialRecord, spatial_record
from .judgment import GraspVerdict, judge_reasoner
from .memory import MemoryStore
from .reasoner import BackendConfig, make_backend
from .reflection import (
    CAUSE_UNKNOWN,
    DEFAULT_DISCUSSION_TURNS,
    DiscussionOutcome,
    Proposal,
    Reflection,
    discuss,
    identity_discussion,
    self_reflect,
)
from .world import DEFAULT_GRIP_FORCE, SCENE_SPEC_VERSION, SceneState, load_scene, observe

REPORT_SCHEMA = 1
CONFIG_SCHEMA = 1
LOG_SCHEMA = 1

EXPERIMENTS = ("main8", "no_discussion", "memory_ablation")
DEFAULT_TRIALS = {"main8": 10, "no_discussion": 10, "memory_ablation": 20}
DEFAULT_MAX_ATTEMPTS = 10

MAIN8_OBJECTS = (
    "tissue_bag",
    "ice_cream_bar",
    "cookies",
    "cup_noodles_sealed",
    "cup_noodles_unsealed",
    "cup_closed",
    "cup_open",
    "hard_drive",
)
# Mixed-condition pairs: (group label, family model, 50/50 condition draw).
ABLATION_PAIRS = (
    ("cup", "cup", ("lid_secure", "lid_loose")),
    ("cup_noodles", "cup_noodles", ("sealed", "unsealed")),
)


class ConfigError(RegraspError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class Reasoners:
    """The model under test plus an optional separate discussion peer.

    When discussion is None the primary backend argues with itself.
    """

    primary: object
    discussion: object | None = None

    @property
    def discussion_peer(self):
        return self.discussion if self.discussion is not None else self.primary


@dataclass(frozen=True)
class EpisodeResult:
    label: str
    hidden_condition: str | None
    success: int
    attempts_used: int
    failure_attempt_indices: tuple[int, ...]
    reflection_calls: int
    memory_hit: bool
    verdicts: tuple[GraspVerdict, ...]

    def __post_init__(self):
        if self.success not in (0, 1):
            raise ValueError(f"success must be 0 or 1, got {self.success}")
        if self.attempts_used < 1:
            raise ValueError("attempts_used must be >= 1")
        if len(self.verdicts) != self.attempts_used:
            raise ValueError("one verdict per attempt required")
        if self.success and not self.verdicts[-1].success:
            raise ValueError("a successful episode must end on a successful verdict")
        if any(a < 1 or a > self.attempts_used for a in self.failure_attempt_indices):
            raise ValueError("failure attempt indices out of range")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "hidden_condition": self.hidden_condition,
            "success": self.success,
            "attempts_used": self.attempts_used,
            "failure_attempt_indices": list(self.failure_attempt_indices),
            "reflection_calls": self.reflection_calls,
            "memory_hit": self.memory_hit,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


@dataclass
class ExperimentConfig:
    experiment: str = "main8"
    seed: int = 0
    trials: int | None = None  # None picks the experiment's default
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    use_discussion: bool = True
    use_memory: bool = True
    discussion_turns: int = DEFAULT_DISCUSSION_TURNS
    backend: BackendConfig = field(default_factory=BackendConfig)
    discussion_backend: BackendConfig | None = None
    memory_log: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.trials is not None and self.trials < 0:
            raise ConfigError(f"trials must be >= 0, got {self.trials}")
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.discussion_turns < 1:
            raise ConfigError(f"discussion_turns must be >= 1, got {self.discussion_turns}")

    @property
    def resolved_trials(self) -> int:
        return DEFAULT_TRIALS[self.experiment] if self.trials is None else self.trials

    @property
    def discussion_enabled(self) -> bool:
        return self.use_discussion and self.experiment != "no_discussion"

    def to_dict(self) -> dict:
        # Paths (memory log, transcripts) are deliberately left out so the
        # canonical report does not depend on where artifacts were written.
        return {
            "schema": CONFIG_SCHEMA,
            "experiment": self.experiment,
            "seed": self.seed,
            "trials": self.resolved_trials,
            "max_attempts": self.max_attempts,
            "use_discussion": self.use_discussion,
            "use_memory": self.use_memory,
            "discussion_turns": self.discussion_turns,
            "backend": self.backend.to_dict(),
            "discussion_backend": None if self.discussion_backend is None else self.discussion_backend.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        schema = d.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r} (expected {CONFIG_SCHEMA})")
        allowed = {
            "experiment", "seed", "trials", "max_attempts", "use_discussion",
            "use_memory", "discussion_turns", "backend", "discussion_backend",
            "memory_log",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            if isinstance(d.get("backend"), dict):
                d["backend"] = BackendConfig.from_dict(d["backend"])
            if isinstance(d.get("discussion_backend"), dict):
                d["discussion_backend"] = BackendConfig.from_dict(d["discussion_backend"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Episode loop.

def perceive(state: SceneState) -> list[SpatialRecord]:
    """Spatial records for every object the camera can localize."""
    records = []
    snapshot = observe(state)
    for view in snapshot.objects:
        try:
            records.append(spatial_record(view.object_id, view.caption, view.mask, view.depth, state.camera))
        except GeometryError:
            continue  # off-frame or too few valid pixels to localize
    return records


def _parse_failure_verdict(exc: ReplyParseError) -> GraspVerdict:
    # A reply that cannot be parsed counts the attempt as failed. There is
    # no evidence of a premise violation, so only the grasp bit drops.
    return GraspVerdict(g_s=0, g_p=1, success=0, rationale=f"unparseable reply: {exc}")


def _success_memory_value(carried: DiscussionOutcome | None, trace, state) -> DiscussionOutcome:
    """What to remember after a success.

    A success that followed reflection stores the agreed correction. A
    first-try success had no reflection, so a strategy record is
    synthesized from the grasp that actually worked.
    """
    if carried is not None:
        return carried
    grasp = trace.plan.grasp()
    region = state.last_grasp.region if state.last_grasp else grasp.region
    scale = min(1.0, grasp.grip_force / DEFAULT_GRIP_FORCE)
    summary = Reflection(
        cause_tag=CAUSE_UNKNOWN,
        cause_text="recorded from a successful grasp, not from a failure analysis",
        proposal=Proposal(target_region=region, approach=grasp.approach, grip_force_scale=scale),
    )
    return DiscussionOutcome(accepted=True, revised=summary, transcript=())


def run_episode(
    scene_spec: dict,
    object_id: str,
    reasoners: Reasoners,
    memory: MemoryStore | None,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    use_discussion: bool = True,
    discussion_turns: int = DEFAULT_DISCUSSION_TURNS,
    trial_id: int = 0,
    on_attempt=None,
) -> EpisodeResult:
    """Run one episode to success or to the attempt budget.

    The scene is reloaded fresh for every attempt: a failed grasp may
    deform or split the object, and a retry starts from an intact scene,
    carrying only what the agent learned. Passing memory=None disables
    the memory stage entirely. on_attempt, when given, receives one dict
    per attempt (the run-log record body).
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    carried: DiscussionOutcome | None = None
    verdicts: list[GraspVerdict] = []
    failures: list[int] = []
    reflection_calls = 0
    memory_hit = False
    label = condition = None

    for attempt in range(1, max_attempts + 1):
        state = load_scene(scene_spec)
        if object_id not in state.objects:
            raise ConfigError(f"scene has no object {object_id!r}")
        target = state.objects[object_id]
        label = target.model.label
        condition = target.model.hidden_condition
        caption = target.model.caption
        instruction = Instruction(f"pick up {caption}")
        spatial = perceive(state)
        memory_hint = memory.get(caption, state.scenario_id) if memory is not None else None

        reflected = False
        try:
            plan = compile_plan(
                instruction, spatial, reasoners.primary,
                memory_hint=memory_hint, reflection_hint=carried,
            )
        except ReplyParseError as exc:
            verdict = _parse_failure_verdict(exc)
            verdicts.append(verdict)
            failures.append(attempt)
            if on_attempt:
                on_attempt(_attempt_record(attempt, condition, object_id, verdict, False, False, reflected))
            continue

        trace, state = execute(plan, state)
        try:
            verdict = judge_reasoner(trace, instruction, spatial, reasoners.primary, state=state)
        except ReplyParseError as exc:
            verdict = _parse_failure_verdict(exc)
        verdicts.append(verdict)
        if plan.provenance.memory_hit:
            memory_hit = True

        if verdict.success:
            if memory is not None:
                memory.put(caption, _success_memory_value(carried, trace, state), state.scenario_id, trial_id)
            if on_attempt:
                on_attempt(_attempt_record(attempt, condition, object_id, verdict,
                                           plan.provenance.memory_hit, plan.provenance.reflection_hint, reflected))
            return EpisodeResult(
                label=label, hidden_condition=condition, success=1, attempts_used=attempt,
                failure_attempt_indices=tuple(failures), reflection_calls=reflection_calls,
                memory_hit=memory_hit, verdicts=tuple(verdicts),
            )

        failures.append(attempt)
        if attempt < max_attempts:
            # Reflection is pointless on the last attempt: there is no
            # retry left to apply the correction to.
            reflection = self_reflect(caption, trace, instruction, reasoners.primary, verdict, state=state)
            reflection_calls += 1
            reflected = True
            if use_discussion:
                carried = discuss(reflection, trace, instruction, reasoners.discussion_peer,
                                  turns=discussion_turns, state=state)
            else:
                carried = identity_discussion(reflection)
        if on_attempt:
            on_attempt(_attempt_record(attempt, condition, object_id, verdict,
                                       plan.provenance.memory_hit, plan.provenance.reflection_hint, reflected))

    return EpisodeResult(
        label=label, hidden_condition=condition, success=0, attempts_used=max_attempts,
        failure_attempt_indices=tuple(failures), reflection_calls=reflection_calls,
        memory_hit=memory_hit, verdicts=tuple(verdicts),
    )


def _attempt_record(attempt, condition, object_id, verdict, memory_hit, reflection_hint, reflected) -> dict:
    return {
        "attempt": attempt,
        "object": object_id,
        "hidden_condition": condition,
        "g_s": verdict.g_s,
        "g_p": verdict.g_p,
        "success": verdict.success,
        "memory_hit": int(bool(memory_hit)),
        "reflection_hint": int(bool(reflection_hint)),
        "reflected": int(reflected),
    }


# ---------------------------------------------------------------------------
# Experiment runner.

@dataclass(frozen=True)
class GroupResult:
    arm: str
    label: str
    trials: int
    successes: int
    failed_trials: tuple[int, ...]           # 1-based trial indices that ended failed
    failed_attempts: tuple[tuple[int, int], ...]  # every failed (trial, attempt)
    reflection_calls: int
    memory_hits: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")

    def to_dict(self) -> dict:
        d = {
            "arm": self.arm,
            "label": self.label,
            "trials": self.trials,
            "successes": self.successes,
            "failed_trials": list(self.failed_trials),
            "failed_attempts": [list(p) for p in self.failed_attempts],
            "reflection_calls": self.reflection_calls,
            "memory_hits": self.memory_hits,
        }
        if self.trials:
            d["rate"] = [self.successes, self.trials]  # exact fraction
        return d


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    seed: int
    config: dict
    config_digest: str
    groups: tuple[GroupResult, ...]

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "config_digest": self.config_digest,
            "groups": [g.to_dict() for g in self.groups],
        }

    def to_json(self) -> str:
        # Canonical bytes: key-sorted, fixed indentation, trailing newline.
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


class RunLog:
    """Append-only line-delimited log, one record per attempt."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def header(self, config: ExperimentConfig) -> None:
        self._write({"record": "config", "schema": LOG_SCHEMA,
                     "config": config.to_dict(), "config_digest": config.digest()})

    def attempt(self, record: dict) -> None:
        self._write({"record": "attempt", **record})

    def _write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()


def _scene_for(scenario_id: str, model: str, scene_seed: int, condition=None) -> dict:
    entry = {"model": model, "pose": [0.0, 0.0, 0.8]}
    if condition is not None:
        entry["hidden_condition"] = condition
    return {
        "spec_version": SCENE_SPEC_VERSION,
        "scenario_id": scenario_id,
        "seed": scene_seed,
        "objects": [entry],
    }


def _scene_seed(seed: int, group_index: int, trial: int) -> int:
    # Arbitrary fixed mixing; only needs to be deterministic and distinct
    # per (group, trial) so sampled conditions vary across trials but not
    # across arms or reruns.
    return seed * 100003 + group_index * 1009 + trial


def _make_reasoners(config: ExperimentConfig) -> Reasoners:
    primary = make_backend(config.backend)
    discussion = None
    if config.discussion_backend is not None:
        discussion = make_backend(config.discussion_backend)
    return Reasoners(primary=primary, discussion=discussion)


def _run_group(config, reasoners, memory, arm, label, group_index, scene_factory, log) -> GroupResult:
    successes = 0
    failed_trials: list[int] = []
    failed_attempts: list[tuple[int, int]] = []
    reflection_calls = 0
    memory_hits = 0
    for trial in range(1, config.resolved_trials + 1):
        spec = scene_factory(trial)
        state = load_scene(spec)
        (object_id,) = state.objects  # all built-in experiments place one object

        def emit(record, _trial=trial):
            record = {"arm": arm, "label": label, "trial": _trial, **record}
            if record["success"] == 0:
                failed_attempts.append((_trial, record["attempt"]))
            if log:
                log.attempt(record)

        result = run_episode(
            spec, object_id, reasoners, memory,
            max_attempts=config.max_attempts,
            use_discussion=config.discussion_enabled,
            discussion_turns=config.discussion_turns,
            trial_id=trial,
            on_attempt=emit,
        )
        successes += result.success
        if not result.success:
            failed_trials.append(trial)
        reflection_calls += result.reflection_calls
        memory_hits += int(result.memory_hit)
    return GroupResult(
        arm=arm, label=label, trials=config.resolved_trials, successes=successes,
        failed_trials=tuple(failed_trials), failed_attempts=tuple(failed_attempts),
        reflection_calls=reflection_calls, memory_hits=memory_hits,
    )


def run_experiment(config: ExperimentConfig, log_path=None) -> ExperimentReport:
    """Run one experiment; optionally stream the run log to log_path."""
    log = RunLog(log_path) if log_path else None
    try:
        if log:
            log.header(config)
        groups: list[GroupResult] = []
        if config.experiment in ("main8", "no_discussion"):
            reasoners = _make_reasoners(config)
            memory = MemoryStore(config.memory_log) if config.use_memory else None
            for gi, name in enumerate(MAIN8_OBJECTS):
                scenario = f"{config.experiment}/{name}"
                factory = lambda trial, n=name, s=scenario, g=gi: _scene_for(s, n, _scene_seed(config.seed, g, trial))
                groups.append(_run_group(config, reasoners, memory, "main", name, gi, factory, log))
        else:  # memory_ablation
            arms = [("with_memory", True), ("without_memory", False)]
            if not config.use_memory:
                arms = [("without_memory", False)]
            for arm, with_memory in arms:
                # Fresh backends per arm: both arms consume the same random
                # stream, so the comparison is paired.
                reasoners = _make_reasoners(config)
                memory = MemoryStore(config.memory_log) if with_memory else None
                for gi, (label, family, conditions) in enumerate(ABLATION_PAIRS):
                    scenario = f"memory_ablation/{label}"
                    sample = {"sample": {c: 0.5 for c in conditions}}
                    factory = lambda trial, f=family, s=scenario, g=gi: _scene_for(
                        s, f, _scene_seed(config.seed, g, trial), condition=sample)
                    groups.append(_run_group(config, reasoners, memory, arm, label, gi, factory, log))
        return ExperimentReport(
            experiment=config.experiment, seed=config.seed, config=config.to_dict(),
            config_digest=config.digest(), groups=tuple(groups),
        )
    finally:
        if log:
            log.close()


# ---------------------------------------------------------------------------
# Reporting and replay.

def format_cell(successes: int, trials: int, failed_trials) -> str:
    """One table cell: percentage plus parenthesized failed trial indices."""
    if trials == 0:
        return "n/a"
    pct = 100.0 * successes / trials
    text = f"{pct:.0f}%" if pct == int(pct) else f"{pct:.1f}%"
    if failed_trials:
        text += " (" + ",".join(str(t) for t in failed_trials) + ")"
    return text


def render_report(report: ExperimentReport) -> str:
    """Text table: one column per object group, one row per arm."""
    header = [f"experiment: {report.experiment}", f"seed: {report.seed}",
              f"config: {report.config_digest[:12]}"]
    arms = []
    labels = []
    for g in report.groups:
        if g.arm not in arms:
            arms.append(g.arm)
        if g.label not in labels:
            labels.append(g.label)
    cells = {(g.arm, g.label): format_cell(g.successes, g.trials, g.failed_trials) for g in report.groups}
    if not cells:
        return "\n".join(header) + "\n"

    rows = [["arm"] + labels]
    for arm in arms:
        rows.append([arm] + [cells.get((arm, label), "-") for label in labels])
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(text.ljust(w) for text, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(header) + "\n\n" + "\n".join(lines) + "\n"


def write_artifacts(report: ExperimentReport, out_dir, wall_clock_s: float | None = None) -> dict:
    """Write report.json (canonical), report.txt, and run_meta.json.

    Timing lives only in the sidecar so that report.json is byte-stable
    across reruns of the same config and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report_json": out / "report.json",
        "report_txt": out / "report.txt",
        "run_meta": out / "run_meta.json",
    }
    paths["report_json"].write_text(report.to_json(), encoding="utf-8")
    paths["report_txt"].write_text(render_report(report), encoding="utf-8")
    meta = {"wall_clock_s": wall_clock_s, "written_at_unix": time.time()}
    paths["run_meta"].write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return paths


def report_from_dict(d: dict) -> ExperimentReport:
    """Inverse of ExperimentReport.to_dict."""
    if d.get("schema") != REPORT_SCHEMA:
        raise ConfigError(f"unsupported report schema {d.get('schema')!r} (expected {REPORT_SCHEMA})")
    try:
        groups = tuple(
            GroupResult(
                arm=g["arm"], label=g["label"], trials=g["trials"], successes=g["successes"],
                failed_trials=tuple(g["failed_trials"]),
                failed_attempts=tuple(tuple(p) for p in g["failed_attempts"]),
                reflection_calls=g["reflection_calls"], memory_hits=g["memory_hits"],
            )
            for g in d["groups"]
        )
        return ExperimentReport(
            experiment=d["experiment"], seed=d["seed"], config=d["config"],
            config_digest=d["config_digest"], groups=groups,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed report record: {exc}") from exc


class ReplayError(RegraspError):
    """Run log missing, truncated, or malformed."""


def replay(log_path) -> ExperimentReport:
    """Rebuild the experiment report from a run log alone."""
    path = Path(log_path)
    if not path.exists():
        raise ReplayError(f"no run log at {path}")
    config_record = None
    episodes: dict[tuple, dict] = {}  # (arm, label, trial) -> episode accumulator
    order: list[tuple] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            kind = record.get("record")
            if kind == "config":
                config_record = record
            elif kind == "attempt":
                try:
                    key = (record["arm"], record["label"], record["trial"])
                    if key not in episodes:
                        episodes[key] = {"attempts": [], "reflections": 0, "memory_hit": 0}
                        order.append(key)
                    episodes[key]["attempts"].append(record)
                    episodes[key]["reflections"] += record["reflected"]
                    episodes[key]["memory_hit"] |= record["memory_hit"]
                except KeyError as exc:
                    raise ReplayError(f"{path}:{lineno}: attempt record missing {exc}") from exc
            else:
                raise ReplayError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if config_record is None:
        raise ReplayError(f"{path}: no config record found")
    config = config_record["config"]

    group_keys: list[tuple] = []
    per_group: dict[tuple, dict] = {}
    for arm, label, trial in order:
        gkey = (arm, label)
        if gkey not in per_group:
            per_group[gkey] = {"trials": 0, "successes": 0, "failed_trials": [],
                               "failed_attempts": [], "reflections": 0, "memory_hits": 0}
            group_keys.append(gkey)
        ep = episodes[(arm, label, trial)]
        g = per_group[gkey]
        g["trials"] += 1
        final = ep["attempts"][-1]
        g["successes"] += final["success"]
        if not final["success"]:
            g["failed_trials"].append(trial)
        g["failed_attempts"].extend((trial, a["attempt"]) for a in ep["attempts"] if not a["success"])
        g["reflections"] += ep["reflections"]
        g["memory_hits"] += ep["memory_hit"]

    groups = tuple(
        GroupResult(
            arm=arm, label=label, trials=g["trials"], successes=g["successes"],
            failed_trials=tuple(g["failed_trials"]), failed_attempts=tuple(g["failed_attempts"]),
            reflection_calls=g["reflections"], memory_hits=g["memory_hits"],
        )
        for (arm, label), g in ((k, per_group[k]) for k in group_keys)
    )
    return ExperimentReport(
        experiment=config["experiment"], seed=config["seed"], config=config,
        config_digest=config_record["config_digest"], groups=groups,
    )
