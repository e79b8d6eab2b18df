"""Pluggable reasoner backends behind one respond() interface.

Three kinds:

* oracle: deterministic rule-table answers computed from simulator ground
  truth carried in the request's oracle context. Planning never reads the
  scene at all (a structural guarantee that first attempts cannot peek at
  hidden conditions); judging, reflecting, and discussing read the
  post-interaction evidence.
* stochastic: the oracle answer corrupted with a seeded, per-role error
  rate. Replaying the same seed and call sequence reproduces the exact
  corruption decisions.
* remote: a chat-completions HTTP exchange. Attachments travel as extra
  text messages (this testbed has no real pixels to send). Credentials
  come from an environment variable and are redacted from logs and
  errors.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .action import GraspOn, Lift, Move, DEFAULT_LIFT_HEIGHT, format_plan
from .errors import BackendFailure, RegraspError
from .judgment import judge_oracle, parse_yes_no
from .prompts import ReasonerRequest
from .reflection import (
    CAUSE_POSITION,
    CAUSE_PROPERTY,
    Proposal,
    Reflection,
    format_reflection,
    intended_region_names,
    reflections_equivalent,
    rule_reflection,
)
from .world import DEFAULT_GRIP_FORCE

logger = logging.getLogger(__name__)

KINDS = ("oracle", "stochastic", "remote")
PROFILES = ("post_interaction", "omniscient")
DEFAULT_API_KEY_ENV = "REGRASP_API_KEY"
_RETRYABLE_STATUS = (408, 409, 429, 500, 502, 503, 504)


class ProfileViolationError(RegraspError):
    """A ground-truth backend was asked for state its knowledge profile
    does not permit."""


@dataclass
class BackendConfig:
    kind: str = "oracle"
    # What simulator state ground-truth backends may read. Under
    # post_interaction, planning requests must not carry a scene handle.
    profile: str = "post_interaction"
    error_rates: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 30.0
    retry_budget: int = 2
    max_in_flight: int = 4
    api_key_env: str = DEFAULT_API_KEY_ENV
    transcript_path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        for role, rate in self.error_rates.items():
            if not 0 <= rate <= 1:
                raise ValueError(f"error rate for {role!r} must be in [0,1], got {rate}")
        if self.retry_budget < 0:
            raise ValueError(f"retry_budget must be >= 0, got {self.retry_budget}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "profile": self.profile,
            "error_rates": dict(sorted(self.error_rates.items())),
            "seed": self.seed,
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timeout": self.timeout,
            "retry_budget": self.retry_budget,
            "max_in_flight": self.max_in_flight,
            "api_key_env": self.api_key_env,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        allowed = {
            "kind", "profile", "error_rates", "seed", "endpoint", "model",
            "temperature", "max_tokens", "timeout", "retry_budget",
            "max_in_flight", "api_key_env", "transcript_path",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown backend config fields: {sorted(unknown)}")
        return cls(**d)


class OracleBackend:
    """Deterministic rule-table answers from simulator ground truth."""

    name = "oracle"

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig(kind="oracle")

    def respond(self, req: ReasonerRequest) -> str:
        handler = getattr(self, f"_{req.role}")
        return handler(req)

    def _plan(self, req: ReasonerRequest) -> str:
        ctx = req.oracle_context
        if self.config.profile == "post_interaction" and ctx.get("state") is not None:
            raise ProfileViolationError("planning may not read the scene under the post_interaction profile")
        target = ctx["target"]
        hint = ctx.get("hint")
        if hint is None:
            grasp = GraspOn(region="topmost", grip_force=DEFAULT_GRIP_FORCE, approach="top")
        else:
            grasp = GraspOn(
                region=hint["target_region"],
                grip_force=DEFAULT_GRIP_FORCE * hint["grip_force_scale"],
                approach=hint["approach"],
            )
        return format_plan((Move(target=target), grasp, Lift(height=DEFAULT_LIFT_HEIGHT)))

    @staticmethod
    def _ground_truth(req: ReasonerRequest):
        ctx = req.oracle_context
        trace, state = ctx.get("trace"), ctx.get("state")
        if trace is None or state is None:
            raise BackendFailure(f"oracle {req.role} needs trace and state in the oracle context")
        return trace, state

    def _judge(self, req: ReasonerRequest) -> str:
        trace, state = self._ground_truth(req)
        verdict = judge_oracle(trace, state)
        yn = {1: "yes", 0: "no"}
        return f"ANSWER: {yn[verdict.g_s]}\nANSWER: {yn[verdict.g_p]}"

    def _reflect(self, req: ReasonerRequest) -> str:
        trace, state = self._ground_truth(req)
        stage = req.oracle_context.get("stage")
        if stage == 1:
            return ("The description alone leaves fill level, part attachment, "
                    "fragility, and touch restrictions undetermined.")
        if stage == 2:
            flags = sorted(state.flags())
            if flags:
                return "Execution raised: " + ", ".join(flags) + "."
            return "Execution raised no adverse flags."
        reference = rule_reflection(state, trace.plan)
        if stage == 3:
            return reference.cause_tag
        if stage == 4:
            return format_reflection(reference)
        raise BackendFailure(f"oracle reflect got unknown stage {stage!r}")

    def _discuss(self, req: ReasonerRequest) -> str:
        trace, state = self._ground_truth(req)
        phase = req.oracle_context.get("phase")
        if phase == "verify":
            proposed = req.oracle_context.get("reflection")
            reference = rule_reflection(state, trace.plan)
            if proposed is not None and reflections_equivalent(proposed, reference):
                return "VERDICT: correct"
            return "VERDICT: incorrect (the evidence supports a different correction)"
        if phase == "confirm":
            return "CONFIRMED"
        if phase == "revise":
            return format_reflection(rule_reflection(state, trace.plan))
        raise BackendFailure(f"oracle discuss got unknown phase {phase!r}")


class StochasticBackend:
    """Oracle answers corrupted with seeded per-role error rates.

    Every corruptible call consumes the same number of random draws
    whether or not it corrupts, so changing a rate never shifts the
    random stream of later calls.
    """

    name = "stochastic"

    def __init__(self, config: BackendConfig):
        self.config = config
        self._oracle = OracleBackend(config)
        self._rng = random.Random(config.seed)

    def respond(self, req: ReasonerRequest) -> str:
        base = self._oracle.respond(req)
        rate = self.config.error_rates.get(req.role, 0.0)
        if req.role == "judge":
            bits = parse_yes_no(base, expected=2)
            flipped = [b ^ 1 if self._rng.random() < rate else b for b in bits]
            yn = {1: "yes", 0: "no"}
            return f"ANSWER: {yn[flipped[0]]}\nANSWER: {yn[flipped[1]]}"
        if req.role == "reflect" and req.oracle_context.get("stage") == 4:
            if self._rng.random() < rate:
                return format_reflection(self._corrupted(req))
            return base
        if req.role == "discuss":
            phase = req.oracle_context.get("phase")
            if phase == "verify":
                if self._rng.random() < rate:
                    return "VERDICT: correct"  # rubber-stamps a bad reflection
                return base
            if phase == "revise":
                if self._rng.random() < rate:
                    return format_reflection(req.oracle_context["reflection"])  # no improvement
                return base
        return base

    def _corrupted(self, req: ReasonerRequest) -> Reflection:
        trace, state = req.oracle_context["trace"], req.oracle_context["state"]
        correct = rule_reflection(state, trace.plan)
        names = intended_region_names(state, trace.plan.target)
        if len(names) > 1:
            try:
                i = names.index(correct.proposal.target_region)
            except ValueError:
                i = 0
            wrong = names[(i + 1) % len(names)]
        else:
            wrong = correct.proposal.target_region
        flipped = CAUSE_POSITION if correct.cause_tag != CAUSE_POSITION else CAUSE_PROPERTY
        avoid = (correct.proposal.target_region,) if flipped == CAUSE_POSITION else ()
        return Reflection(
            cause_tag=flipped,
            cause_text="the failure analysis drew a different conclusion",
            proposal=Proposal(
                target_region=wrong,
                approach=correct.proposal.approach,
                grip_force_scale=1.0,
                avoid_regions=avoid,
            ),
        )


class RemoteBackend:
    """Chat-completions client with retries, a total-time bound, and a
    cap on concurrent requests."""

    def __init__(self, config: BackendConfig):
        if not config.endpoint:
            raise ValueError("remote backend needs an endpoint URL")
        self.config = config
        self.name = f"remote:{config.model or 'default'}"
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._rng = random.Random(config.seed)
        self._log_lock = threading.Lock()

    def _redact(self, text: str) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        return text.replace(key, "[redacted]") if key else text

    def _log(self, req: ReasonerRequest, reply: str) -> None:
        if not self.config.transcript_path:
            return
        record = {"role": req.role, "prompt": self._redact(req.prompt), "reply": self._redact(reply)}
        with self._log_lock:
            with Path(self.config.transcript_path).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def respond(self, req: ReasonerRequest) -> str:
        cfg = self.config
        messages = [{"role": "user", "content": req.prompt}]
        messages += [{"role": "user", "content": f"Attachment:\n{a}"} for a in req.attachments]
        payload = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"

        # Never block past timeout x (retry budget + 1), whatever the
        # retry schedule does.
        deadline = time.monotonic() + cfg.timeout * (cfg.retry_budget + 1)
        delay = 1.0
        last_error = "no attempt made"
        for attempt in range(cfg.retry_budget + 1):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                with self._gate:
                    resp = requests.post(
                        cfg.endpoint, json=payload, headers=headers,
                        timeout=min(cfg.timeout, remaining),
                    )
                if resp.status_code == 200:
                    reply = resp.json()["choices"][0]["message"]["content"]
                    if not isinstance(reply, str):
                        raise BackendFailure(f"remote reply content is {type(reply).__name__}, not text")
                    self._log(req, reply)
                    return reply
                last_error = f"HTTP {resp.status_code}"
                if resp.status_code not in _RETRYABLE_STATUS:
                    raise BackendFailure(f"remote backend rejected the request: {last_error}")
            except BackendFailure:
                raise
            except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = self._redact(f"{type(exc).__name__}: {exc}")
            if attempt < cfg.retry_budget:
                # Exponential backoff from 1 s, doubling, jittered; never
                # sleeping past the deadline.
                pause = min(delay * (0.5 + self._rng.random()), max(0.0, deadline - time.monotonic()))
                if pause > 0:
                    logger.debug("remote retry %d after %.2fs: %s", attempt + 1, pause, last_error)
                    time.sleep(pause)
                delay *= 2
        raise BackendFailure(f"remote backend gave up: {self._redact(last_error)}")


def make_backend(config: BackendConfig):
    if config.kind == "oracle":
        return OracleBackend(config)
    if config.kind == "stochastic":
        return StochasticBackend(config)
    return RemoteBackend(config)
