"""Scenario-scoped store of strategies that worked.

Keys are normalized object descriptions; values are the discussion
outcomes whose proposals produced a successful grasp. Entries are visible
only within their scenario, and changing scenarios means clearing.

Captions do not encode hidden object state, so a look-alike object in a
different condition scores a memory hit with a possibly wrong strategy.
That deception is intentional and measured by the memory-ablation
experiment; scenario clearing is the only mitigation.

An optional append-only JSONL log makes a store reconstructible: every
put and clear is one record, and loading a store with an existing log
replays it.
"""

from __future__ import annotations

import json
import string
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import RegraspError
from .reflection import DiscussionOutcome

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


class MemoryLogError(RegraspError):
    """A memory log file could not be parsed during replay."""


def normalize_key(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT).split())


@dataclass(frozen=True)
class MemoryEntry:
    key: str
    value: DiscussionOutcome
    scenario_id: str
    trial_id: int
    created_at: int

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "value": self.value.to_dict(),
            "scenario_id": self.scenario_id,
            "trial_id": self.trial_id,
            "created_at": self.created_at,
        }


class MemoryStore:
    """In-memory map with optional append-only persistence.

    Thread safety: operations serialize on one lock, so concurrent
    scenarios sharing a store cannot interleave partial updates.
    """

    def __init__(self, log_path: str | Path | None = None):
        self._entries: dict[tuple[str, str], MemoryEntry] = {}
        self._counter = 0
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path is not None else None
        if self._log_path is not None and self._log_path.exists():
            self._replay(self._log_path)

    def _replay(self, path: Path) -> None:
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                op = record["op"]
                if op == "put":
                    entry = MemoryEntry(
                        key=record["key"],
                        value=DiscussionOutcome.from_dict(record["value"]),
                        scenario_id=record["scenario_id"],
                        trial_id=record["trial_id"],
                        created_at=record["created_at"],
                    )
                    self._entries[(entry.scenario_id, entry.key)] = entry
                    self._counter = max(self._counter, entry.created_at)
                elif op == "clear":
                    scenario = record["scenario_id"]
                    for k in [k for k in self._entries if k[0] == scenario]:
                        del self._entries[k]
                else:
                    raise KeyError(f"op {op!r}")
            except (KeyError, TypeError, ValueError) as exc:
                raise MemoryLogError(f"{path}:{i}: bad memory log record: {exc}") from exc

    def _append_log(self, record: dict) -> None:
        if self._log_path is None:
            return
        with self._log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def put(self, key: str, value: DiscussionOutcome, scenario_id: str, trial_id: int = 0) -> MemoryEntry:
        """Store a successful strategy. Same normalized key: latest wins.

        The caller certifies that ``value`` came from an episode whose
        final verdict was a success; the store cannot check that.
        """
        normalized = normalize_key(key)
        if not normalized:
            raise ValueError(f"key {key!r} normalizes to nothing")
        with self._lock:
            self._counter += 1
            entry = MemoryEntry(
                key=normalized,
                value=value,
                scenario_id=scenario_id,
                trial_id=trial_id,
                created_at=self._counter,
            )
            self._entries[(scenario_id, normalized)] = entry
            self._append_log({"op": "put", **entry.to_dict()})
            return entry

    def get(self, key: str, scenario_id: str) -> DiscussionOutcome | None:
        with self._lock:
            entry = self._entries.get((scenario_id, normalize_key(key)))
            return entry.value if entry else None

    def clear_scenario(self, scenario_id: str) -> int:
        """Drop every entry of one scenario; returns how many went."""
        with self._lock:
            doomed = [k for k in self._entries if k[0] == scenario_id]
            for k in doomed:
                del self._entries[k]
            self._append_log({"op": "clear", "scenario_id": scenario_id})
            return len(doomed)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def entries(self) -> list[MemoryEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.created_at)
