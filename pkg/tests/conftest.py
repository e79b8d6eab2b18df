import pytest

from regrasp.bench import Reasoners
from regrasp.reasoner import BackendConfig, OracleBackend
from regrasp.world import SCENE_SPEC_VERSION, load_scene


def make_scene_spec(model, scenario="test", seed=0, condition=None, pose=(0.0, 0.0, 0.8)):
    entry = {"model": model, "pose": list(pose)}
    if condition is not None:
        entry["hidden_condition"] = condition
    return {
        "spec_version": SCENE_SPEC_VERSION,
        "scenario_id": scenario,
        "seed": seed,
        "objects": [entry],
    }


class RecordingReasoner:
    """Wraps a backend and keeps every request it saw."""

    def __init__(self, inner):
        self.inner = inner
        self.name = getattr(inner, "name", "recording")
        self.requests = []

    def respond(self, req):
        self.requests.append(req)
        return self.inner.respond(req)


class CannedReasoner:
    """Replies from a fixed script; repeats the last entry when exhausted."""

    name = "canned"

    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = 0

    def respond(self, req):
        reply = self.replies[min(self.calls, len(self.replies) - 1)]
        self.calls += 1
        return reply(req) if callable(reply) else reply


@pytest.fixture
def oracle():
    return OracleBackend()


@pytest.fixture
def oracle_reasoners(oracle):
    return Reasoners(primary=oracle)


@pytest.fixture
def scene_spec():
    return make_scene_spec


@pytest.fixture
def single_object():
    def build(model, condition=None, scenario="test", seed=0):
        spec = make_scene_spec(model, scenario=scenario, seed=seed, condition=condition)
        state = load_scene(spec)
        (object_id,) = state.objects
        return spec, state, object_id

    return build
