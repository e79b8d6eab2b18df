import http.server
import json
import threading
import time

import pytest

from conftest import make_scene_spec
from regrasp.action import default_initial_plan, execute
from regrasp.bench import Reasoners, run_episode
from regrasp.errors import BackendFailure
from regrasp.judgment import parse_yes_no
from regrasp.prompts import ReasonerRequest
from regrasp.reasoner import (
    BackendConfig,
    OracleBackend,
    ProfileViolationError,
    RemoteBackend,
    StochasticBackend,
    make_backend,
)
from regrasp.reflection import (
    CAUSE_PROPERTY,
    Proposal,
    Reflection,
    format_reflection,
    parse_reflection,
    rule_reflection,
)
from regrasp.world import load_scene

AMBIGUOUS = [
    ("tissue_bag", None),
    ("ice_cream_bar", None),
    ("cookies", None),
    ("cup_noodles", "unsealed"),
    ("cup", "lid_loose"),
    ("hard_drive", None),
]


def failed_episode(model="tissue_bag", condition=None):
    state = load_scene(make_scene_spec(model, condition=condition))
    (object_id,) = state.objects
    plan = default_initial_plan(object_id, state)
    trace, state = execute(plan, state)
    return state, trace


def wrong_reflection():
    return Reflection(
        cause_tag=CAUSE_PROPERTY, cause_text="guesswork",
        proposal=Proposal(target_region="upper_half"),
    )


def role_requests(state, trace):
    """One realistic request per corruptible role interaction."""
    return [
        ReasonerRequest(role="plan", prompt="p", oracle_context={"target": trace.plan.target, "hint": None}),
        ReasonerRequest(role="judge", prompt="p", oracle_context={"trace": trace, "state": state}),
        ReasonerRequest(role="reflect", prompt="p", oracle_context={"state": state, "trace": trace, "stage": 4}),
        ReasonerRequest(role="discuss", prompt="p",
                        oracle_context={"state": state, "trace": trace,
                                        "reflection": wrong_reflection(), "phase": "verify"}),
        ReasonerRequest(role="discuss", prompt="p",
                        oracle_context={"state": state, "trace": trace,
                                        "reflection": wrong_reflection(), "phase": "revise"}),
    ]


class TestBackendConfig:
    @pytest.mark.parametrize("kwargs", [
        {"kind": "psychic"},
        {"profile": "clairvoyant"},
        {"error_rates": {"reflect": 1.5}},
        {"error_rates": {"judge": -0.1}},
        {"retry_budget": -1},
        {"max_in_flight": 0},
        {"timeout": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            BackendConfig(**kwargs)

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ValueError):
            BackendConfig.from_dict({"kind": "oracle", "style": "loud"})

    def test_to_dict_round_trip(self):
        cfg = BackendConfig(kind="stochastic", error_rates={"reflect": 0.4}, seed=7)
        again = BackendConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_make_backend_dispatch(self):
        assert isinstance(make_backend(BackendConfig(kind="oracle")), OracleBackend)
        assert isinstance(make_backend(BackendConfig(kind="stochastic")), StochasticBackend)
        remote = make_backend(BackendConfig(kind="remote", endpoint="http://127.0.0.1:1/x", model="m"))
        assert isinstance(remote, RemoteBackend)

    def test_remote_requires_endpoint(self):
        with pytest.raises(ValueError):
            RemoteBackend(BackendConfig(kind="remote"))


class TestOracleBackend:
    def test_plan_without_hint(self, oracle):
        req = ReasonerRequest(role="plan", prompt="p", oracle_context={"target": "cup_open", "hint": None})
        assert oracle.respond(req) == (
            "MOVE target=cup_open above=true\n"
            "GRASP_ON region=topmost approach=top force=0.8\n"
            "LIFT height=0.2"
        )

    def test_plan_with_hint(self, oracle):
        hint = {"target_region": "stick", "approach": "side", "grip_force_scale": 0.25, "avoid_regions": []}
        req = ReasonerRequest(role="plan", prompt="p", oracle_context={"target": "bar", "hint": hint})
        assert "GRASP_ON region=stick approach=side force=0.2" in oracle.respond(req)

    def test_plan_profile_guard(self, oracle):
        state, _ = failed_episode()
        req = ReasonerRequest(role="plan", prompt="p",
                              oracle_context={"target": "x", "hint": None, "state": state})
        with pytest.raises(ProfileViolationError):
            oracle.respond(req)

    def test_omniscient_profile_lifts_guard(self):
        state, _ = failed_episode()
        backend = OracleBackend(BackendConfig(kind="oracle", profile="omniscient"))
        req = ReasonerRequest(role="plan", prompt="p",
                              oracle_context={"target": "x", "hint": None, "state": state})
        assert "GRASP_ON" in backend.respond(req)

    def test_judge_answers_two_lines(self, oracle):
        state, trace = failed_episode()
        req = ReasonerRequest(role="judge", prompt="p", oracle_context={"trace": trace, "state": state})
        assert oracle.respond(req) == "ANSWER: no\nANSWER: yes"

    def test_judge_without_state_fails(self, oracle):
        req = ReasonerRequest(role="judge", prompt="p", oracle_context={})
        with pytest.raises(BackendFailure):
            oracle.respond(req)

    def test_reflect_stage4_matches_rule_table(self, oracle):
        state, trace = failed_episode()
        req = ReasonerRequest(role="reflect", prompt="p",
                              oracle_context={"state": state, "trace": trace, "stage": 4})
        assert parse_reflection(oracle.respond(req)) == rule_reflection(state, trace.plan)

    def test_reflect_stage3_is_cause_tag(self, oracle):
        state, trace = failed_episode()
        req = ReasonerRequest(role="reflect", prompt="p",
                              oracle_context={"state": state, "trace": trace, "stage": 3})
        assert oracle.respond(req) == rule_reflection(state, trace.plan).cause_tag

    def test_discuss_verify_and_revise(self, oracle):
        state, trace = failed_episode()
        verify = ReasonerRequest(role="discuss", prompt="p",
                                 oracle_context={"state": state, "trace": trace,
                                                 "reflection": wrong_reflection(), "phase": "verify"})
        assert oracle.respond(verify).startswith("VERDICT: incorrect")
        correct = rule_reflection(state, trace.plan)
        verify_ok = ReasonerRequest(role="discuss", prompt="p",
                                    oracle_context={"state": state, "trace": trace,
                                                    "reflection": correct, "phase": "verify"})
        assert oracle.respond(verify_ok) == "VERDICT: correct"

    def test_deterministic(self, oracle):
        state, trace = failed_episode()
        for req in role_requests(state, trace):
            assert oracle.respond(req) == oracle.respond(req)


class TestStochasticBackend:
    def test_zero_rates_degenerate_to_oracle(self, oracle):
        state, trace = failed_episode()
        stochastic = StochasticBackend(BackendConfig(kind="stochastic", seed=3))
        for req in role_requests(state, trace):
            assert stochastic.respond(req) == oracle.respond(req)

    def test_seeded_replay_is_identical(self):
        state, trace = failed_episode()
        rates = {"reflect": 0.5, "judge": 0.5, "discuss": 0.5}
        outputs = []
        for _ in range(2):
            backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates=rates, seed=11))
            outputs.append([backend.respond(req) for req in role_requests(state, trace) * 3])
        assert outputs[0] == outputs[1]

    def test_reflect_corruption_changes_target(self, oracle):
        state, trace = failed_episode()  # tissue bag has two regions
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"reflect": 1.0}, seed=0))
        req = role_requests(state, trace)[2]
        corrupted = parse_reflection(backend.respond(req))
        correct = rule_reflection(state, trace.plan)
        assert corrupted.proposal.target_region != correct.proposal.target_region

    def test_reflect_corruption_on_single_region_breaks_force(self):
        state, trace = failed_episode("cookies")
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"reflect": 1.0}, seed=0))
        req = ReasonerRequest(role="reflect", prompt="p",
                              oracle_context={"state": state, "trace": trace, "stage": 4})
        corrupted = parse_reflection(backend.respond(req))
        correct = rule_reflection(state, trace.plan)
        assert correct.proposal.grip_force_scale == pytest.approx(0.25)
        assert corrupted.proposal.target_region == correct.proposal.target_region
        assert corrupted.proposal.grip_force_scale == pytest.approx(1.0)

    def test_judge_corruption_flips_bits(self, oracle):
        state, trace = failed_episode()
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"judge": 1.0}, seed=0))
        req = role_requests(state, trace)[1]
        assert parse_yes_no(backend.respond(req)) == [b ^ 1 for b in parse_yes_no(oracle.respond(req))]

    def test_discuss_corruption_rubber_stamps(self):
        state, trace = failed_episode()
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"discuss": 1.0}, seed=0))
        verify = role_requests(state, trace)[3]
        assert backend.respond(verify) == "VERDICT: correct"

    def test_discuss_corruption_echoes_on_revise(self):
        state, trace = failed_episode()
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"discuss": 1.0}, seed=0))
        revise = role_requests(state, trace)[4]
        assert backend.respond(revise) == format_reflection(wrong_reflection())

    @pytest.mark.parametrize("model,condition", AMBIGUOUS)
    def test_full_corruption_defeats_the_retry(self, model, condition):
        # A corrupted reflection must actually be wrong: with reflect error
        # rate 1 and no discussion, the second attempt fails on every
        # ambiguous object.
        spec = make_scene_spec(model, condition=condition)
        (object_id,) = load_scene(spec).objects
        backend = StochasticBackend(BackendConfig(kind="stochastic", error_rates={"reflect": 1.0}, seed=0))
        result = run_episode(spec, object_id, Reasoners(primary=backend), None,
                             max_attempts=2, use_discussion=False)
        assert result.success == 0
        assert result.failure_attempt_indices == (1, 2)


# ---------------------------------------------------------------------------
# Remote backend against a local stub.

class _StubHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        self.server.seen.append({"auth": self.headers.get("Authorization"), "payload": payload})
        action = self.server.script.pop(0) if self.server.script else ("reply", "fallback")
        kind, value = action
        if kind == "sleep":
            time.sleep(value)
            kind, value = "reply", "slow reply"
        if kind == "status":
            body = json.dumps({"error": "refused"}).encode("utf-8")
            self.send_response(value)
        elif kind == "raw":
            body = value.encode("utf-8")
            self.send_response(200)
        else:
            body = json.dumps({"choices": [{"message": {"content": value}}]}).encode("utf-8")
            self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.script = []
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.endpoint = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=2)


def remote(stub_server, **overrides):
    kwargs = {"kind": "remote", "endpoint": stub_server.endpoint, "model": "test-model",
              "timeout": 5.0, "retry_budget": 2, "seed": 0}
    kwargs.update(overrides)
    return RemoteBackend(BackendConfig(**kwargs))


def plan_request(attachments=()):
    return ReasonerRequest(role="plan", prompt="propose a plan", attachments=attachments)


class TestRemoteBackend:
    def test_reply_returned_verbatim(self, stub):
        canned = "ANSWER: yes\nANSWER: no\nwith ünïcode and trailing spaces  "
        stub.script = [("reply", canned)]
        assert remote(stub).respond(plan_request()) == canned

    def test_payload_shape(self, stub):
        stub.script = [("reply", "ok")]
        remote(stub, temperature=0.5, max_tokens=77).respond(
            plan_request(attachments=("frame one", "frame two")))
        payload = stub.seen[0]["payload"]
        assert payload["model"] == "test-model"
        assert payload["temperature"] == 0.5
        assert payload["max_tokens"] == 77
        roles = [m["role"] for m in payload["messages"]]
        assert roles == ["user", "user", "user"]
        assert payload["messages"][0]["content"] == "propose a plan"
        assert payload["messages"][1]["content"] == "Attachment:\nframe one"

    def test_retries_then_succeeds(self, stub, monkeypatch):
        monkeypatch.setattr("regrasp.reasoner.time.sleep", lambda s: None)
        stub.script = [("status", 500), ("status", 503), ("reply", "third time lucky")]
        assert remote(stub).respond(plan_request()) == "third time lucky"
        assert len(stub.seen) == 3

    def test_gives_up_after_budget(self, stub, monkeypatch):
        monkeypatch.setattr("regrasp.reasoner.time.sleep", lambda s: None)
        stub.script = [("status", 500)] * 3
        with pytest.raises(BackendFailure):
            remote(stub, retry_budget=2).respond(plan_request())
        assert len(stub.seen) == 3

    def test_client_error_is_not_retried(self, stub):
        stub.script = [("status", 400)]
        with pytest.raises(BackendFailure):
            remote(stub).respond(plan_request())
        assert len(stub.seen) == 1

    def test_malformed_body_is_retried(self, stub, monkeypatch):
        monkeypatch.setattr("regrasp.reasoner.time.sleep", lambda s: None)
        stub.script = [("raw", "this is not json"), ("reply", "recovered")]
        assert remote(stub).respond(plan_request()) == "recovered"

    def test_never_blocks_past_the_deadline(self, stub):
        stub.script = [("sleep", 3.0)] * 4
        backend = remote(stub, timeout=0.3, retry_budget=1)
        start = time.monotonic()
        with pytest.raises(BackendFailure):
            backend.respond(plan_request())
        elapsed = time.monotonic() - start
        # hard bound: timeout x (retry budget + 1), plus scheduling slack
        assert elapsed < 0.3 * 2 + 0.5

    def test_credentials_sent_and_redacted(self, stub, tmp_path, monkeypatch):
        monkeypatch.setenv("GRASP_TEST_KEY", "sekret-token-123")
        transcript = tmp_path / "transcript.jsonl"
        stub.script = [("reply", "your key sekret-token-123 is showing")]
        backend = remote(stub, api_key_env="GRASP_TEST_KEY", transcript_path=str(transcript))
        reply = backend.respond(plan_request())
        assert "sekret-token-123" in reply  # the caller sees the raw reply
        assert stub.seen[0]["auth"] == "Bearer sekret-token-123"
        logged = transcript.read_text(encoding="utf-8")
        assert "sekret-token-123" not in logged
        assert "[redacted]" in logged

    def test_no_key_means_no_auth_header(self, stub, monkeypatch):
        monkeypatch.delenv("REGRASP_API_KEY", raising=False)
        stub.script = [("reply", "ok")]
        remote(stub).respond(plan_request())
        assert stub.seen[0]["auth"] is None
