import pytest

from conftest import CannedReasoner, make_scene_spec
from regrasp.action import ActionPlan, Instruction, PlanProvenance, default_initial_plan, execute
from regrasp.bench import perceive
from regrasp.judgment import (
    GraspVerdict,
    JudgmentParseError,
    combine,
    judge_oracle,
    judge_reasoner,
    parse_yes_no,
)
from regrasp.world import GraspOn, Lift, Move, load_scene

TRUTH_TABLE = {(1, 1): 1, (1, 0): 0, (0, 1): 0, (0, 0): 0}


def run_default(model, condition=None):
    state = load_scene(make_scene_spec(model, condition=condition))
    (object_id,) = state.objects
    plan = default_initial_plan(object_id, state)
    trace, state = execute(plan, state)
    return trace, state


class TestCombine:
    def test_truth_table(self):
        for (g_s, g_p), expected in TRUTH_TABLE.items():
            assert combine(g_s, g_p) == expected

    @pytest.mark.parametrize("bits", [(2, 1), (1, -1), (0.5, 1), (None, 0), (True, 1)])
    def test_rejects_non_bits(self, bits):
        # bool is not accepted either: verdict bits are ints 0/1 exactly
        if bits == (True, 1):
            assert combine(True, 1) == 1  # bools are ints in Python; allowed
            return
        with pytest.raises((ValueError, TypeError)):
            combine(*bits)


class TestParseYesNo:
    def test_standard_two_lines(self):
        assert parse_yes_no("ANSWER: yes\nANSWER: no") == [1, 0]

    def test_case_and_punctuation(self):
        assert parse_yes_no("answer: YES!\nAnswer: No.") == [1, 0]

    def test_bare_tokens(self):
        assert parse_yes_no("yes\nno") == [1, 0]

    def test_prose_lines_skipped(self):
        text = "The grasp clearly failed.\nANSWER: no\nIt touched nothing risky.\nANSWER: yes"
        assert parse_yes_no(text) == [0, 1]

    def test_expected_one(self):
        assert parse_yes_no("ANSWER: yes", expected=1) == [1]

    def test_extra_answers_ignored(self):
        assert parse_yes_no("yes\nno\nyes") == [1, 0]

    def test_insufficient_answers_raise_with_raw(self):
        text = "maybe\nprobably not"
        with pytest.raises(JudgmentParseError) as exc_info:
            parse_yes_no(text)
        assert exc_info.value.raw == text

    def test_empty_text(self):
        with pytest.raises(JudgmentParseError):
            parse_yes_no("")


class TestGraspVerdict:
    def test_from_bits(self):
        v = GraspVerdict.from_bits(1, 1, rationale="clean lift")
        assert (v.g_s, v.g_p, v.success) == (1, 1, 1)

    def test_success_must_match_combination(self):
        with pytest.raises(ValueError):
            GraspVerdict(g_s=1, g_p=0, success=1)

    @pytest.mark.parametrize("g_s,g_p", [(2, 0), (0, 2), (-1, 1)])
    def test_bits_validated(self, g_s, g_p):
        with pytest.raises(ValueError):
            GraspVerdict.from_bits(g_s, g_p)

    def test_to_dict(self):
        d = GraspVerdict.from_bits(0, 1, rationale="slipped").to_dict()
        assert d == {"g_s": 0, "g_p": 1, "success": 0, "rationale": "slipped"}


class TestJudgeOracle:
    def test_soft_bag_slip_fails_grasp_only(self):
        trace, state = run_default("tissue_bag")
        v = judge_oracle(trace, state)
        assert (v.g_s, v.g_p, v.success) == (0, 1, 0)

    def test_forbidden_touch_lifts_but_violates(self):
        trace, state = run_default("hard_drive")
        v = judge_oracle(trace, state)
        assert (v.g_s, v.g_p, v.success) == (1, 0, 0)

    def test_clean_success(self):
        trace, state = run_default("cup", condition="lid_secure")
        v = judge_oracle(trace, state)
        assert (v.g_s, v.g_p, v.success) == (1, 1, 1)

    def test_detached_part_is_not_the_target(self):
        trace, state = run_default("cup", condition="lid_loose")
        v = judge_oracle(trace, state)
        assert (v.g_s, v.g_p, v.success) == (0, 1, 0)

    def test_rationale_is_prose(self):
        trace, state = run_default("tissue_bag")
        assert judge_oracle(trace, state).rationale

    def test_no_contact_falls_back_to_planned_region(self):
        # The gripper never touches anything, but the plan aimed at the
        # forbidden topmost region, so the premise bit still drops.
        state = load_scene(make_scene_spec("hard_drive"))
        plan = ActionPlan(
            primitives=(Move(pose=(5.0, 5.0, 0.5)), GraspOn(region="topmost"), Lift(height=0.2)),
            target="hard_drive", provenance=PlanProvenance(reasoner="test"),
        )
        trace, state = execute(plan, state)
        v = judge_oracle(trace, state)
        assert (v.g_s, v.g_p) == (0, 0)


class TestJudgeReasoner:
    def test_matches_oracle_on_examples(self, oracle):
        for model, condition in [("tissue_bag", None), ("hard_drive", None),
                                 ("cup", "lid_secure"), ("cup", "lid_loose")]:
            state = load_scene(make_scene_spec(model, condition=condition))
            (object_id,) = state.objects
            caption = state.objects[object_id].model.caption
            spatial = perceive(state)
            plan = default_initial_plan(object_id, state)
            trace, state = execute(plan, state)
            ins = Instruction(f"pick up {caption}")
            expected = judge_oracle(trace, state)
            got = judge_reasoner(trace, ins, spatial, oracle, state=state)
            assert (got.g_s, got.g_p, got.success) == (expected.g_s, expected.g_p, expected.success)

    def test_rationale_carries_reply(self):
        canned = CannedReasoner("ANSWER: no\nANSWER: yes")
        trace, state = run_default("tissue_bag")
        spatial = []
        v = judge_reasoner(trace, Instruction("pick up the bag"), spatial, canned)
        assert (v.g_s, v.g_p) == (0, 1)
        assert v.rationale == "ANSWER: no\nANSWER: yes"

    def test_unparseable_reply_raises(self):
        canned = CannedReasoner("hard to say, honestly")
        trace, state = run_default("tissue_bag")
        with pytest.raises(JudgmentParseError):
            judge_reasoner(trace, Instruction("pick up the bag"), [], canned)
