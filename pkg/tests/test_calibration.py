import pytest

from conftest import count_calls, fact, gen, logic, make_path, scripted
from worldline.calibration import (
    TraceKind,
    TraceOutcome,
    calibrate_event_fact,
    calibrate_pair_logic,
    calibrate_world_line,
    check_pair_logic,
    path_fact_indicators,
    path_logic_indicators,
)
from worldline.core import AblationMode, CalibStatus, DeductionConfig, EventNode
from worldline.errors import InvalidArgumentError, ProviderError
from worldline.knowledge import KnowledgePassage, build_index

FIRE_EVENT = "Staff grab a portable fire extinguisher to attack the platform fire."


@pytest.fixture
def config():
    return DeductionConfig(rng_seed=0, delta_fact=0.8, max_fact_revisions=3, max_logic_regens=3)


def event(text=FIRE_EVENT, node_id="n0001", stage=1, parent="n0000"):
    return EventNode(id=node_id, parent_id=parent, stage=stage, text=text, temperature=0.7)


class TestFactCalibration:
    def test_accepted_first_try(self, rail_index, config):
        provider = scripted(fact(0.9))
        node, trace = calibrate_event_fact(event(), rail_index, provider, provider, config)
        assert node.calib_status is CalibStatus.FACT_OK
        assert node.fact_score == 0.9
        assert node.fact_ref == "p1"
        assert trace.outcome is TraceOutcome.ACCEPTED
        assert len(trace.attempts) == 1

    def test_revised_on_second_attempt(self, rail_index, config):
        provider = scripted(fact(0.5), gen("Trained staff apply a class-rated extinguisher."), fact(0.9))
        node, trace = calibrate_event_fact(event(), rail_index, provider, provider, config)
        assert node.calib_status is CalibStatus.FACT_REVISED
        assert node.text == "Trained staff apply a class-rated extinguisher."
        assert node.fact_score == 0.9
        assert trace.outcome is TraceOutcome.REVISED
        assert len(trace.attempts) == 2
        assert [a.score_or_verdict for a in trace.attempts] == [0.5, 0.9]

    def test_exhaustion_keeps_best_candidate(self, rail_index):
        config = DeductionConfig(rng_seed=0, max_fact_revisions=2)
        provider = scripted(
            fact(0.10), gen("candidate one"), fact(0.30), gen("candidate two"), fact(0.20)
        )
        node, trace = calibrate_event_fact(event(), rail_index, provider, provider, config)
        assert node.calib_status is CalibStatus.FACT_UNRESOLVED
        assert trace.outcome is TraceOutcome.UNRESOLVED
        assert len(trace.attempts) == 3  # 1 + R
        assert node.text == "candidate one"  # best score 0.30 retained
        assert node.fact_score == 0.30

    def test_budget_bound(self, rail_index):
        config = DeductionConfig(rng_seed=0, max_fact_revisions=2)
        provider = scripted()  # synthetic judge scores 0.90 -> accepted immediately
        calibrate_event_fact(event(), rail_index, provider, provider, config)
        assert count_calls(provider, "judge_fact") <= 1 + config.max_fact_revisions

        always_low = scripted(*([fact(0.1), gen("retry text")] * 5), fact(0.1))
        calibrate_event_fact(event(), rail_index, always_low, always_low, config)
        assert count_calls(always_low, "judge_fact") == 1 + config.max_fact_revisions

    def test_no_retrieval_overlap_marks_unresolved(self, config):
        index = build_index([KnowledgePassage("q1", "d", "quartz xylophone entries only")])
        provider = scripted()
        node, trace = calibrate_event_fact(event(), index, provider, provider, config)
        assert node.calib_status is CalibStatus.FACT_UNRESOLVED
        assert node.fact_ref is None
        assert trace.attempts == []
        assert count_calls(provider, "judge_fact") == 0

    def test_empty_text_rejected(self, rail_index, config):
        provider = scripted()
        with pytest.raises(InvalidArgumentError):
            calibrate_event_fact(event(text="  "), rail_index, provider, provider, config)

    def test_monotone_non_regression(self, rail_index):
        # kept candidate always carries the maximum score among attempts
        config = DeductionConfig(rng_seed=0, max_fact_revisions=3)
        provider = scripted(
            fact(0.45), gen("a"), fact(0.70), gen("b"), fact(0.25), gen("c"), fact(0.60)
        )
        node, trace = calibrate_event_fact(event(), rail_index, provider, provider, config)
        assert node.fact_score == max(a.score_or_verdict for a in trace.attempts)


class TestPairLogic:
    def test_scripted_valid(self):
        provider = scripted(logic(True))
        verdict, rationale = check_pair_logic(event(stage=1), event(node_id="n0002", stage=2), provider)
        assert verdict == "valid"

    def test_scripted_invalid_with_rationale(self):
        provider = scripted(logic(False, "evacuation after reopening"))
        verdict, rationale = check_pair_logic(
            event("station resumed normal operations"),
            event("staff began evacuating crowd", node_id="n0002", stage=2),
            provider,
        )
        assert verdict == "invalid"
        assert rationale == "evacuation after reopening"

    def test_stage_skip_rejected(self):
        with pytest.raises(InvalidArgumentError):
            check_pair_logic(event(stage=1), event(node_id="n0003", stage=3), scripted())

    def test_regeneration_succeeds(self, rail_index, config):
        provider = scripted(logic(False, "causal gap"), gen("fixed text"), logic(True))
        node, trace = calibrate_pair_logic(
            event(stage=1), event(node_id="n0002", stage=2, parent="n0001"),
            provider, provider, rail_index, config,
        )
        assert node.calib_status is CalibStatus.LOGIC_REGENERATED
        assert node.text == "fixed text"
        assert trace.outcome is TraceOutcome.REGENERATED
        assert len(trace.attempts) == 2

    def test_no_op_when_valid(self, rail_index, config):
        original = event(node_id="n0002", stage=2, parent="n0001")
        provider = scripted(logic(True))
        node, trace = calibrate_pair_logic(event(stage=1), original, provider, provider, rail_index, config)
        assert node.text == original.text
        assert node.calib_status is CalibStatus.LOGIC_OK
        assert trace.outcome is TraceOutcome.ACCEPTED

    def test_exhaustion_keeps_last_candidate(self, rail_index):
        config = DeductionConfig(rng_seed=0, max_logic_regens=1)
        provider = scripted(logic(False, "gap"), gen("attempted fix"), logic(False, "still broken"))
        node, trace = calibrate_pair_logic(
            event(stage=1), event(node_id="n0002", stage=2, parent="n0001"),
            provider, provider, rail_index, config,
        )
        assert node.calib_status is CalibStatus.LOGIC_UNRESOLVED
        assert node.text == "attempted fix"
        assert len(trace.attempts) == 2  # 1 + budget

    def test_budget_bound(self, rail_index):
        config = DeductionConfig(rng_seed=0, max_logic_regens=2)
        provider = scripted(*([logic(False, "no"), gen("again")] * 3), logic(False, "no"))
        calibrate_pair_logic(
            event(stage=1), event(node_id="n0002", stage=2, parent="n0001"),
            provider, provider, rail_index, config,
        )
        assert count_calls(provider, "judge_logic") == 1 + config.max_logic_regens


PATH_TEXTS = [
    "A waste bin on the subway platform caught fire, emitting thick smoke.",
    "Heavy smoke triggers the station alarm and ventilation starts.",
    "Staff evacuate passengers along the marked exits to street level.",
]


class TestWorldLineCalibration:
    def test_cooperative_two_event_path(self, rail_index, config):
        path = make_path(PATH_TEXTS[:2])
        provider = scripted()  # synthetic judges accept everything
        calibrated, traces = calibrate_world_line(path, rail_index, provider, provider, config)
        assert all(n.calib_status is CalibStatus.FULLY_CALIBRATED for n in calibrated)
        kinds = [t.kind for t in traces]
        assert kinds == [TraceKind.FACT, TraceKind.LOGIC]

    def test_fact_only_emits_no_logic_traces(self, rail_index):
        config = DeductionConfig(rng_seed=0, ablation_mode=AblationMode.FACT_ONLY)
        provider = scripted()
        _, traces = calibrate_world_line(make_path(PATH_TEXTS), rail_index, provider, provider, config)
        assert all(t.kind is TraceKind.FACT for t in traces)
        assert count_calls(provider, "judge_logic") == 0

    def test_logic_only_emits_no_fact_traces(self, rail_index):
        config = DeductionConfig(rng_seed=0, ablation_mode=AblationMode.LOGIC_ONLY)
        provider = scripted()
        _, traces = calibrate_world_line(make_path(PATH_TEXTS), rail_index, provider, provider, config)
        assert all(t.kind is TraceKind.LOGIC for t in traces)
        assert count_calls(provider, "judge_fact") == 0

    def test_none_mode_skips_both(self, rail_index):
        config = DeductionConfig(rng_seed=0, ablation_mode=AblationMode.NONE)
        provider = scripted()
        path = make_path(PATH_TEXTS)
        calibrated, traces = calibrate_world_line(path, rail_index, provider, provider, config)
        assert traces == []
        assert provider.records == []
        assert [n.text for n in calibrated] == [n.text for n in path]

    def test_adversarial_fixture_trace_order_and_outcomes(self, rail_index, config):
        # event 2 carries an injected factual error; everything else cooperates
        path = make_path(PATH_TEXTS)
        provider = scripted(
            fact(0.9),                      # fact(1) accepted
            fact(0.4),                      # fact(2) fails...
            gen("Staff evacuate passengers through the marked exits."),
            fact(0.9),                      # ...revision accepted
            logic(True),                    # pair (0,1)
            logic(True),                    # pair (1,2)
        )
        calibrated, traces = calibrate_world_line(path, rail_index, provider, provider, config)
        assert [(t.kind.value, t.outcome.value) for t in traces] == [
            ("fact", "accepted"),
            ("fact", "revised"),
            ("logic", "accepted"),
            ("logic", "accepted"),
        ]
        assert [t.node_id for t in traces] == ["n0001", "n0002", "n0001", "n0002"]
        assert all(n.calib_status is CalibStatus.FULLY_CALIBRATED for n in calibrated)

    def test_acceptance_soundness(self, rail_index, config):
        # no accepted event below threshold, no accepted pair with an invalid verdict
        provider = scripted(fact(0.85), fact(0.95), logic(True), logic(True))
        calibrated, traces = calibrate_world_line(
            make_path(PATH_TEXTS), rail_index, provider, provider, config
        )
        for node in calibrated[1:]:
            if any(s in node.status_history for s in ("fact_ok", "fact_revised")):
                assert node.fact_score >= config.delta_fact
        for trace in traces:
            if trace.kind is TraceKind.LOGIC and trace.outcome in (
                TraceOutcome.ACCEPTED, TraceOutcome.REGENERATED
            ):
                assert trace.attempts[-1].score_or_verdict == "valid"

    def test_idempotent_under_accepting_judge(self, rail_index, config):
        provider = scripted()
        once, _ = calibrate_world_line(make_path(PATH_TEXTS), rail_index, provider, provider, config)
        twice, _ = calibrate_world_line(once, rail_index, provider, provider, config)
        assert [n.text for n in twice] == [n.text for n in once]

    def test_provider_abort_attaches_partial_traces(self, rail_index, config):
        provider_error_script = scripted(
            fact(0.9),          # fact(1) ok
            fact(0.2),          # fact(2) low -> revision needed
            gen(""),            # generator fails with empty completion
        )
        with pytest.raises(ProviderError) as err:
            calibrate_world_line(make_path(PATH_TEXTS), rail_index,
                                 provider_error_script, provider_error_script, config)
        assert len(err.value.partial_traces) == 1  # only fact(1) completed

    def test_fact_pass_precedes_logic_pass(self, rail_index, config):
        provider = scripted()
        calibrate_world_line(make_path(PATH_TEXTS), rail_index, provider, provider, config)
        kinds = [r.capability.value for r in provider.records if r.capability.value.startswith("judge")]
        first_logic = kinds.index("judge_logic")
        assert all(k == "judge_fact" for k in kinds[:first_logic])
        assert all(k == "judge_logic" for k in kinds[first_logic:])

    def test_invalid_path_rejected(self, rail_index, config):
        path = make_path(PATH_TEXTS)
        with pytest.raises(InvalidArgumentError):
            calibrate_world_line(path[1:], rail_index, scripted(), scripted(), config)


class TestIndicators:
    def test_fact_indicators(self, rail_index, config):
        provider = scripted(fact(0.9), fact(0.4), gen("r1"), fact(0.4), gen("r2"), fact(0.4), gen("r3"), fact(0.4))
        calibrated, _ = calibrate_world_line(
            make_path(PATH_TEXTS), rail_index, provider, provider, config
        )
        assert path_fact_indicators(calibrated, config.delta_fact) == [1, 0]

    def test_logic_indicators_from_traces(self, rail_index):
        config = DeductionConfig(rng_seed=0, max_logic_regens=0)
        provider = scripted(fact(0.9), fact(0.9), logic(True), logic(False, "broken"))
        calibrated, traces = calibrate_world_line(
            make_path(PATH_TEXTS), rail_index, provider, provider, config
        )
        assert path_logic_indicators(calibrated, traces) == [1, 0]
