import numpy as np
import pytest

from segtta import phantom
from segtta.optim import OptimizerProtocol
from segtta.pipeline import MODES, PipelineConfig, run_case, run_cohort
from segtta.volume import Case, Volume, sigmoid, threshold

SHORT = OptimizerProtocol(steps=120)


def quick_cfg(mode="full"):
    return PipelineConfig(mode=mode, protocol=SHORT)


@pytest.fixture(scope="module")
def clean():
    return phantom.generate(phantom.scenario_spec("clean_confident", seed=1))


@pytest.fixture(scope="module")
def island():
    return phantom.generate(phantom.scenario_spec("noise_island", seed=1))


class TestRunCase:
    def test_gate_skip_returns_baseline_bit_identical(self, clean):
        case, gt, _ = clean
        report = run_case(case, quick_cfg("full"))
        assert not report.gate.flagged
        assert report.mask_source == "baseline"
        assert report.compact_trace is None and report.diffuse_trace is None
        assert report.selection is None
        baseline = threshold(sigmoid(case.logits0), 0.5)
        assert np.array_equal(report.final_mask.data, baseline.data)

    def test_flagged_case_records_both_traces_and_selection(self, island):
        case, gt, _ = island
        report = run_case(case, quick_cfg("full"))
        assert report.gate.flagged
        assert report.compact_trace is not None and report.diffuse_trace is not None
        assert report.selection is not None
        assert report.mask_source == report.selection.chosen
        assert report.compact_trace.steps == SHORT.steps

    def test_no_gatekeeper_forces_adaptation(self, clean):
        case, _, _ = clean
        report = run_case(case, quick_cfg("no_gatekeeper"))
        assert not report.gate.flagged          # verdict still recorded
        assert report.mask_source in ("compact", "diffuse")
        assert report.compact_trace is not None

    def test_only_modes_skip_selection(self, island):
        case, _, _ = island
        rep_c = run_case(case, quick_cfg("only_compact"))
        assert rep_c.mask_source == "compact"
        assert rep_c.selection is None and rep_c.diffuse_trace is None
        rep_d = run_case(case, quick_cfg("only_diffuse"))
        assert rep_d.mask_source == "diffuse"
        assert rep_d.selection is None and rep_d.compact_trace is None

    def test_only_modes_still_gate(self, clean):
        case, _, _ = clean
        for mode in ("only_compact", "only_diffuse"):
            report = run_case(case, quick_cfg(mode))
            assert report.mask_source == "baseline"

    def test_no_edge_map_keeps_compact_trace_bit_identical(self, island):
        case, _, _ = island
        full = run_case(case, quick_cfg("full"))
        no_edge = run_case(case, quick_cfg("no_edge_map"))
        assert no_edge.compact_trace == full.compact_trace

    def test_only_compact_matches_full_when_compact_chosen(self, island):
        case, _, _ = island
        full = run_case(case, quick_cfg("full"))
        only_c = run_case(case, quick_cfg("only_compact"))
        if full.mask_source == "compact":
            assert np.array_equal(full.final_mask.data, only_c.final_mask.data)

    def test_timings_recorded(self, clean):
        case, _, _ = clean
        report = run_case(case, quick_cfg())
        assert "gate_s" in report.timings_s and "total_s" in report.timings_s

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            PipelineConfig(mode="everything")
        assert set(MODES) == {
            "full", "no_gatekeeper", "no_edge_map", "only_compact", "only_diffuse"
        }


class TestRunCohort:
    def test_single_case_matches_run_case(self, clean):
        case, _, _ = clean
        solo = run_case(case, quick_cfg())
        batch = run_cohort([case], quick_cfg())
        assert len(batch) == 1
        assert np.array_equal(batch[0].final_mask.data, solo.final_mask.data)

    def test_identical_cases_identical_reports(self, island):
        case, _, _ = island
        reports = run_cohort([case, case, case], quick_cfg())
        masks = [r.final_mask.data for r in reports]
        assert np.array_equal(masks[0], masks[1]) and np.array_equal(masks[1], masks[2])
        assert reports[0].mask_source == reports[2].mask_source

    def test_order_preserved_and_parallel_equals_serial(self, clean, island):
        cases = [clean.case, island.case, clean.case]
        serial = run_cohort(cases, quick_cfg())
        threaded = run_cohort(cases, quick_cfg(), workers=3)
        assert [r.case_id for r in serial] == [c.case_id for c in cases]
        for a, b in zip(serial, threaded):
            assert np.array_equal(a.final_mask.data, b.final_mask.data)

    def test_per_case_errors_recorded_and_cohort_continues(self, clean):
        ok_case = clean.case
        bad = Case(
            image=(Volume(np.zeros((4, 4, 4)), (1, 1, 1)),),
            logits0=Volume(np.full((4, 4, 4), 0.6), (1, 1, 1)),
            case_id="bad",
        )
        # sabotage: a config whose gate thresholds force refinement with an
        # absurd learning rate does not produce NaNs with these losses, so
        # instead drive the error path via a monkeypatched failure
        import segtta.pipeline as pl

        original = pl.run_case

        def exploding(case, cfg):
            if case.case_id == "bad":
                raise pl.optim.NumericalFailure("boom at step 3")
            return original(case, cfg)

        pl_run_case = pl.run_case
        try:
            pl.run_case = exploding
            reports = pl.run_cohort([ok_case, bad], quick_cfg())
        finally:
            pl.run_case = pl_run_case
        assert reports[0].error is None
        assert reports[1].error is not None and "boom" in reports[1].error
        assert reports[1].final_mask is None

    def test_empty_cohort_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            run_cohort([], quick_cfg())
