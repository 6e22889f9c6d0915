import json

import numpy as np
import pytest

from adfnet import autodiff as ad
from adfnet import gauss
from adfnet.selfcheck import (
    FAULTS,
    CheckResult,
    check_closed_form,
    check_mc_relu,
    check_penalty_second_order,
    inject_fault,
    random_problem,
    relative_error,
    run_selfcheck,
)


class TestHelpers:
    def test_relative_error(self):
        assert relative_error([np.array([1.0, 2.0])], [np.array([1.0, 2.0])]) == 0.0
        assert relative_error([np.array([3.0])], [np.array([2.0])]) == pytest.approx(0.5)

    def test_random_problem_avoids_floor(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            net, params, X, y = random_problem(rng, 4, 3)
            assert X.shape == (3, net.widths[0]) and y.shape == (3,)
            assert max(net.widths[:-1]) <= 4

    def test_result_is_plain_json(self):
        result = CheckResult("x", np.bool_(True), np.float64(1e-3), 1e-2)
        assert json.loads(json.dumps(result.__dict__))["passed"] is True


class TestFaults:
    def test_patch_is_undone(self):
        kernel, vjp = gauss._kernel, ad.norm_pdf.vjp
        for fault in FAULTS:
            with inject_fault(fault):
                pass
        assert gauss._kernel is kernel and ad.norm_pdf.vjp is vjp

    def test_unknown_fault(self):
        with pytest.raises(ValueError):
            with inject_fault("nan-everywhere"):
                pass

    def test_variance_sign_fault_visible_to_monte_carlo(self):
        with inject_fault("relu-var-sign"):
            assert not check_mc_relu().passed
            # the flipped term carries a factor mu, so the N(0, 1) fixture cannot see it
            assert check_closed_form().passed
        assert check_mc_relu().passed

    def test_density_fault_only_in_second_order(self):
        with inject_fault("pdf-second-derivative"):
            assert check_mc_relu().passed
            assert not check_penalty_second_order().passed


@pytest.fixture(scope="module")
def reports():
    return {fault: run_selfcheck(fault) for fault in (None, *FAULTS)}


class TestRun:
    def test_clean(self, reports):
        assert reports[None].passed, reports[None].failures

    def test_each_fault_fails(self, reports):
        expected = {
            "relu-var-sign": {"mc-relu-moments", "mc-dense-leaky-stack"},
            "leaky-grad": {"loss-gradient-fd", "penalty-second-order-fd"},
            "pdf-second-derivative": {"penalty-second-order-fd"},
        }
        for fault, names in expected.items():
            assert names <= set(reports[fault].failures), (fault, reports[fault].failures)

    def test_report_records_tolerances(self, reports):
        doc = reports[None].to_dict()
        assert len(doc["checks"]) == 7
        for check in doc["checks"]:
            assert check["tolerance"] > 0 and check["observed"] >= 0
