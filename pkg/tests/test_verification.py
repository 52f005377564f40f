from bisimlab.verification import SCALES, corrupted_w1, run_check
from bisimlab.transport import w1_discrete

import numpy as np


def test_quick_scale_checks_pass_and_are_deterministic():
    a = run_check(5, 11, "quick")
    b = run_check(5, 11, "quick")
    assert a.passed and a.as_dict() == b.as_dict()
    assert a.line().startswith("[PASS] 05 ")


def test_fault_is_caught():
    assert not run_check(1, 0, "quick", fault="transport").passed


def test_corrupted_solver_differs():
    p = np.array([0.5, 0.5])
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert corrupted_w1(p, p, cost) != w1_discrete(p, p, cost)


def test_quick_scale_is_smaller():
    assert all(SCALES["quick"][k] <= v for k, v in SCALES["default"].items())
