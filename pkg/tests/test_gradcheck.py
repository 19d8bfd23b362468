import numpy as np

from conddgcn.gradcheck import GradcheckResult, end_to_end_check, layer_checks, tiny_model


def test_every_layer_passes():
    results = layer_checks(seed=1)
    assert {r.name for r in results} >= {"node_step", "cond_step", "edge_step", "routing", "temporal_s1",
                                         "temporal_s2", "upsample", "fc_head"}
    for r in results:
        assert r.passed, r.line()


def test_end_to_end_tiny_model():
    r = end_to_end_check(seed=2, coords_per_group=3)
    assert r.passed and r.error <= 1e-3


def test_tiny_model_dimensions():
    m = tiny_model()
    assert m.skeleton.num_joints == 5 and m.cfg.frames == 8
    assert all(b.conditional for b in m.blocks()[1:])


def test_result_line_and_failure_detection():
    assert GradcheckResult("x", 2e-4, 1e-4, 0.1).line().startswith("FAIL")
    assert GradcheckResult("x", 2e-5, 1e-4, 0.1).line().startswith("PASS")
    assert not GradcheckResult("x", float("nan"), 1e-4, 0.0).passed


def test_checker_catches_a_wrong_gradient():
    from conddgcn import diffcore as dc
    from conddgcn.diffcore import Tensor, _emit

    def bad_square(x):
        return _emit(x.data ** 2, [x], lambda g: [g * x.data])  # missing factor 2

    x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
    err = dc.finite_diff_check_tensors(lambda: dc.sum(bad_square(x)), [x], 1e-6)
    assert err > 0.1
