import numpy as np
import pytest

from scgnet import gradcheck as gc
from scgnet import tensor as T
from scgnet.tensor import DIFFERENTIABLE_OPS, Tensor

COMPOSITES = {
    "batchnorm", "pool_to_nodes", "encode", "reparameterize", "kl_loss", "decode_adjacency",
    "adaptive_gamma", "dl_loss", "enhance_and_normalize", "residual_prediction", "scg_forward",
    "normalize_adjacency", "gcn_layer", "gcn_stack", "backbone", "dice_loss", "total_loss", "model",
}


def test_registry_covers_every_differentiable_op():
    assert DIFFERENTIABLE_OPS <= set(gc.SCOPES)
    assert set(gc.SCOPES) == DIFFERENTIABLE_OPS | COMPOSITES


def test_tolerances():
    assert all(gc.SCOPES[op].tolerance <= 1e-6 for op in DIFFERENTIABLE_OPS)
    assert gc.SCOPES["kl_loss"].tolerance <= 1e-6
    assert gc.SCOPES["enhance_and_normalize"].tolerance <= 1e-5
    assert gc.SCOPES["model"].tolerance <= 1e-3


@pytest.mark.parametrize("scope", [s for s in gc.SCOPES if s not in ("model", "backbone")])
def test_scope_passes(scope):
    res = gc.grad_check(scope)
    assert res.passed, (scope, res.errors)
    assert res.errors


def test_relative_error_definition():
    assert gc.relative_error([0.0], [1e-7]) == pytest.approx(1e-7)
    assert gc.relative_error([100.0], [101.0]) == pytest.approx(1 / 101)


def test_unknown_scope():
    with pytest.raises(gc.UnknownScopeError):
        gc.grad_check("nonsense")


def test_a_wrong_backward_is_caught():
    def bad_square(x):
        return T._make(x.data ** 2, (x,), lambda g: (g * x.data,), "square")  # missing factor 2

    x = Tensor(np.random.default_rng(0).uniform(-2, 2, size=5), requires_grad=True)
    errors = gc.check_fn(lambda: T.sum_(bad_square(x)), {"x": x})
    assert errors["x"] > 0.1


def test_report_format():
    res = gc.run_all(["add", "kl_loss"], trials=1)
    text = gc.format_report(res)
    assert text.splitlines()[0].startswith("PASS add")
    assert "kl_loss" in text
