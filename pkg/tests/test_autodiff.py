import numpy as np
import pytest

from dcgcl import autodiff as ad
from dcgcl.autodiff import AdamState, DomainError, NonDeterministicClosure, ShapeError


def test_row_softmax_uniform():
    out = ad.row_softmax(ad.const([[0.0, 0.0]]))
    assert out.data.tolist() == [[0.5, 0.5]]


def test_relu_values():
    assert ad.relu(ad.const([[-1.0, 0.0, 2.0]])).data.tolist() == [[0.0, 0.0, 2.0]]


def test_matmul_of_ones():
    out = ad.const(np.ones((2, 3))) @ ad.const(np.ones((3, 1)))
    assert out.shape == (2, 1)
    assert np.all(out.data == 3.0)


def test_product_rule():
    x, y = ad.param(2.0), ad.param(3.0)
    (x * y).backward()
    assert x.grad.item() == 3.0 and y.grad.item() == 2.0


def test_relu_gradient_is_zero_at_and_below_zero():
    x = ad.param([[-1.0, 2.0, 0.0]])
    ad.sum(ad.relu(x)).backward()
    assert x.grad.tolist() == [[0.0, 1.0, 0.0]]


def test_softmax_first_entry_gradient():
    x = ad.param([[0.0, 0.0]])
    first = ad.slice_cols(ad.row_softmax(x), 0, 1)
    first.backward()
    np.testing.assert_allclose(x.grad, [[0.25, -0.25]], atol=1e-12)
    # and the finite-difference oracle agrees
    h = 1e-5
    fd = [(np.exp(h) / (np.exp(h) + 1) - np.exp(-h) / (np.exp(-h) + 1)) / (2 * h),
          (1 / (1 + np.exp(h)) - 1 / (1 + np.exp(-h))) / (2 * h)]
    np.testing.assert_allclose(x.grad[0], fd, atol=1e-9)


def test_masked_softmax_zeroes_masked_entries_exactly():
    x = ad.param([[1.0, 2.0, 3.0]])
    out = ad.row_softmax(x, np.array([[True, False, True]]))
    assert out.data[0, 1] == 0.0
    assert out.data[0].sum() == pytest.approx(1.0)
    with pytest.raises(DomainError):
        ad.row_softmax(x, np.array([[False, False, False]]))


def test_non_scalar_loss_rejected():
    with pytest.raises(ShapeError):
        ad.param(np.ones((2, 2))).backward()


def test_shape_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.add(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 2))))


def test_row_vector_broadcast_only():
    a, b = ad.param(np.ones((3, 2))), ad.param([[1.0, 2.0]])
    ad.sum(a + b).backward()
    assert b.grad.tolist() == [[3.0, 3.0]]
    with pytest.raises(ShapeError):
        ad.add(ad.const(np.ones((3, 2))), ad.const(np.ones((3, 1))))


@pytest.mark.parametrize("fn, value", [
    (ad.log, 0.0), (ad.log, -1.0), (ad.sqrt, -1.0),
])
def test_domain_errors(fn, value):
    with pytest.raises(DomainError):
        fn(ad.const([[value]]))


def test_division_by_zero_rejected():
    with pytest.raises(DomainError):
        ad.div(ad.const([[1.0]]), ad.const([[0.0]]))


def test_gradients_accumulate_over_branches():
    x = ad.param([[1.5]])
    y = x * x + x * 3.0 + x
    y.backward()
    assert x.grad.item() == pytest.approx(2 * 1.5 + 3.0 + 1.0)


def test_constant_never_gets_gradient():
    c = ad.const([[2.0]])
    x = ad.param([[1.0]])
    (c * x).backward()
    assert c.grad is None


def test_gather_and_scatter_are_adjoint():
    rng = np.random.default_rng(0)
    a = ad.param(rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 3, 0])
    g = ad.gather_rows(a, idx)
    w = rng.normal(size=g.shape)
    ad.sum(g * ad.const(w)).backward()
    expect = np.zeros((4, 3))
    np.add.at(expect, idx, w)
    np.testing.assert_allclose(a.grad, expect)
    s = ad.scatter_add_rows(ad.const(w), idx, 4)
    np.testing.assert_allclose(s.data, expect)


def test_maximum_with_constant():
    x = ad.param([[-1.0, 0.5, 2.0]])
    out = ad.maximum(x, 0.5)
    assert out.data.tolist() == [[0.5, 0.5, 2.0]]
    ad.sum(out).backward()
    assert x.grad[0, 0] == 0.0 and x.grad[0, 2] == 1.0


def _all_primitives_loss(p):
    a, b, w = p["a"], p["b"], p["w"]
    h = ad.concat([a @ w, ad.relu(a)])
    h = ad.row_softmax(h) + ad.exp(ad.scale(ad.concat([a @ w, a]), 0.1))
    n = ad.row_norm(h)
    m = ad.row_mean(ad.transpose(h) @ h)
    q = ad.div(ad.row_sum(h * h), n) + ad.log(n) + ad.sqrt(n)
    return ad.mean(q) + ad.sum(m) + ad.sum(ad.maximum(b, 0.0) * b) - ad.sum(b)


def test_finite_differences_over_primitive_mix():
    rng = np.random.default_rng(5)
    p = {"a": ad.param(rng.normal(size=(4, 3))), "b": ad.param(rng.normal(size=(1, 3))),
         "w": ad.param(rng.normal(size=(3, 2)))}
    report = ad.finite_diff_check(lambda: _all_primitives_loss(p), p, num_coords=50)
    assert report.passed, report.summary()


def test_gradcheck_quadratic():
    theta = ad.param([[3.0]])
    report = ad.finite_diff_check(lambda: theta * theta, {"theta": theta}, step=1e-5)
    assert report.max_rel_error < 1e-6


def test_gradcheck_rejects_unfrozen_randomness():
    theta = ad.param([[1.0]])
    gen = np.random.default_rng(0)
    with pytest.raises(NonDeterministicClosure):
        ad.finite_diff_check(lambda: theta * float(gen.normal()), {"theta": theta})


def test_gradcheck_does_not_disturb_parameters():
    rng = np.random.default_rng(1)
    p = {"w": ad.param(rng.normal(size=(3, 3)))}
    before = p["w"].data.copy()
    ad.finite_diff_check(lambda: ad.sum(p["w"] @ p["w"]), p)
    assert np.array_equal(before, p["w"].data)


def test_adam_first_step():
    params = {"w": np.array([[0.5]])}
    state = AdamState(learning_rate=1e-3)
    ad.adam_step(params, {"w": np.array([[1.0]])}, state)
    assert params["w"][0, 0] == pytest.approx(0.5 - 1e-3, abs=1e-9)
    assert state.step_count == 1


def test_adam_zero_gradient():
    params = {"w": np.array([[0.5, -1.0]])}
    state = AdamState()
    ad.adam_step(params, {"w": np.zeros((1, 2))}, state)
    assert params["w"].tolist() == [[0.5, -1.0]]
    assert state.step_count == 1


def test_adam_two_steps_hand_iterated():
    params = {"w": np.zeros((1, 1))}
    state = AdamState(learning_rate=1e-3)
    theta = 0.0
    m = v = 0.0
    for t in (1, 2):
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        theta -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        ad.adam_step(params, {"w": np.ones((1, 1))}, state)
    assert params["w"][0, 0] == pytest.approx(theta, abs=1e-15)
    assert params["w"][0, 0] == pytest.approx(-2e-3, abs=1e-6)


def test_adam_rejects_non_finite_gradient_with_name():
    with pytest.raises(FloatingPointError, match="enc.W"):
        ad.adam_step({"enc.W": np.zeros((1, 1))}, {"enc.W": np.array([[np.nan]])}, AdamState())


def test_forward_and_backward_bitwise_deterministic():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(5, 4))

    def run():
        x = ad.param(data)
        y = ad.sum(ad.row_softmax(x @ ad.transpose(x)))
        y.backward()
        return y.data.copy(), x.grad.copy()

    (y1, g1), (y2, g2) = run(), run()
    assert np.array_equal(y1, y2) and np.array_equal(g1, g2)
