import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sma.numerics import (
    AdamState,
    EmptySupportError,
    NonDeterministicForward,
    Tape,
    Tensor,
    adam_step,
    backward,
    bce_with_logits,
    broadcast_to,
    check_gradients,
    concat,
    gelu,
    layer_norm,
    precision,
    relu,
    softmax,
)
from sma.numerics import container


def central_diff(f, x, eps=1e-6):
    """Independent oracle: central differences of a numpy scalar function."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


class TestSoftmax:
    def test_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0])).data
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)

    def test_ln2(self):
        out = softmax(Tensor([0.0, math.log(2.0)])).data
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-15)

    def test_single_support(self):
        out = softmax(Tensor([5.0, 9.0, 2.0]), mask=[True, False, False]).data
        assert out.tolist() == [1.0, 0.0, 0.0]

    def test_all_masked_raises(self):
        with pytest.raises(EmptySupportError, match="empty attention support"):
            softmax(Tensor([1.0, 2.0]), mask=[False, False])

    def test_allow_empty_rows_are_zero(self):
        x = Tensor(np.ones((2, 3)))
        out = softmax(x, mask=np.array([[True, True, False], [False, False, False]]), allow_empty=True).data
        assert out[1].tolist() == [0.0, 0.0, 0.0]
        assert out[0, 2] == 0.0

    def test_huge_logits_stable(self):
        out = softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=12),
        st.floats(-100, 100),
        st.integers(0, 2**31 - 1),
    )
    def test_sum_shift_and_mask(self, xs, shift, seed):
        x = np.array(xs)
        rng = np.random.default_rng(seed)
        mask = rng.random(x.size) < 0.6
        mask[rng.integers(x.size)] = True
        y = softmax(Tensor(x), mask=mask).data
        assert abs(y.sum() - 1.0) < 1e-12
        assert np.all(y[~mask] == 0.0)
        assert np.all(y >= 0)
        y2 = softmax(Tensor(x + shift), mask=mask).data
        np.testing.assert_allclose(y, y2, atol=1e-12)

    def test_float32_normalization(self):
        rng = np.random.default_rng(3)
        with precision("float32"):
            x = Tensor(rng.normal(size=(50, 17)) * 5)
            assert x.data.dtype == np.float32
            y = softmax(x).data
        np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-5)


class TestLayerNorm:
    def test_constant_vector(self):
        out = layer_norm(Tensor([3.0, 3.0, 3.0, 3.0]), np.ones(4), np.zeros(4)).data
        assert np.all(np.abs(out) < 1e-2)

    def test_plus_minus_one(self):
        out = layer_norm(Tensor([1.0, -1.0]), np.ones(2), np.zeros(2), eps=0.0).data
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-15)

    def test_zero_gain(self):
        b = np.array([0.5, -2.0, 7.0])
        out = layer_norm(Tensor([4.0, 1.0, -9.0]), np.zeros(3), b).data
        np.testing.assert_array_equal(out, b)

    def test_population_variance(self):
        v = np.array([1.0, 2.0, 4.0, 9.0])
        out = layer_norm(Tensor(v), np.ones(4), np.zeros(4), eps=0.0).data
        expected = (v - v.mean()) / np.sqrt(((v - v.mean()) ** 2).sum() / 4)
        np.testing.assert_allclose(out, expected, atol=1e-14)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = x * x
        backward(tape, y)
        assert x.grad == pytest.approx(6.0)

    def test_softmax_weighted_sum_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=7)
        c = rng.normal(size=7)
        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            y = (softmax(x) * c).sum()
        backward(tape, y)

        def f(v):
            e = np.exp(v - v.max())
            return float((e / e.sum() * c).sum())

        numeric = central_diff(f, x0.copy(), eps=1e-6)
        rel = np.abs(x.grad - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() < 1e-6

    def test_unreachable_leaf(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        p = Tensor([5.0], requires_grad=True)
        with Tape() as tape:
            y = (x * x).sum()
            _ = p * 3.0
        backward(tape, y)
        assert p.grad.tolist() == [0.0]

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_fan_out_sums(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            y = x * 3.0 + x * x + x
        backward(tape, y)
        assert x.grad == pytest.approx(3.0 + 4.0 + 1.0)

    def test_tape_topological_and_replay(self):
        rng = np.random.default_rng(1)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)))
        with Tape() as tape:
            h = layer_norm(relu(x @ w), np.ones(3), np.zeros(3))
            loss = softmax(h).sum()
        seen = {id(w), id(x)}
        for node in tape.nodes:
            for t in node.inputs:
                assert not t._tracked or id(t) in seen
            seen.add(id(node.output))
        assert tape.replay()

    def test_no_tape_no_recording(self):
        w = Tensor(np.ones(3), requires_grad=True)
        y = (w * 2.0).sum()
        assert not y._tracked


def _kernel_cases():
    """(name, builder) where builder(rng) -> (list of input arrays, fn(tensors) -> scalar Tensor)."""

    def lin(rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], lambda a, b: ((a @ b) * (a @ b)).sum()

    def bmm(rng):
        return [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))], lambda a, b: (a @ b).sum() + ((a @ b) * (a @ b)).mean()

    def soft(rng):
        mask = rng.random((3, 5)) < 0.7
        mask[:, 0] = True
        c = rng.normal(size=(3, 5))
        return [rng.normal(size=(3, 5))], lambda a: (softmax(a, mask=mask) * c).sum()

    def ln(rng):
        c = rng.normal(size=(4, 6))
        return [rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)], lambda x, g, b: (layer_norm(x, g, b) * c).sum()

    def gel(rng):
        c = rng.normal(size=9)
        return [rng.normal(size=9)], lambda x: (gelu(x) * c).sum()

    def bce(rng):
        y = (rng.random((3, 4)) < 0.5).astype(float)
        m = rng.random((3, 4)) < 0.8
        m[0, 0] = True
        return [rng.normal(size=(3, 4)) * 3], lambda z: bce_with_logits(z, y, m)

    def shapes(rng):
        idx = (np.array([0, 2, 2]), np.array([1, 0, 1]))

        def f(a, b):
            cat = concat([a, broadcast_to(b, (3, 2))], axis=-1)
            t = cat.transpose().reshape(-1, 3)
            return (t[idx] * t[idx]).sum() + (a / (b * b + 1.0)).sum()

        return [rng.normal(size=(3, 2)), rng.normal(size=(1, 2))], f

    return [lin, bmm, soft, ln, gel, bce, shapes]


@pytest.mark.parametrize("case", _kernel_cases(), ids=lambda c: c.__name__)
def test_kernel_gradients_at_20_random_points(case):
    rng = np.random.default_rng(7)
    for _ in range(20):
        arrays, fn = case(rng)
        params = {f"x{i}": Tensor(a, requires_grad=True) for i, a in enumerate(arrays)}
        ordered = list(params.values())
        report = check_gradients(lambda: fn(*ordered), params, eps=1e-5, tol=1e-4)
        assert report.passed, report.lines()


class TestCheckGradients:
    def test_linear_layer_exact(self):
        rng = np.random.default_rng(2)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        x = rng.normal(size=4)
        c = rng.normal(size=3)
        report = check_gradients(lambda: ((w @ x + b) * c).sum(), {"w": w, "b": b})
        assert report.max_error < 1e-7

    def test_corrupted_gradient_is_flagged(self):
        w = Tensor(np.array([0.3, -1.2]), requires_grad=True)
        report = check_gradients(lambda: (w * w).sum(), {"w": w}, grad_hook=lambda n, g: g * 2)
        assert report.failed == ["w"]

    def test_nondeterministic_forward(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        rng = np.random.default_rng(0)
        with pytest.raises(NonDeterministicForward):
            check_gradients(lambda: (w * rng.normal()).sum(), {"w": w})


class TestAdam:
    def test_zero_grad_no_update(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
        assert p["w"].tolist() == [1.0, -2.0]

    def test_first_step_sign(self):
        p = {"w": np.array([1.0, -2.0, 0.5])}
        g = np.array([0.3, -4.0, 1e-3])
        state = AdamState(lr=0.01)
        adam_step(p, {"w": g}, state)
        delta = p["w"] - np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(delta, -0.01 * np.sign(g), rtol=1e-4)
        assert state.t == 1

    def test_deterministic(self):
        def run():
            p = {"w": np.array([1.0, 2.0])}
            s = AdamState(lr=0.05)
            for g in ([0.1, -0.2], [0.3, 0.4]):
                adam_step(p, {"w": np.array(g)}, s)
            return p["w"], s

        (a, sa), (b, sb) = run(), run()
        assert np.array_equal(a, b)
        assert np.array_equal(sa.m["w"], sb.m["w"]) and sa.t == sb.t == 2

    def test_update_bounded_by_lr(self):
        rng = np.random.default_rng(5)
        p = {"w": rng.normal(size=20)}
        state = AdamState(lr=1e-3)
        for _ in range(50):
            before = p["w"].copy()
            adam_step(p, {"w": rng.normal(size=20) * 10}, state)
            assert np.abs(p["w"] - before).max() <= 1e-3 * 1.05

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


class TestContainer:
    def test_round_trip_and_stable_bytes(self, tmp_path):
        entries = {"a": np.arange(6, dtype=np.float64).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64), "c": np.ones(3, np.float32)}
        h1 = container.save(tmp_path / "x.bin", entries, {"step": 3})
        loaded, meta = container.load(tmp_path / "x.bin")
        assert meta == {"step": 3}
        for k, v in entries.items():
            assert loaded[k].dtype == v.dtype and np.array_equal(loaded[k], v)
        h2 = container.save(tmp_path / "y.bin", loaded, meta)
        assert h1 == h2

    def test_little_endian_layout(self):
        blob = container.to_bytes({"x": np.array([1.5])})
        assert blob[:8] == b"SMATENS\0"
        assert blob[-8:] == np.array([1.5], dtype="<f8").tobytes()

    def test_bad_magic(self):
        with pytest.raises(container.ContainerError):
            container.from_bytes(b"nope" * 10)
