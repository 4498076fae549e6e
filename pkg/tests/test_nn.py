import json

import numpy as np
import pytest

from relpolicy import nn
from relpolicy.exceptions import (AllMasked, BadSegmentIndex, ChecksumMismatch, NonFiniteGrad,
                                  NotScalar, ShapeMismatch)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=1e-6):
    """Compare backward() of scalar ``build(*tensors)`` with central differences."""
    rng = np.random.default_rng(seed)
    xs = [nn.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    out = build(*xs)
    out.backward()
    for x in xs:
        want = numeric_grad(lambda: build(*[nn.Tensor(y.data) for y in xs]).item(), x.data)
        np.testing.assert_allclose(x.grad, want, rtol=tol, atol=tol)


def weights(shape, seed=1):
    return np.random.default_rng(seed).normal(size=shape)


@pytest.mark.parametrize("name,fn,shapes", [
    ("add", lambda a, b: ((a + b) * weights((3, 4))).sum(), [(3, 4), (1, 4)]),
    ("mul", lambda a, b: (a * b).sum(), [(3, 4), (3, 1)]),
    ("div", lambda a, b: (a / (nn.exp(b) + 1.0)).sum(), [(2, 3), (2, 3)]),
    ("tanh", lambda a: (nn.tanh(a) * weights((5,))).sum(), [(5,)]),
    ("log", lambda a: nn.log(nn.exp(a) + 0.5).sum(), [(4,)]),
    ("square_mean", lambda a: nn.square(a).mean(), [(3, 3)]),
    ("matmul", lambda a, b: (nn.matmul(a, b) * weights((3, 2))).sum(), [(3, 4), (4, 2)]),
    ("transpose", lambda a: (a.T * weights((4, 3))).sum(), [(3, 4)]),
    ("minimum", lambda a, b: nn.minimum(a, b).sum(), [(6,), (6,)]),
    ("clip", lambda a: (nn.clip(a, -0.5, 0.5) * weights((7,))).sum(), [(7,)]),
    ("concat", lambda a, b: (nn.concat([a, b], axis=1) * weights((2, 5))).sum(),
     [(2, 3), (2, 2)]),
    ("getitem", lambda a: (a[np.array([0, 2, 2])] * weights((3, 3))).sum(), [(4, 3)]),
    ("take_rows", lambda a: (nn.take_rows(a, np.array([1, 1, 0])) * weights((3, 2))).sum(),
     [(2, 2)]),
    ("affine", lambda x, w, b: (nn.affine(x, w, b) * weights((5, 2))).sum(),
     [(5, 3), (2, 3), (2,)]),
    ("log_softmax", lambda a: (nn.log_softmax(a, axis=1) * weights((3, 4))).sum(), [(3, 4)]),
    ("softmax", lambda a: (nn.softmax(a) * weights((5,))).sum(), [(5,)]),
])
def test_gradients_match_finite_differences(name, fn, shapes):
    check(fn, *shapes)


def test_segment_ops_gradients():
    seg = np.array([2, 0, 2, 2, 0])
    idx = nn.SegmentIndex(seg, 4)
    w = weights((4, 3))
    check(lambda v: (nn.segment_max(v, idx) * w).sum(), (5, 3))
    check(lambda v: (nn.segment_sum(v, idx) * w).sum(), (5, 3))
    mask = np.array([[1, 0], [1, 1], [1, 1], [0, 1], [1, 1]], bool)
    check(lambda v: (nn.segment_log_softmax(v, idx, mask=mask) * np.where(mask, 1.0, 0.0)
                     * weights((5, 2))).sum(), (5, 2))


def test_gather_affine_equals_concat_then_affine():
    rng = np.random.default_rng(3)
    a = nn.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = nn.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    W = nn.Tensor(rng.normal(size=(5, 5)), requires_grad=True)
    bias = nn.Tensor(rng.normal(size=5), requires_grad=True)
    ra, rb = np.array([0, 3, 3, 1, 2, 0]), np.array([1, 0, 1, 1, 0, 0])
    fused = nn.gather_affine([(a, nn.SegmentIndex(ra, 4)), (b, nn.SegmentIndex(rb, 2))], W, bias)
    plain = nn.affine(nn.concat([nn.take_rows(a, ra), nn.take_rows(b, rb)], axis=1), W, bias)
    np.testing.assert_allclose(fused.data, plain.data, atol=1e-12)
    (fused * weights((6, 5))).sum().backward()
    grads = [t.grad.copy() for t in (a, b, W, bias)]
    for t in (a, b, W, bias):
        t.grad = None
    (plain * weights((6, 5))).sum().backward()
    for g, t in zip(grads, (a, b, W, bias)):
        np.testing.assert_allclose(g, t.grad, atol=1e-12)


def test_segment_max_against_loop_and_tie_rule():
    rng = np.random.default_rng(0)
    seg = rng.integers(0, 6, size=40)
    v = np.round(rng.normal(size=(40, 3)), 1)  # coarse values force ties
    t = nn.Tensor(v, requires_grad=True)
    out = nn.segment_max(t, seg, 7)
    for s in range(7):
        rows = np.flatnonzero(seg == s)
        want = v[rows].max(axis=0) if rows.size else np.zeros(3)
        np.testing.assert_array_equal(out.data[s], want)
    out.sum().backward()
    for s in range(7):
        rows = np.flatnonzero(seg == s)
        for c in range(3):
            if rows.size:
                first = rows[np.argmax(v[rows, c])]
                assert t.grad[first, c] == 1.0
                assert t.grad[rows, c].sum() == 1.0


def test_segment_index_rejects_out_of_range():
    with pytest.raises(BadSegmentIndex):
        nn.SegmentIndex(np.array([0, 3]), 3)


def test_backward_needs_scalar():
    with pytest.raises(NotScalar):
        nn.Tensor(np.ones(3), requires_grad=True).backward()


def test_affine_shape_check():
    with pytest.raises(ShapeMismatch):
        nn.affine(nn.Tensor(np.ones((2, 3))), nn.Tensor(np.ones((4, 2))))


def test_masked_softmax_zeroes_and_all_masked():
    p = nn.softmax(nn.Tensor([1.0, 50.0, 2.0]), mask=np.array([1, 0, 1], bool))
    assert p.data[1] == 0.0
    assert abs(p.data.sum() - 1) < 1e-15
    with pytest.raises(AllMasked):
        nn.softmax(nn.Tensor([1.0, 2.0]), mask=np.zeros(2, bool))


def test_no_grad_builds_no_graph():
    x = nn.Tensor(np.ones(2), requires_grad=True)
    with nn.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad


def make_store(seed=0):
    store = nn.ParamStore()
    rng = np.random.default_rng(seed)
    store.add("a", rng.normal(size=(2, 3)))
    store.add("b", rng.normal(size=4))
    return store.pack()


def test_amsgrad_matches_reference_recursion():
    store = make_store()
    x0 = store.flat.copy()
    m = v = vmax = np.zeros_like(x0)
    x = x0.copy()
    rng = np.random.default_rng(5)
    for k in range(1, 6):
        g = rng.normal(size=x.size) * 0.1
        store.flat_grad[:] = g
        nn.optimizer_step(store, 0.01, max_grad_norm=None)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        vmax = np.maximum(vmax, v)
        x = x - 0.01 / (1 - 0.9 ** k) * m / (np.sqrt(vmax) / np.sqrt(1 - 0.999 ** k) + 1e-8)
        np.testing.assert_allclose(store.flat, x, rtol=0, atol=1e-14)


def test_gradient_clipping_scales_to_max_norm():
    store = make_store()
    store.flat_grad[:] = 3.0
    norm = nn.optimizer_step(store, 0.0, max_grad_norm=1.0)
    assert norm == pytest.approx(3.0 * np.sqrt(store.size))
    np.testing.assert_allclose(np.linalg.norm(store.m / 0.1), 1.0)
    assert not store.flat_grad.any()


def test_non_finite_gradient_is_reported():
    store = make_store()
    store["b"].grad[1] = np.nan
    with pytest.raises(NonFiniteGrad, match="b"):
        nn.optimizer_step(store, 0.1)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    store = make_store()
    store.flat_grad[:] = 0.5
    nn.optimizer_step(store, 0.1)
    nn.save_checkpoint(tmp_path / "ck", store, {"note": "x"})
    manifest, arrays = nn.read_checkpoint(tmp_path / "ck")
    fresh = make_store(seed=9)
    nn.load_into(fresh, manifest, arrays)
    for name in ("flat", "m", "v", "vmax"):
        assert getattr(fresh, name).tobytes() == getattr(store, name).tobytes()
    assert fresh.step == store.step
    assert [p["name"] for p in json.loads((tmp_path / "ck" / "manifest.json").read_text())
            ["params"]] == ["a", "b"]


def test_corrupt_checkpoint_raises(tmp_path):
    store = make_store()
    nn.save_checkpoint(tmp_path / "ck", store)
    blob = bytearray((tmp_path / "ck" / "params.bin").read_bytes())
    blob[3] ^= 1
    (tmp_path / "ck" / "params.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        nn.read_checkpoint(tmp_path / "ck")
