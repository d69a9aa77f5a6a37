"""Shared fixtures and the per-primitive gradient-case registry.

The registry is consumed both by the per-primitive suite and by the
acceptance module, so the list of what counts as "every differentiable
primitive" lives in exactly one place.
"""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from sst import tensor as T

settings.register_profile("det", derandomize=True, max_examples=25, deadline=None)
settings.load_profile("det")


def _rand(rng, *shape):
    return T.parameter(rng.standard_normal(shape))


def primitive_gradient_cases():
    """(name, builder) pairs; builder(rng) -> (loss_fn, wrt_tensors).

    Shapes stay small (<= 4x8x8) so central differences are cheap.
    """
    cases = []

    def case(name):
        def deco(fn):
            cases.append((name, fn))
            return fn
        return deco

    @case("add")
    def _(rng):
        a, b = _rand(rng, 3, 5), _rand(rng, 5)  # broadcast on purpose
        return lambda: T.add(a, b).mean(), [a, b]

    @case("sub")
    def _(rng):
        a, b = _rand(rng, 4, 1, 5), _rand(rng, 3, 5)
        return lambda: T.sub(a, b).mean(), [a, b]

    @case("mul")
    def _(rng):
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
        return lambda: T.mul(a, b).sum(), [a, b]

    @case("div")
    def _(rng):
        a = _rand(rng, 3, 4)
        b = T.parameter(rng.uniform(0.5, 2.0, (3, 4)))
        return lambda: T.div(a, b).mean(), [a, b]

    @case("neg")
    def _(rng):
        a = _rand(rng, 2, 3)
        return lambda: T.mul(T.neg(a), a).sum(), [a]

    @case("matmul_2d")
    def _(rng):
        a, b = _rand(rng, 4, 6), _rand(rng, 6, 3)
        return lambda: T.matmul(a, b).mean(), [a, b]

    @case("matmul_batched")
    def _(rng):
        a, b = _rand(rng, 3, 4, 5), _rand(rng, 3, 5, 2)
        return lambda: T.matmul(a, b).mean(), [a, b]

    @case("matmul_broadcast_batch")
    def _(rng):
        a, b = _rand(rng, 2, 1, 4, 5), _rand(rng, 3, 5, 2)
        return lambda: T.matmul(a, b).mean(), [a, b]

    @case("matmul_vec_right")
    def _(rng):
        a, b = _rand(rng, 4, 6), _rand(rng, 6)
        return lambda: T.matmul(a, b).mean(), [a, b]

    @case("matmul_vec_left")
    def _(rng):
        a, b = _rand(rng, 6), _rand(rng, 6, 3)
        return lambda: T.matmul(a, b).mean(), [a, b]

    @case("matmul_dot")
    def _(rng):
        a, b = _rand(rng, 6), _rand(rng, 6)
        return lambda: T.matmul(a, b), [a, b]

    @case("transpose")
    def _(rng):
        a = _rand(rng, 2, 3, 4)
        w = _rand(rng, 3, 3)
        return lambda: T.matmul(T.transpose(a), w).sum(), [a, w]

    @case("transpose_axes")
    def _(rng):
        a = _rand(rng, 2, 3, 4)
        return lambda: T.mul(T.transpose(a, (1, 0, 2)),
                             T.transpose(a, (1, 0, 2))).mean(), [a]

    @case("exp")
    def _(rng):
        a = T.parameter(rng.uniform(-2, 2, (3, 4)))
        return lambda: T.exp(a).mean(), [a]

    @case("tanh")
    def _(rng):
        a = _rand(rng, 3, 4)
        return lambda: T.tanh(a).sum(), [a]

    @case("sigmoid")
    def _(rng):
        a = _rand(rng, 3, 4)
        return lambda: T.sigmoid(a).sum(), [a]

    @case("softplus")
    def _(rng):
        a = _rand(rng, 3, 4)
        return lambda: T.softplus(a).sum(), [a]

    @case("silu")
    def _(rng):
        a = _rand(rng, 3, 4)
        return lambda: T.silu(a).sum(), [a]

    @case("relu")
    def _(rng):
        a = _rand(rng, 3, 4)
        # keep entries away from the kink so central differences are valid
        a.data[np.abs(a.data) < 1e-3] += 0.1
        return lambda: T.relu(a).sum(), [a]

    @case("banded_attention")
    def _(rng):
        from sst.attention import banded_attention
        q = _rand(rng, 1, 2, 5, 3)
        k = _rand(rng, 1, 2, 5, 3)
        v = _rand(rng, 1, 2, 5, 3)
        w = _rand(rng, 1, 2, 5, 3)
        return (lambda: T.mul(banded_attention(q, k, v, 3), w).sum(),
                [q, k, v])

    @case("selective_scan_core")
    def _(rng):
        from sst.ssm import scan_core
        # step sizes and decays sit far from the Taylor-limit threshold so
        # central differences never straddle the branch
        delta = T.parameter(rng.uniform(0.05, 0.5, (2, 5, 3)))
        a = T.parameter(rng.uniform(-2.0, -0.1, (3, 4)))
        b, c = _rand(rng, 2, 5, 4), _rand(rng, 2, 5, 4)
        u = _rand(rng, 2, 5, 3)
        w = _rand(rng, 2, 5, 3)
        return (lambda: T.mul(scan_core(delta, a, b, c, u), w).sum(),
                [delta, a, b, c, u])

    @case("softmax")
    def _(rng):
        a = _rand(rng, 3, 6)
        w = _rand(rng, 3, 6)
        return lambda: T.mul(T.softmax(a), w).sum(), [a, w]

    @case("layer_norm")
    def _(rng):
        a = _rand(rng, 3, 4, 6)
        gamma = T.parameter(rng.uniform(0.5, 1.5, 6))
        beta = _rand(rng, 6)
        w = _rand(rng, 6)
        return lambda: T.mul(T.layer_norm(a, gamma, beta), w).mean(), [a, gamma, beta]

    @case("conv1d_causal")
    def _(rng):
        x = _rand(rng, 2, 7, 3)
        k = _rand(rng, 3, 4)
        return lambda: T.conv1d_causal(x, k).mean(), [x, k]

    @case("reshape")
    def _(rng):
        a = _rand(rng, 3, 8)
        w = _rand(rng, 4, 6)
        return lambda: T.mul(T.reshape(a, (4, 6)), w).sum(), [a, w]

    @case("concat")
    def _(rng):
        a, b, c = _rand(rng, 2, 3), _rand(rng, 4, 3), _rand(rng, 1, 3)
        w = _rand(rng, 7, 3)
        return lambda: T.mul(T.concat([a, b, c], axis=0), w).sum(), [a, b, c]

    @case("slice")
    def _(rng):
        a = _rand(rng, 4, 8)
        return lambda: T.mul(T.slice_axis(a, 1, 2, 6),
                             T.slice_axis(a, 1, 1, 5)).sum(), [a]

    @case("masked_fill_softmax")
    def _(rng):
        a = _rand(rng, 4, 6)
        mask = rng.random((4, 6)) < 0.3
        mask[:, 0] = False  # keep at least one logit per row
        w = _rand(rng, 4, 6)
        return lambda: T.mul(T.softmax(T.masked_fill(a, mask, -np.inf)), w).sum(), [a, w]

    @case("where")
    def _(rng):
        a, b = _rand(rng, 3, 5), _rand(rng, 3, 5)
        cond = rng.random((3, 5)) < 0.5
        return lambda: T.where(cond, a, b).mean(), [a, b]

    @case("sum_axis")
    def _(rng):
        a = _rand(rng, 3, 4, 5)
        return lambda: T.mul(T.sum_reduce(a, axis=1), T.sum_reduce(a, axis=1)).mean(), [a]

    @case("sum_all")
    def _(rng):
        a = _rand(rng, 3, 4)
        return lambda: T.mul(a.sum(), a.sum()), [a]

    @case("mean_axis_keepdims")
    def _(rng):
        a = _rand(rng, 3, 4, 5)
        w = _rand(rng, 3, 4, 5)
        return lambda: T.mul(T.sub(a, T.mean_reduce(a, axis=-1, keepdims=True)),
                             w).mean(), [a]

    @case("mean_all")
    def _(rng):
        a = _rand(rng, 4, 8, 8)
        return lambda: T.mul(a.mean(), a.mean()), [a]

    return cases


PRIMITIVE_GRAD_CASES = primitive_gradient_cases()


def sampled_gradient_check(f, params, rng, samples=40, h=1e-5):
    """Tape gradients vs per-coordinate central differences on a sample.

    Full finite differences over a whole model is quadratic-ish in
    parameter count; sampling coordinates keeps the end-to-end check
    affordable while still touching every parameter group over seeds.
    Error metric per coordinate: |ad - fd| / (|fd| + 1e-4), i.e. 1e-4
    relative with a 1e-8 absolute floor.
    """
    params = list(params)
    T.zero_grads(params)
    with T.record() as tape:
        loss = f()
    T.backward(tape, loss)
    worst = 0.0
    for _ in range(samples):
        p = params[int(rng.integers(len(params)))]
        idx = np.unravel_index(int(rng.integers(p.data.size)), p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        hi = float(f().data)
        p.data[idx] = orig - h
        lo = float(f().data)
        p.data[idx] = orig
        fd = (hi - lo) / (2.0 * h)
        ad = float(p.grad[idx]) if p.grad is not None else 0.0
        worst = max(worst, abs(ad - fd) / (abs(fd) + 1e-4))
    return worst


@pytest.fixture(autouse=True)
def _reset_tensor_modes():
    """Keep global switches from leaking between tests."""
    yield
    T.set_checked(True)
    T.set_default_dtype(np.float64)
    T.meter.set_cap(None)
