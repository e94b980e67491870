"""Randomised finite-difference suite over every autodiff op and the JiT loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from jitlab import autodiff as ad
from jitlab.autodiff import Tensor, gradcheck
from jitlab.models import ModelSpec, init_model
from jitlab.unlearn import PerturbationBatch, jit_loss

OP_TOLERANCE = 1e-4
JIT_TOLERANCE = 1e-3
MAX_JIT_PARAMS = 100


@dataclass
class CheckResult:
    op: str
    trials: int
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _param(rng, shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.05) -> Tensor:
    """Uniform entries with |x| >= margin, so kinks stay outside the difference stencil."""
    v = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(v, requires_grad=True)


def _shape(rng, rank=2, low=1, high=5):
    return tuple(int(v) for v in rng.integers(low, high, size=rank))


# Each case draws fresh inputs and returns (objective, parameters).
Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _projected(build) -> Case:
    """``build(rng)`` returns (forward, params); the projection weights are drawn once."""
    def case(rng):
        forward, params = build(rng)
        w = Tensor(rng.standard_normal(forward().shape))
        return (lambda: ad.sum(ad.mul(forward(), w)), params)
    return case


def _binary_case(fn) -> Case:
    def build(rng):
        shape = _shape(rng)
        a = _param(rng, shape)
        b = _param(rng, () if rng.random() < 0.25 else shape)
        return (lambda: fn(a, b)), [a, b]
    return _projected(build)


def _elementwise_case(fn, low=-1.0, high=1.0, avoid_zero=False) -> Case:
    def build(rng):
        shape = _shape(rng)
        a = _away_from_zero(rng, shape) if avoid_zero else _param(rng, shape, low, high)
        return (lambda: fn(a)), [a]
    return _projected(build)


def _reduce_case(fn) -> Case:
    def build(rng):
        a = _param(rng, _shape(rng))
        axis = [None, 0, 1][int(rng.integers(3))]
        return (lambda: fn(a, axis)), [a]
    return _projected(build)


def _reshape_case(rng):
    a = _param(rng, _shape(rng))
    return (lambda: ad.reshape(a, (-1,))), [a]


def _index_case(rng):
    a = _param(rng, _shape(rng, 2, 2, 6))
    rows = rng.integers(0, a.shape[0], size=int(rng.integers(1, 6)))
    return (lambda: ad.index(a, rows)), [a]


def _matmul_case(rng):
    m, k, n = _shape(rng, 3)
    a, b = _param(rng, (m, k)), _param(rng, (k, n))
    return (lambda: ad.matmul(a, b)), [a, b]


def _add_bias_case(rng):
    m, n = _shape(rng)
    x, b = _param(rng, (m, n)), _param(rng, (n,))
    return (lambda: ad.add_bias(x, b)), [x, b]


def _linear_case(rng):
    m, k, n = _shape(rng, 3)
    x, w, b = _param(rng, (m, k)), _param(rng, (k, n)), _param(rng, (n,))
    return (lambda: ad.linear(x, w, b)), [x, w, b]


def _conv_case(rng):
    c_in, c_out = _shape(rng, 2, 1, 3)
    k = int(rng.integers(1, 4))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    size = k + stride * int(rng.integers(1, 3)) - 2 * padding
    size = max(size, k)
    while (size + 2 * padding - k) % stride:
        size += 1
    batched = rng.random() < 0.5
    shape = (2, c_in, size, size) if batched else (c_in, size, size)
    x, kern, bias = _param(rng, shape), _param(rng, (c_out, c_in, k, k)), _param(rng, (c_out,))
    return (lambda: ad.conv2d(x, kern, bias, stride=stride, padding=padding)), [x, kern, bias]


def _softmax_case(rng):
    z = _param(rng, _shape(rng, int(rng.integers(1, 3))), -3.0, 3.0)
    return (lambda: ad.softmax(z)), [z]


def _l2_case(rng):
    v = _away_from_zero(rng, _shape(rng))
    axis = [None, -1][int(rng.integers(2))]
    return (lambda: ad.l2_norm(v, axis)), [v]


def _cross_entropy_case(rng):
    m, c = _shape(rng, 2, 1, 5)
    c += 1
    p = _param(rng, (m, c), 0.05, 1.0)
    labels = rng.integers(0, c, size=m)
    if rng.random() < 0.5:
        p = _param(rng, (c,), 0.05, 1.0)
        return (lambda: ad.cross_entropy(p, int(labels[0]))), [p]
    return (lambda: ad.cross_entropy(p, labels)), [p]


OP_CASES: dict[str, Case] = {
    "add": _binary_case(ad.add),
    "sub": _binary_case(ad.sub),
    "mul": _binary_case(ad.mul),
    "relu": _elementwise_case(ad.relu, avoid_zero=True),
    "sigmoid": _elementwise_case(ad.sigmoid, -4.0, 4.0),
    "log": _elementwise_case(ad.log, 0.2, 3.0),
    "exp": _elementwise_case(ad.exp, -2.0, 2.0),
    "sum": _reduce_case(ad.sum),
    "mean": _reduce_case(ad.mean),
    "reshape": _projected(_reshape_case),
    "index": _projected(_index_case),
    "matmul": _projected(_matmul_case),
    "add_bias": _projected(_add_bias_case),
    "linear": _projected(_linear_case),
    "conv2d": _projected(_conv_case),
    "softmax": _projected(_softmax_case),
    "l2_norm": _projected(_l2_case),
    "cross_entropy": _cross_entropy_case,
}

# Architectures for the composite check, each with at most MAX_JIT_PARAMS parameters.
JIT_SPECS = (
    ModelSpec("sigmoid1d", 1, 2, ()),
    ModelSpec("mlp", 2, 3, (8,)),
    ModelSpec("mlp", 3, 2, (5, 4)),
    ModelSpec("small_cnn", 16, 2, (1, 2), image_shape=(1, 4, 4)),
)


def _jit_case(rng: np.random.Generator, trial: int):
    spec = JIT_SPECS[trial % len(JIT_SPECS)]
    model = init_model(ModelSpec(spec.arch, spec.input_dim, spec.n_classes, spec.hidden,
                                 int(rng.integers(2 ** 31)), spec.image_shape))
    assert model.n_parameters() <= MAX_JIT_PARAMS
    x = rng.standard_normal(spec.input_dim)
    batch = PerturbationBatch.from_noise(0.5 * rng.standard_normal((4, spec.input_dim)))
    output = "softmax" if (trial // len(JIT_SPECS)) % 2 == 0 else "logits"
    vectorized = bool(trial % 3 == 0)
    return (lambda: jit_loss(model, x, batch, output, vectorized)), model.parameters()


def check_op(name: str, trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, sorted(OP_CASES).index(name)])
    start = time.perf_counter()
    worst = 0.0
    for _ in range(trials):
        fn, params = OP_CASES[name](rng)
        worst = max(worst, gradcheck(fn, params, step=1e-5))
    return CheckResult(name, trials, worst, OP_TOLERANCE, time.perf_counter() - start)


def check_jit_loss(trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 991])
    start = time.perf_counter()
    worst = 0.0
    for t in range(trials):
        fn, params = _jit_case(rng, t)
        worst = max(worst, gradcheck(fn, params, step=1e-5))
    return CheckResult("jit_loss", trials, worst, JIT_TOLERANCE, time.perf_counter() - start)


def run_gradcheck_suite(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    """Every op at OP_TOLERANCE plus the composite JiT loss at JIT_TOLERANCE."""
    return [check_op(name, trials, seed) for name in OP_CASES] + [check_jit_loss(trials, seed)]
