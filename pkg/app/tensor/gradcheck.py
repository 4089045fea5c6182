"""
Finite-difference verification of backward rules

Each case builds random inputs and a scalar function of them; the analytic
gradient from backward() is compared with central differences in float64.
The error reported per case is the worst element-wise relative error
|a - n| / max(|a|, |n|, ABS_FLOOR) over elements, inputs and trials.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from loguru import logger

from app.tensor import ops
from app.tensor.tensor import Tensor, no_grad

STEP = 1e-5
TOLERANCE = 1e-4
# gradients smaller than this are held to an absolute error of TOLERANCE * ABS_FLOOR
ABS_FLOOR = 1e-2

CaseBuilder = Callable[[np.random.Generator], Tuple[List[Tensor], Callable[[Sequence[Tensor]], Tensor]]]


@dataclass(frozen=True)
class GradCase:
    name: str
    build: CaseBuilder


def _leaf(array: np.ndarray) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)


def _away_from(rng: np.random.Generator, shape, points: Iterable[float], margin: float = 1e-2) -> np.ndarray:
    """Random normals nudged away from kinks so the difference quotient never straddles one"""
    values = rng.standard_normal(shape)
    for point in points:
        close = np.abs(values - point) < margin
        values[close] += 2 * margin * np.where(values[close] >= point, 1.0, -1.0)
    return values


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(weights)))


def _image_shape(rng: np.random.Generator, even: bool = False) -> Tuple[int, int, int, int]:
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h = int(rng.integers(1, 4)) * 2 if even else int(rng.integers(2, 7))
    w = int(rng.integers(1, 4)) * 2 if even else int(rng.integers(2, 7))
    return n, c, h, w


def _unary_case(name: str, fn, kinks=(), positive: bool = False) -> GradCase:
    def build(rng):
        shape = _image_shape(rng)
        x = np.abs(_away_from(rng, shape, [0.0])) + 0.1 if positive else _away_from(rng, shape, kinks)
        weights = rng.standard_normal(shape)
        return [_leaf(x)], lambda t: _weighted_sum(fn(t[0]), weights)
    return GradCase(name, build)


def _binary_case(name: str, fn, nonzero_b: bool = False) -> GradCase:
    def build(rng):
        shape = _image_shape(rng)
        a = rng.standard_normal(shape)
        b = rng.standard_normal(shape)
        if nonzero_b:
            b = np.sign(b) * (np.abs(b) + 0.5)
        weights = rng.standard_normal(shape)
        return [_leaf(a), _leaf(b)], lambda t: _weighted_sum(fn(t[0], t[1]), weights)
    return GradCase(name, build)


def _conv_case(kernel: int) -> GradCase:
    def build(rng):
        n, c, h, w = _image_shape(rng)
        out_c = int(rng.integers(1, 4))
        x = rng.standard_normal((n, c, h, w))
        weight = rng.standard_normal((out_c, c, kernel, kernel))
        bias = rng.standard_normal(out_c)
        weights = rng.standard_normal((n, out_c, h, w))
        return (
            [_leaf(x), _leaf(weight), _leaf(bias)],
            lambda t: _weighted_sum(ops.conv2d(t[0], t[1], t[2]), weights),
        )
    return GradCase(f"conv2d_{kernel}x{kernel}", build)


def _maxpool_case() -> GradCase:
    def build(rng):
        shape = _image_shape(rng, even=True)
        # distinct values, so no window holds a tie within the difference step
        x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1 + rng.uniform(0, 0.01, shape)
        weights = rng.standard_normal((shape[0], shape[1], shape[2] // 2, shape[3] // 2))
        return [_leaf(x)], lambda t: _weighted_sum(ops.maxpool2x2(t[0]), weights)
    return GradCase("maxpool2x2", build)


def _upsample_case() -> GradCase:
    def build(rng):
        n, c, h, w = _image_shape(rng)
        weights = rng.standard_normal((n, c, 2 * h, 2 * w))
        return [_leaf(rng.standard_normal((n, c, h, w)))], lambda t: _weighted_sum(ops.upsample_nearest2x(t[0]), weights)
    return GradCase("upsample_nearest2x", build)


def _norm_case(name: str, training: bool) -> GradCase:
    def build(rng):
        n, c, h, w = _image_shape(rng)
        x = rng.standard_normal((n, c, h, w)) * 2.0 + 0.5
        gamma = rng.standard_normal(c)
        beta = rng.standard_normal(c)
        weights = rng.standard_normal((n, c, h, w))
        if name == "instancenorm2d":
            return (
                [_leaf(x), _leaf(gamma), _leaf(beta)],
                lambda t: _weighted_sum(ops.instancenorm2d(t[0], t[1], t[2]), weights),
            )
        state = ops.BatchNormState(rng.standard_normal(c), rng.uniform(0.5, 2.0, c))

        def fn(t):
            frozen = ops.BatchNormState(state.running_mean.copy(), state.running_var.copy())
            return _weighted_sum(ops.batchnorm2d(t[0], t[1], t[2], frozen, training), weights)
        return [_leaf(x), _leaf(gamma), _leaf(beta)], fn
    return GradCase(f"{name}_{'train' if training else 'eval'}" if name == "batchnorm2d" else name, build)


def _layout_cases() -> List[GradCase]:
    def index_build(rng):
        n, c, h, w = _image_shape(rng)
        key = (slice(0, 1), slice(None), slice(h // 2, h), slice(0, max(1, w - 1)))
        shape = np.zeros((n, c, h, w))[key].shape
        weights = rng.standard_normal(shape)
        return [_leaf(rng.standard_normal((n, c, h, w)))], lambda t: _weighted_sum(ops.index(t[0], key), weights)

    def gather_build(rng):
        size = int(rng.integers(1, 20))
        order = rng.permutation(size)
        weights = rng.standard_normal(size)
        return [_leaf(rng.standard_normal(size))], lambda t: _weighted_sum(ops.gather(t[0], order), weights)

    def tile_build(rng):
        c = int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        weights = rng.standard_normal((c, h, w))
        return [_leaf(rng.standard_normal((c, 1, 1)))], lambda t: _weighted_sum(ops.tile_hw(t[0], h, w), weights)

    def concat_build(rng):
        n, c, h, w = _image_shape(rng)
        c2 = int(rng.integers(1, 4))
        weights = rng.standard_normal((n, c + c2, h, w))
        return (
            [_leaf(rng.standard_normal((n, c, h, w))), _leaf(rng.standard_normal((n, c2, h, w)))],
            lambda t: _weighted_sum(ops.concat([t[0], t[1]], axis=1), weights),
        )

    def mean_build(rng):
        shape = _image_shape(rng)
        return [_leaf(rng.standard_normal(shape))], lambda t: ops.scale(ops.mean_all(ops.mul(t[0], t[0])), 3.0)

    return [
        GradCase("index", index_build),
        GradCase("gather", gather_build),
        GradCase("tile_hw", tile_build),
        GradCase("concat", concat_build),
        GradCase("mean", mean_build),
    ]


def _lovasz_case() -> GradCase:
    from app.losses import lovasz_hinge

    def build(rng):
        size = int(rng.integers(1, 30))
        labels = rng.integers(0, 2, size)
        # spread logits so margins are pairwise separated and away from the hinge
        logits = rng.permutation(size) * 0.37 - size * 0.18 + rng.uniform(-0.05, 0.05, size)
        margins = 1.0 - logits * (2 * labels - 1)
        near_hinge = np.abs(margins) < 1e-2
        logits[near_hinge] += 0.05
        return [_leaf(logits)], lambda t: lovasz_hinge(t[0], labels).total
    return GradCase("lovasz_hinge", build)


def default_cases(include_losses: bool = True) -> List[GradCase]:
    cases = [
        _conv_case(3),
        _conv_case(1),
        _maxpool_case(),
        _upsample_case(),
        _unary_case("relu", ops.relu, kinks=(0.0,)),
        _unary_case("sigmoid", ops.sigmoid),
        _unary_case("abs", ops.absolute, kinks=(0.0,)),
        _unary_case("log", ops.log, positive=True),
        _unary_case("clip", lambda x: ops.clip(x, -0.5, 0.5), kinks=(-0.5, 0.5)),
        _unary_case("scale", lambda x: ops.scale(x, -1.7)),
        _unary_case("shift", lambda x: ops.shift(x, 0.3)),
        _binary_case("add", ops.add),
        _binary_case("sub", ops.sub),
        _binary_case("mul", ops.mul),
        _binary_case("div", ops.div, nonzero_b=True),
        _norm_case("batchnorm2d", training=True),
        _norm_case("batchnorm2d", training=False),
        _norm_case("instancenorm2d", training=True),
        *_layout_cases(),
    ]
    if include_losses:
        cases.append(_lovasz_case())
    return cases


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    """Max element-wise relative error; magnitudes below `floor` are compared absolutely"""
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numerical_gradient(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor], which: int) -> np.ndarray:
    target = inputs[which]
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + STEP
            upper = fn(inputs).item()
            flat[i] = original - STEP
            lower = fn(inputs).item()
            flat[i] = original
            grad.reshape(-1)[i] = (upper - lower) / (2 * STEP)
    return grad


def check_case(case: GradCase, rng: np.random.Generator) -> float:
    inputs, fn = case.build(rng)
    fn(inputs).backward()
    worst = 0.0
    for which, tensor in enumerate(inputs):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        worst = max(worst, relative_error(analytic, numerical_gradient(fn, inputs, which)))
    return worst


def run_suite(cases: Sequence[GradCase] = None, trials: int = 50, seed: int = 0) -> Dict[str, float]:
    """Worst relative error per case over `trials` random draws"""
    cases = default_cases() if cases is None else cases
    rng = np.random.default_rng(seed)
    report: Dict[str, float] = {}
    for case in cases:
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, check_case(case, rng))
        report[case.name] = worst
        logger.debug(f"gradcheck {case.name}: max relative error {worst:.3e}")
    return report


def failures(report: Dict[str, float], tolerance: float = TOLERANCE) -> List[str]:
    return [name for name, error in report.items() if not error < tolerance]
