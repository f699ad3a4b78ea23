"""Central-difference gradient checks in float64."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradReport:
    name: str
    max_rel_error: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def grad_check(fn, inputs, tolerance: float = 1e-4, h: float = 1e-5, seed: int = 0,
               name: str = "") -> GradReport:
    """Compare analytic and numeric gradients of the scalar sum(R * fn(*inputs)).

    ``fn`` maps Tensors to a Tensor; ``inputs`` are float64 arrays. R is a fixed random
    projection so that every output element contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    # own stream, so the projection never coincides with inputs drawn from the same seed
    rng = np.random.default_rng([seed, 7919])
    probe = fn(*[Tensor(a) for a in arrays]).data
    proj = rng.standard_normal(probe.shape)

    def objective(vals):
        return float(np.sum(fn(*[Tensor(v) for v in vals]).data * proj))

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward(proj)
    report = GradReport(name, tolerance=tolerance)
    for k, a in enumerate(arrays):
        analytic = tensors[k].grad if tensors[k].grad is not None else np.zeros_like(a)
        numeric = np.zeros_like(a)
        flat = numeric.reshape(-1)
        for i in range(a.size):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[k].reshape(-1)[i] += h
            minus[k].reshape(-1)[i] -= h
            flat[i] = (objective(plus) - objective(minus)) / (2 * h)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
        report.max_rel_error[k] = float(np.max(np.abs(analytic - numeric)) / scale)
    return report


def _cases(rng):
    """(name, fn, inputs) for every differentiable op, on small random float64 tensors."""
    from . import ops

    def r(*shape):
        return rng.standard_normal(shape)

    def bn(affine, training):
        def f(x, *gb):
            g, b = gb if affine else (None, None)
            return ops.batchnorm2d(x, g, b, np.full(3, 0.2), np.full(3, 1.5), training)
        return f

    mask_seed = int(rng.integers(2**31))
    cases = [
        ("conv2d same s1", lambda x, w, b: ops.conv2d(x, w, b), [r(1, 2, 5, 7), r(3, 2, 3, 3), r(3)]),
        ("conv2d same s2", lambda x, w, b: ops.conv2d(x, w, b, (2, 2)), [r(2, 2, 5, 7), r(3, 2, 3, 3), r(3)]),
        ("conv2d valid", lambda x, w: ops.conv2d(x, w, None, (1, 2), "valid"), [r(1, 2, 5, 7), r(3, 2, 3, 3)]),
        ("conv2d 3x1 s2x1", lambda x, w: ops.conv2d(x, w, None, (2, 1)), [r(2, 2, 5, 7), r(3, 2, 3, 1)]),
        ("conv2d 1x3 s1x2", lambda x, w: ops.conv2d(x, w, None, (1, 2)), [r(2, 2, 5, 7), r(3, 2, 1, 3)]),
        ("conv2d 1x1", lambda x, w, b: ops.conv2d(x, w, b), [r(2, 3, 4, 5), r(2, 3, 1, 1), r(2)]),
        ("maxpool2d 1x2 ceil", lambda x: ops.maxpool2d(x, (1, 2), ceil_mode=True), [r(2, 2, 5, 7)]),
        ("maxpool2d 2x1", lambda x: ops.maxpool2d(x, (2, 1)), [r(2, 2, 5, 7)]),
        ("batchnorm2d affine train", bn(True, True), [r(2, 3, 4, 5), r(3), r(3)]),
        ("batchnorm2d plain train", bn(False, True), [r(2, 3, 4, 5)]),
        ("batchnorm2d affine eval", bn(True, False), [r(2, 3, 4, 5), r(3), r(3)]),
        ("relu", ops.relu, [r(3, 4) + 0.05]),
        ("dropout", lambda x: ops.dropout(x, 0.25, True, np.random.default_rng(mask_seed)), [r(4, 6)]),
        ("linear", ops.linear, [r(3, 4), r(5, 4), r(5)]),
        ("embedding_lookup", lambda t: ops.embedding_lookup([[0, 2, 2], [3, 1, 0]], t), [r(4, 3)]),
        ("concat_channels", ops.concat_channels, [r(2, 2, 3, 4), r(2, 3, 3, 4)]),
        ("add", ops.add, [r(2, 3), r(2, 3)]),
        ("global_maxpool", ops.global_maxpool, [r(2, 3, 4, 5)]),
        ("film per-sample", ops.film, [r(2, 3, 4, 5), r(2, 3), r(2, 3)]),
        ("film per-channel", ops.film, [r(2, 3, 4, 5), r(3), r(3)]),
        ("gru_seq 5 steps", lambda *a: ops.gru_seq(*a, lengths=[5, 3]),
         [r(2, 5, 4), 0.5 * r(9, 4), 0.5 * r(9, 3), 0.3 * r(9), 0.3 * r(9)]),
        ("softmax_cross_entropy", lambda z: ops.softmax_cross_entropy(z, [1, 3, 0]), [r(3, 5)]),
        ("mean", lambda x: ops.mean(x, 2), [r(2, 3, 4, 5)]),
        ("transpose", lambda x: ops.transpose(x, (0, 2, 1)), [r(2, 3, 4)]),
        ("slice_last", lambda x: ops.slice_last(x, 1, 4), [r(2, 6)]),
        ("reshape", lambda x: ops.reshape(x, (3, 8)), [r(2, 3, 4)]),
    ]
    return cases


def gradient_suite(seeds=(0, 1, 2, 3, 4), tolerance: float = 1e-4) -> list:
    """GradReports for every op and seed."""
    reports = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, fn, inputs in _cases(rng):
            rep = grad_check(fn, inputs, tolerance=tolerance, seed=seed, name=name)
            rep.name = f"{name} [seed {seed}]"
            reports.append(rep)
    return reports
