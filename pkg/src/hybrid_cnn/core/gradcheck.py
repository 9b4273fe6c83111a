"""
Finite-difference verification of tape gradients.

`run_gradcheck_suite` exercises every primitive plus the composite paths the
models rely on (conv -> bn -> relu -> skip, template weight generation, the
template-layer forward path and the recurrence regulariser) and is what the
`gradcheck` CLI command runs.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from hybrid_cnn.core import functional as F
from hybrid_cnn.core.tensor import Tensor, backward

logger = logging.getLogger(__name__)

__all__ = [
    "GradCheckResult",
    "GradCheckReport",
    "numerical_gradient",
    "check_gradients",
    "run_gradcheck_suite",
]

# Relative errors use max(|analytic| + |numeric|, floor) as denominator so
# that gradients which are analytically ~0 compare on an absolute scale.
_DENOMINATOR_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    results: List[GradCheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def worst(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the scalar `fn()` w.r.t. `tensor`."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + eps
        plus = fn().item()
        flat[idx] = original - eps
        minus = fn().item()
        flat[idx] = original
        grad_flat[idx] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    name: str = "",
) -> GradCheckResult:
    """Compare tape gradients of `fn()` against central differences.

    `fn` must rebuild its graph on every call from the current values of
    `inputs`.
    """
    for t in inputs:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(fn, t, eps)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), _DENOMINATOR_FLOOR)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    passed = worst <= rtol
    logger.debug(f"gradcheck {name}: max relative error {worst:.3e} ({'ok' if passed else 'FAIL'})")
    return GradCheckResult(name=name, max_rel_error=worst, passed=passed)


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    # Random projection so that sum-invariant outputs (e.g. batchnorm) still
    # carry a non-trivial gradient.
    weights = Tensor(rng.standard_normal(out.shape))
    return F.sum_all(F.mul_elementwise(out, weights))


def run_gradcheck_suite(seed: int = 0, eps: float = 1e-5, rtol: float = 1e-4) -> GradCheckReport:
    """Check every differentiable primitive and the composite model paths."""
    # Imported here to keep hybrid_cnn.core free of upward imports at module load.
    from hybrid_cnn.sharing import (
        ForwardStrategy,
        SharingGroup,
        TemplateBank,
        CoefficientMatrix,
        generate_weights,
        shared_conv_forward,
        recurrence_regularized_loss,
    )

    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    def param(*shape: int) -> Tensor:
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def run(name: str, build: Callable[[np.random.Generator], Tensor], inputs: Sequence[Tensor]):
        weights_seed = int(rng.integers(2**31))

        def fn() -> Tensor:
            return build(np.random.default_rng(weights_seed))

        report.results.append(check_gradients(fn, inputs, eps=eps, rtol=rtol, name=name))

    x = param(2, 3, 5, 5)
    k = param(4, 3, 3, 3)
    run("conv2d", lambda r: _weighted(F.conv2d(x, k, padding=1), r), [x, k])

    xb = param(3, 2, 4, 4)
    gamma = param(2)
    beta = param(2)
    run(
        "batchnorm2d[train]",
        lambda r: _weighted(F.batchnorm2d(xb, gamma, beta, F.RunningStats(), train=True), r),
        [xb, gamma, beta],
    )
    stats = F.RunningStats(mean=rng.standard_normal(2), var=rng.uniform(0.5, 2.0, 2))
    run(
        "batchnorm2d[eval]",
        lambda r: _weighted(F.batchnorm2d(xb, gamma, beta, stats, train=False), r),
        [xb, gamma, beta],
    )

    # Keep relu inputs away from the kink.
    xr = Tensor(rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)), requires_grad=True)
    run("relu", lambda r: _weighted(F.relu(xr), r), [xr])

    a = param(3, 4)
    b = param(3, 4)
    run("add", lambda r: _weighted(F.add(a, b), r), [a, b])
    run("scale", lambda r: _weighted(F.scale(a, -2.5), r), [a])
    run("mul_elementwise", lambda r: _weighted(F.mul_elementwise(a, b), r), [a, b])
    run("sum_all", lambda r: F.sum_all(a), [a])

    xc = param(2, 3, 4, 4)
    bias = param(3)
    run("add_channel_bias", lambda r: _weighted(F.add_channel_bias(xc, bias), r), [xc, bias])

    logits = param(2, 1, 3, 3)
    targets = Tensor((rng.random((2, 1, 3, 3)) > 0.5).astype(float))
    run("bce_with_logits", lambda r: F.bce_with_logits(logits, targets), [logits])

    coeffs = param(4, 3)
    run("abs_cosine_similarity", lambda r: _weighted(F.abs_cosine_similarity(coeffs), r), [coeffs])

    xs = param(2, 3, 4, 4)
    ks = param(3, 3, 3, 3)
    gamma_s = param(3)
    beta_s = param(3)

    def residual_block(r: np.random.Generator) -> Tensor:
        h = F.conv2d(xs, ks, padding=1)
        h = F.batchnorm2d(h, gamma_s, beta_s, F.RunningStats(), train=True)
        h = F.relu(h)
        return _weighted(F.add(xs, h), r)

    run("conv->bn->relu->skip", residual_block, [xs, ks, gamma_s, beta_s])

    templates = [param(3, 3, 3, 3) for _ in range(3)]
    alpha = param(4, 3)
    group = SharingGroup(
        group_id="gradcheck",
        bank=TemplateBank(templates),
        coefficients=CoefficientMatrix(alpha),
        members=[0, 1, 2, 3],
    )
    run("generate_weights", lambda r: _weighted(generate_weights(group, 2), r), [alpha, *templates])
    xt = param(2, 3, 4, 4)
    run(
        "shared_conv_forward[templates]",
        lambda r: _weighted(
            shared_conv_forward(group, 1, xt, padding=1, strategy=ForwardStrategy.TEMPLATE_LAYERS), r
        ),
        [xt, alpha, *templates],
    )
    base = param(1)
    run(
        "recurrence_regularized_loss",
        lambda r: recurrence_regularized_loss(F.sum_all(base), [group], lambda_r=0.3),
        [base, alpha],
    )

    for result in report.results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{result.name:<34s} max rel err {result.max_rel_error:.2e}")
    return report
