import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from kdsr.autograd import SIGMOID_CLAMP, Array, ParamGroup, Parameter, Tensor, no_grad
from kdsr.errors import ArgumentError, DimensionError, NumericError, UndefinedCorrelationError

# Every matrix in the training math is a float64 ndarray; float32 only appears in files.
DenseMatrix = Array

FD_STEP = 1e-5


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def sigmoid(x: float) -> float:
    if not math.isfinite(x):
        raise NumericError(f"sigmoid of non-finite value {x}")
    if x >= 0:
        s = 1.0 / (1.0 + math.exp(-x))
    else:
        z = math.exp(x)
        s = z / (1.0 + z)
    return min(max(s, SIGMOID_CLAMP), 1.0 - SIGMOID_CLAMP)


def softmax_cross_entropy(logits: Sequence[float] | Array, target: int) -> float:
    values = np.asarray(logits, dtype=np.float64)
    if values.size == 0:
        raise ArgumentError("softmax_cross_entropy needs at least one logit")
    if not 0 <= target < values.size:
        raise ArgumentError(f"target {target} out of range for {values.size} logits")
    shifted = values - values.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[target])


def pearson(u: Sequence[float] | Array, v: Sequence[float] | Array) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"pearson needs equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ArgumentError("pearson needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("pearson correlation is undefined for a constant vector")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


@dataclass
class AdamState:
    first_moment: DenseMatrix
    second_moment: DenseMatrix
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, p: Parameter, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros_like(p.data), np.zeros_like(p.data), 0, beta1, beta2, eps)


def adam_step(p: Parameter, s: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of `p` in place; `s` advances one step."""
    if lr <= 0:
        raise ArgumentError(f"learning rate must be positive, got {lr}")
    g = p.gradient
    if g.shape != p.data.shape or s.first_moment.shape != p.data.shape:
        raise DimensionError(f"{p.name}: gradient/moment shapes disagree with {p.data.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in parameter {p.name}")

    s.step += 1
    s.first_moment *= s.beta1
    s.first_moment += (1.0 - s.beta1) * g
    s.second_moment *= s.beta2
    s.second_moment += (1.0 - s.beta2) * (g * g)

    m_hat = s.first_moment / (1.0 - s.beta1**s.step)
    v_hat = s.second_moment / (1.0 - s.beta2**s.step)
    p.data -= lr * m_hat / (np.sqrt(v_hat) + s.eps)


class Adam:
    """Adam over a parameter list with one learning rate per ParamGroup."""

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = [p for p in params if p.trainable]
        self.states: dict[str, AdamState] = {
            p.name: AdamState.like(p, beta1, beta2, eps) for p in self.params
        }

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lrs: dict[ParamGroup, float]) -> None:
        for p in self.params:
            adam_step(p, self.states[p.name], lrs[p.group])


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most `max_norm`; returns the norm."""
    total = math.sqrt(sum(float((p.gradient**2).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class GradCheckReport:
    max_relative_error: float
    tolerance: float
    coordinates_checked: int
    worst_parameter: Optional[str] = None
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

    def __str__(self) -> str:
        status = "passed" if self.passed else "FAILED"
        return (
            f"gradient check {status}: max relative error {self.max_relative_error:.3e} "
            f"(tol {self.tolerance:.1e}) over {self.coordinates_checked} coordinates"
        )


def finite_diff_check(
    loss: Callable[[], Tensor],
    params: Sequence[Parameter],
    tol: float,
    rng: Optional[np.random.Generator] = None,
    fraction: float = 0.01,
    analytic: Optional[dict[str, DenseMatrix]] = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare analytic gradients of `loss` with central differences (step 1e-5) on a random
    `fraction` of each parameter's coordinates, at least one per parameter.

    `analytic` overrides the tape gradients, which is how a corrupted gradient is checked.
    """
    if tol <= 0:
        raise ArgumentError(f"tolerance must be positive, got {tol}")
    rng = rng if rng is not None else np.random.default_rng(0)

    if analytic is None:
        for p in params:
            p.zero_grad()
        value = loss()
        _require_finite(value)
        value.backward()
        analytic = {p.name: p.gradient.copy() for p in params}

    worst = 0.0
    worst_name: Optional[str] = None
    checked = 0
    per_param: dict[str, float] = {}
    for p in params:
        count = max(1, math.ceil(fraction * p.data.size))
        coords = rng.choice(p.data.size, size=min(count, p.data.size), replace=False)
        param_worst = 0.0
        for flat in sorted(int(c) for c in coords):
            idx = np.unravel_index(flat, p.data.shape)
            original = p.data[idx]
            with no_grad():
                p.data[idx] = original + FD_STEP
                plus = _require_finite(loss())
                p.data[idx] = original - FD_STEP
                minus = _require_finite(loss())
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * FD_STEP)
            exact = float(analytic[p.name][idx])
            err = abs(numeric - exact) / max(abs(numeric) + abs(exact), floor)
            param_worst = max(param_worst, err)
            checked += 1
        per_param[p.name] = param_worst
        if param_worst > worst or worst_name is None:
            worst, worst_name = param_worst, p.name

    return GradCheckReport(worst, tol, checked, worst_name, per_param)


def _require_finite(value: Tensor) -> float:
    scalar = float(value.data)
    if not math.isfinite(scalar):
        raise NumericError(f"loss evaluated to {scalar}")
    return scalar
