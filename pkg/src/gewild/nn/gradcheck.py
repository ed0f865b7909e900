"""Finite-difference verification of reverse-mode gradients.

Checks run the same op graph in float64 (the production dtype is float32;
double precision here keeps the comparison tolerance tight) and compare the
taped gradient of sum(f(xs)) against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    max_rel_err: float = 0.0
    per_input: list[float] = field(default_factory=list)
    n_elements: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel err {self.max_rel_err:.3e} "
                f"(tolerance {self.tolerance:.0e}, {self.n_elements} elements)")


def _rel_errors(analytic: np.ndarray, numeric: np.ndarray, atol_floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol_floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn, inputs, tolerance: float = 1e-3, eps: float = 1e-5,
               name: str = "op", atol_floor: float = 1e-4,
               sample: int | None = None, sample_seed: int = 0) -> GradCheckReport:
    """Compare taped gradients of sum(fn(*inputs)) with central differences.

    `inputs` are numpy arrays; each is checked as a differentiable input.
    Elements where both gradients are below `atol_floor` in magnitude are
    compared against the floor instead, so exact zeros do not trip the check.
    With `sample` set, at most that many elements per input are probed
    (chosen by a seeded rng), which keeps large models tractable.
    """
    xs = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True,
                 dtype=np.float64) for x in inputs]
    out = fn(*xs)
    total = out if out.ndim == 0 else _sum_all(out)
    total.backward()
    analytic = [x.grad.copy() for x in xs]

    rng = np.random.default_rng([sample_seed, 0x9D1F])
    report = GradCheckReport(name=name, tolerance=tolerance)
    with no_grad():
        for x, a in zip(xs, analytic):
            flat = x.data.reshape(-1)
            if sample is not None and flat.size > sample:
                probes = np.sort(rng.choice(flat.size, size=sample, replace=False))
            else:
                probes = np.arange(flat.size)
            numeric = np.zeros(probes.size, dtype=np.float64)
            for k, j in enumerate(probes):
                orig = flat[j]
                flat[j] = orig + eps
                up = _eval_sum(fn, xs)
                flat[j] = orig - eps
                down = _eval_sum(fn, xs)
                flat[j] = orig
                numeric[k] = (up - down) / (2.0 * eps)
            errs = _rel_errors(a.reshape(-1)[probes], numeric, atol_floor)
            report.per_input.append(float(errs.max()) if errs.size else 0.0)
            report.n_elements += errs.size
    report.max_rel_err = max(report.per_input, default=0.0)
    return report


def model_grad_check(loss_fn, named_params, tolerance: float = 1e-3,
                     eps: float = 1e-5, sample: int = 4,
                     atol_floor: float = 1e-4, name: str = "model",
                     sample_seed: int = 0) -> GradCheckReport:
    """FD-check parameter gradients of a zero-argument loss closure.

    `named_params` are (name, Tensor or Parameter) pairs whose .data is
    perturbed in place; up to `sample` entries per tensor are probed. Run
    the model in float64 for trustworthy differences; the default eps keeps
    the probe window narrow enough to miss relu/maxpool kinks.
    """
    tensors = [(n, getattr(p, "tensor", p)) for n, p in named_params]
    for _, t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    grads = [(n, p, p.grad.copy()) for n, p in tensors]
    rng = np.random.default_rng([sample_seed, 0x9D1F])
    report = GradCheckReport(name=name, tolerance=tolerance)
    with no_grad():
        for _, p, g in grads:
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            probes = rng.choice(flat.size, size=min(sample, flat.size),
                                replace=False)
            worst = 0.0
            for j in probes:
                orig = flat[j]
                flat[j] = orig + eps
                up = float(loss_fn().data)
                flat[j] = orig - eps
                down = float(loss_fn().data)
                flat[j] = orig
                numeric = (up - down) / (2.0 * eps)
                denom = max(abs(gflat[j]), abs(numeric), atol_floor)
                worst = max(worst, abs(gflat[j] - numeric) / denom)
            report.per_input.append(worst)
            report.n_elements += probes.size
    report.max_rel_err = max(report.per_input, default=0.0)
    return report


def _sum_all(t: Tensor) -> Tensor:
    from .tensor import sum_

    return sum_(t)


def _eval_sum(fn, xs) -> float:
    out = fn(*xs)
    return float(out.data.sum())
