"""Central finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _rel_err(fd: np.ndarray, ad: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(ad)), 1e-3)
    return float(np.max(np.abs(fd - ad) / denom))


def grad_check(f, tensors: dict[str, Tensor], h: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f()`` against central differences.

    ``f`` must read the tensors in ``tensors`` (name -> Tensor, all float64,
    requires_grad set) and return a scalar Tensor. Every element of every
    tensor is perturbed, so keep the instances small.
    """
    for t in tensors.values():
        t.zero_grad()
    loss = f()
    backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}

    report = GradCheckReport(max_rel_err=0.0, tol=tol)
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * h)
        err = _rel_err(fd.reshape(t.shape), analytic[name])
        report.per_tensor[name] = err
        if err > report.max_rel_err:
            report.max_rel_err = err
            report.worst = name
    return report
