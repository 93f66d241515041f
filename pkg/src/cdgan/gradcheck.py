"""Central finite-difference checks of autograd gradients (float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

FD_STEP = 1e-5
# Denominator floor for the relative error, so entries where both gradients
# vanish compare on absolute error instead.
REL_FLOOR = 1e-8


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass(frozen=True)
class GradSample:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def pick_entries(tensors: dict[str, torch.Tensor], n: int, rng: np.random.Generator):
    """Up to ``n`` distinct (name, flat index) pairs drawn uniformly over all elements."""
    names = list(tensors)
    sizes = np.array([tensors[k].numel() for k in names])
    total = int(sizes.sum())
    flat = rng.choice(total, size=min(n, total), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for f in sorted(int(i) for i in flat):
        j = int(np.searchsorted(bounds, f, side="right"))
        start = 0 if j == 0 else int(bounds[j - 1])
        out.append((names[j], f - start))
    return out


def check_gradients(fn, tensors: dict[str, torch.Tensor], n: int = 50, seed: int = 0, h: float = FD_STEP):
    """Compare d fn()/d tensor[i] from autograd with central differences.

    ``fn`` takes no arguments and returns a scalar tensor computed from the
    leaf ``tensors`` (which must be float64 and require grad).
    """
    for t in tensors.values():
        if t.dtype != torch.float64:
            raise TypeError("finite-difference checks need float64 tensors")
    for t in tensors.values():
        t.grad = None
    fn().backward()
    grads = {k: (t.grad.clone() if t.grad is not None else torch.zeros_like(t)) for k, t in tensors.items()}
    samples = []
    with torch.no_grad():
        for name, idx in pick_entries(tensors, n, np.random.default_rng(seed)):
            flat = tensors[name].view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = fn().item()
            flat[idx] = orig - h
            down = fn().item()
            flat[idx] = orig
            samples.append(GradSample(name, idx, grads[name].view(-1)[idx].item(), (up - down) / (2 * h)))
    return samples
