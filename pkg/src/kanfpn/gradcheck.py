"""Finite-difference verification of analytic gradients.

Two flavors:
  * per-coordinate central differences for individual ops (tight, slow),
  * random-direction probes for composite layers and whole pipelines,
    where bumping every scalar would be prohibitive.

Errors are reported elementwise as |analytic - numeric| / max(1, |analytic|,
|numeric|), so order-one gradients are compared relatively and vanishing
gradients absolutely.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor

__all__ = ["rel_error", "check_gradients", "GradReport"]


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


class GradReport(dict):
    """Max relative error per input name."""

    @property
    def worst(self) -> float:
        return max(self.values()) if self else 0.0

    def __str__(self):
        lines = [f"  {name:<28s} {err:.3e}" for name, err in sorted(self.items())]
        return "\n".join(lines)


def _analytic_grads(f: Callable[[Mapping[str, Tensor]], Tensor],
                    inputs: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    tape = Tape()
    tracked = {k: tape.watch(v) for k, v in inputs.items()}
    loss = f(tracked)
    grads = tape.backward(loss)
    out = {}
    for k, t in tracked.items():
        g = grads.get(t)
        out[k] = np.zeros_like(t.data) if g is None else g.data
    return out


def check_gradients(f: Callable[[Mapping[str, Tensor]], Tensor],
                    inputs: Mapping[str, Tensor],
                    h: float = 1e-5,
                    mode: str = "coord",
                    directions: int = 4,
                    seed: int = 0) -> GradReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` maps a name->Tensor dict to a scalar tensor. All inputs should be
    float64. ``mode='coord'`` bumps every scalar of every input;
    ``mode='dir'`` probes each input along random unit directions.
    """
    inputs = {k: Tensor(v.data.astype(np.float64)) for k, v in inputs.items()}
    analytic = _analytic_grads(f, inputs)

    def eval_at(mapping) -> float:
        return f({k: Tensor(v) for k, v in mapping.items()}).item()

    report = GradReport()
    base = {k: v.data.copy() for k, v in inputs.items()}
    if mode == "coord":
        for name, arr in base.items():
            numeric = np.zeros_like(arr)
            flat = numeric.reshape(-1)
            work = arr.reshape(-1)
            for i in range(arr.size):
                orig = work[i]
                work[i] = orig + h
                fp = eval_at(base)
                work[i] = orig - h
                fm = eval_at(base)
                work[i] = orig
                flat[i] = (fp - fm) / (2 * h)
            report[name] = rel_error(analytic[name], numeric)
        return report

    if mode != "dir":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    for name, arr in base.items():
        worst = 0.0
        for _ in range(directions):
            v = rng.standard_normal(arr.shape)
            v /= np.linalg.norm(v.reshape(-1))
            saved = arr.copy()
            arr += h * v
            fp = eval_at(base)
            arr[...] = saved - h * v
            fm = eval_at(base)
            arr[...] = saved
            numeric = (fp - fm) / (2 * h)
            dot = float(np.sum(analytic[name] * v))
            worst = max(worst, rel_error(np.asarray(dot), np.asarray(numeric)))
        report[name] = worst
    return report
