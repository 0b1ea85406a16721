"""Adam with global-norm gradient clipping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


class Adam:
    """Bias-corrected Adam over a name -> array mapping, updated in place."""

    def __init__(self, cfg: AdamConfig | None = None):
        self.cfg = cfg or AdamConfig()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.skipped = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None) -> bool:
        """Apply one update; returns False (and leaves params alone) on a non-finite gradient."""
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient, skipping step %d", self.cfg.step + 1)
            return False
        c = self.cfg
        c.step += 1
        lr = c.lr if lr is None else lr
        bc1 = 1.0 - c.beta1**c.step
        bc2 = 1.0 - c.beta2**c.step
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + c.epsilon)
        return True

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for key, arr in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m.") :]] = np.array(arr, dtype=np.float64)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v.") :]] = np.array(arr, dtype=np.float64)
        self.cfg.step = step


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: Adam) -> dict[str, np.ndarray]:
    opt.step(params, grads)
    return params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale gradients so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly new) gradient mapping and the norm before clipping.
    Tape gradients may alias one another, so nothing is modified in place.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total
