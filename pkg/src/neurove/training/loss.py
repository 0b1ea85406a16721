"""Two-part velocity loss with gradient-balanced dynamic scaling.

Per output row the loss is ``0.5 * ||e||`` separately for the angular and the
linear error vector; the total is ``scale_a * mean(L_a) + scale_l * mean(L_l)``.

Angular rates (deg/s) and linear speeds (m/s) differ by orders of magnitude,
so the two terms would otherwise pull with very different strength. The
scales track an exponential moving average of each term's gradient norm and
are set so that both scaled averages meet at their geometric mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import autodiff as ad

SCALE_MIN, SCALE_MAX = 1e-3, 1e3


@dataclass(frozen=True)
class LossScaleState:
    ema_angular: float = 0.0
    ema_linear: float = 0.0
    decay: float = 0.99
    scale_a: float = 1.0
    scale_l: float = 1.0
    updates: int = 0

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        if self.scale_a <= 0 or self.scale_l <= 0:
            raise ValueError("scales must be positive")


@dataclass
class VelocityLoss:
    total: object  # scalar, Tensor while recording
    angular: float  # mean L_a (unscaled)
    linear: float  # mean L_l (unscaled)
    parts: tuple  # (mean L_a, mean L_l) as graph nodes


def _half_norm(e):
    return 0.5 * ad.norm(e, axis=-1)


def velocity_loss(pred, gt, scale: LossScaleState = LossScaleState()) -> VelocityLoss:
    """``pred`` and ``gt`` are ``[B, n, 6]`` (linear first, then angular)."""
    gv = np.asarray(ad.value(gt), dtype=np.float64)
    pv = ad.value(pred)
    if np.shape(pv) != gv.shape or gv.shape[-1] != 6:
        raise ValueError(f"prediction {np.shape(pv)} and ground truth {gv.shape} must both be [..., 6]")
    if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(pv))):
        raise ValueError("velocity loss got NaN/inf input")
    err = gt - pred if isinstance(gt, ad.Tensor) else gv - pred
    la = ad.mean(_half_norm(err[..., 3:]))
    ll = ad.mean(_half_norm(err[..., :3]))
    total = scale.scale_a * la + scale.scale_l * ll
    return VelocityLoss(total, float(ad.value(la)), float(ad.value(ll)), (la, ll))


def update_loss_scales(scale: LossScaleState, grad_a_norm: float, grad_l_norm: float) -> LossScaleState:
    """Fold the latest per-term gradient norms into the EMAs and rebalance.

    The first update seeds the EMAs with the observed norms. When both norms
    are zero the state is returned unchanged.
    """
    a, l = float(grad_a_norm), float(grad_l_norm)
    if a < 0 or l < 0 or not (np.isfinite(a) and np.isfinite(l)):
        raise ValueError("gradient norms must be finite and non-negative")
    if a == 0.0 and l == 0.0:
        return scale
    if scale.updates == 0:
        ema_a, ema_l = a, l
    else:
        k = scale.decay
        ema_a = k * scale.ema_angular + (1 - k) * a
        ema_l = k * scale.ema_linear + (1 - k) * l
    if ema_a > 0 and ema_l > 0:
        g = np.sqrt(ema_a * ema_l)
        s_a = float(np.clip(g / ema_a, SCALE_MIN, SCALE_MAX))
        s_l = float(np.clip(g / ema_l, SCALE_MIN, SCALE_MAX))
    else:
        # one term has produced no gradient yet; keep the current balance
        s_a, s_l = scale.scale_a, scale.scale_l
    return replace(scale, ema_angular=ema_a, ema_linear=ema_l, scale_a=s_a, scale_l=s_l, updates=scale.updates + 1)
