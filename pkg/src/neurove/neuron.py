"""LIF and astrocyte-LIF (ALIF) neuron dynamics.

Iterative form with hard reset to a zero resting potential::

    v[t+1] = (1 - s[t]) * alpha * v[t] + f(x[t] + D * v_donor)
    s[t+1] = H(v[t+1] - v_th)

The synaptic operator ``f`` (convolution or affine map) belongs to the
enclosing layer; the LIF step receives its result as the input current.
``D * v_donor`` is the Fick's-law diffusion injected by the donor neuron.

All step functions work on plain arrays as well as on recorded tensors.
During recording the reset factor ``(1 - s)`` is held constant, and the
spike nonlinearity back-propagates through a surrogate derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from . import autodiff as ad

SurrogateKind = Literal["rectangular", "arctan"]


@dataclass(frozen=True)
class NeuronParams:
    alpha: float = 0.9
    v_th: float = 1.0
    diffusion_d: float = 0.5
    beta: float | None = None
    v_rest: float = 0.0

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.v_th <= 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if self.v_rest != 0.0:
            raise ValueError("only a zero resting potential is supported")
        if self.diffusion_d < 0:
            raise ValueError(f"diffusion_d must be non-negative, got {self.diffusion_d}")

    @classmethod
    def from_time_constant(cls, dt: float, tau: float, **kwargs) -> "NeuronParams":
        return cls(alpha=1.0 - dt / tau, beta=dt / tau, **kwargs)


@dataclass(frozen=True)
class SurrogateSpec:
    kind: SurrogateKind = "rectangular"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rectangular", "arctan"):
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if self.width <= 0:
            raise ValueError("surrogate width must be positive")


DEFAULT_SURROGATE = SurrogateSpec()


@dataclass
class NeuronState:
    v: np.ndarray
    s: np.ndarray
    v_final_prev_layer: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v_final_prev_layer is None:
            self.v_final_prev_layer = np.zeros(np.shape(ad.value(self.v)))
        if not (np.shape(ad.value(self.v)) == np.shape(ad.value(self.s)) == np.shape(self.v_final_prev_layer)):
            raise ValueError("v, s and donor potentials must share one shape")

    @classmethod
    def zeros(cls, shape) -> "NeuronState":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def diffusion_term(v_i, v_j, d: float):
    """Fick's-law flux ``J = d * (v_i - v_j)`` from neuron i into neuron j."""
    if d < 0:
        raise ValueError("diffusion coefficient must be non-negative")
    return d * (np.asarray(v_i, dtype=float) - np.asarray(v_j, dtype=float))


def heaviside(v, v_th: float) -> np.ndarray:
    """1 where ``v >= v_th`` else 0; equality fires."""
    return (np.asarray(v) >= v_th).astype(np.float64)


def surrogate_grad(v, v_th: float, spec: SurrogateSpec = DEFAULT_SURROGATE) -> np.ndarray:
    """Stand-in derivative of the Heaviside step, centred on ``v_th``."""
    u = np.asarray(v, dtype=np.float64) - v_th
    w = spec.width
    if spec.kind == "rectangular":
        return np.where(np.abs(u) <= 0.5 * w, 1.0 / w, 0.0)
    return w / (2.0 * (1.0 + (0.5 * np.pi * w * u) ** 2))


def surrogate_primitive(v, v_th: float, spec: SurrogateSpec = DEFAULT_SURROGATE) -> np.ndarray:
    """Antiderivative of :func:`surrogate_grad`, zero far below threshold.

    Useful as a smoothed stand-in for the Heaviside step in finite-difference
    oracles.
    """
    u = np.asarray(v, dtype=np.float64) - v_th
    w = spec.width
    if spec.kind == "rectangular":
        return np.clip(u / w + 0.5, 0.0, 1.0)
    return 0.5 + np.arctan(0.5 * np.pi * w * u) / np.pi


def spike(v, v_th: float, spec: SurrogateSpec = DEFAULT_SURROGATE):
    """Heaviside firing that back-propagates through the surrogate."""
    vv = ad.value(v)
    out = heaviside(vv, v_th)
    if not isinstance(v, ad.Tensor):
        return out
    return ad.custom(out, (v,), lambda g: (g * surrogate_grad(vv, v_th, spec),))


def _check_len(a, b, what: str) -> None:
    if np.shape(ad.value(a)) != np.shape(ad.value(b)):
        raise ValueError(f"{what}: shape {np.shape(ad.value(a))} != {np.shape(ad.value(b))}")


def lif_step(
    state: NeuronState,
    current,
    params: NeuronParams,
    surrogate: SurrogateSpec = DEFAULT_SURROGATE,
) -> tuple[NeuronState, np.ndarray]:
    """One LIF update. ``current`` is the synaptic operator's output."""
    _check_len(state.v, current, "lif_step")
    keep = params.alpha * (1.0 - ad.value(state.s))  # reset factor, constant w.r.t. s
    v = keep * state.v + current
    s = spike(v, params.v_th, surrogate)
    return NeuronState(v, ad.value(s), state.v_final_prev_layer), s


def alif_step(
    state: NeuronState,
    x,
    params: NeuronParams,
    synapse: Callable | None = None,
    surrogate: SurrogateSpec = DEFAULT_SURROGATE,
) -> tuple[NeuronState, np.ndarray]:
    """One ALIF update.

    The donor potentials ``state.v_final_prev_layer`` diffuse into the
    presynaptic input before the synaptic operator (identity by default) is
    applied. With ``diffusion_d == 0`` this is exactly :func:`lif_step`.
    """
    if params.diffusion_d != 0.0:
        _check_len(x, state.v_final_prev_layer, "alif_step")
        x = x + params.diffusion_d * state.v_final_prev_layer
    current = x if synapse is None else synapse(x)
    return lif_step(state, current, params, surrogate)


def with_donor(state: NeuronState, donor) -> NeuronState:
    """Copy of ``state`` with new donor potentials (the donor is not mutated)."""
    donor = np.array(ad.value(donor), dtype=np.float64, copy=True)
    return replace(state, v_final_prev_layer=donor)


def simulate(
    kind: Literal["lif", "alif"],
    current: np.ndarray,
    params: NeuronParams = NeuronParams(),
) -> tuple[np.ndarray, np.ndarray]:
    """Drive a population with a ``(steps, n)`` current trace.

    For ALIF in isolation there is no preceding layer, so each neuron's
    donor is its own potential from the previous step. Returns the
    membrane and spike traces, both ``(steps, n)``.
    """
    current = np.asarray(current, dtype=np.float64)
    if current.ndim == 1:
        current = current[:, None]
    if kind not in ("lif", "alif"):
        raise ValueError(f"unknown neuron kind {kind!r}")
    state = NeuronState.zeros(current.shape[1])
    vs = np.empty_like(current)
    ss = np.empty_like(current)
    for t, i_t in enumerate(current):
        if kind == "lif":
            state, s = lif_step(state, i_t, params)
        else:
            state, s = alif_step(with_donor(state, state.v), i_t, params)
        vs[t] = state.v
        ss[t] = s
    return vs, ss
