"""ASLSTM recurrent cell, its non-spiking output neuron and the SLSTM baseline.

One cell step::

    [i, f, o, g] = x W + r U            r = v[t-1]  (or s[t-1] for SLSTM)
    c[t] = sig(f) * c[t-1] + sig(i) * tanh(g)
    h[t] = sig(o) * tanh(c[t])
    v[t] = alpha * (1 - s[t-1]) * h[t] + x W_v + D * v[t-1]
    s[t] = H(v[t] - v_th)

The readout neuron never fires; its membrane value is the regression output::

    out = (kappa * v[t_f] + D * v[t_f - 1]) P + x[t_f] W_x + b
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import autodiff as ad
from .neuron import DEFAULT_SURROGATE, SurrogateSpec, spike

Recurrence = Literal["membrane", "spike"]

# gate blocks are stored in this order along the last axis of w and u
_GATES = ("i", "f", "o", "g")


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ASLSTMParams:
    w: np.ndarray  # (input_dim, 4 * hidden), gate blocks i, f, o, g
    u: np.ndarray  # (hidden, 4 * hidden)
    w_v: np.ndarray  # (input_dim, hidden), synaptic operator of the membrane
    bias: np.ndarray | None = None
    alpha: float = 0.9
    v_th: float = 1.0
    diffusion_d: float = 0.5
    kappa: float = 0.5
    recurrence: Recurrence = "membrane"
    surrogate: SurrogateSpec = DEFAULT_SURROGATE

    def __post_init__(self):
        n_in, four_h = np.shape(ad.value(self.w))
        hidden = four_h // 4
        if four_h != 4 * hidden:
            raise ValueError("w must have 4 * hidden columns")
        if np.shape(ad.value(self.u)) != (hidden, four_h):
            raise ValueError(f"u must be ({hidden}, {four_h})")
        if np.shape(ad.value(self.w_v)) != (n_in, hidden):
            raise ValueError(f"w_v must be ({n_in}, {hidden})")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.diffusion_d < 0:
            raise ValueError("diffusion_d must be non-negative")
        if self.recurrence not in ("membrane", "spike"):
            raise ValueError(f"unknown recurrence {self.recurrence!r}")

    @property
    def input_dim(self) -> int:
        return np.shape(ad.value(self.w))[0]

    @property
    def hidden_dim(self) -> int:
        return np.shape(ad.value(self.u))[0]

    def _block(self, mat, gate: str) -> np.ndarray:
        k = _GATES.index(gate)
        h = self.hidden_dim
        return ad.value(mat)[:, k * h : (k + 1) * h]

    w_i = property(lambda self: self._block(self.w, "i"))
    w_f = property(lambda self: self._block(self.w, "f"))
    w_g = property(lambda self: self._block(self.w, "g"))
    w_o = property(lambda self: self._block(self.w, "o"))
    u_i = property(lambda self: self._block(self.u, "i"))
    u_f = property(lambda self: self._block(self.u, "f"))
    u_g = property(lambda self: self._block(self.u, "g"))
    u_o = property(lambda self: self._block(self.u, "o"))

    @classmethod
    def from_gates(cls, w_i, w_f, w_g, w_o, u_i, u_f, u_g, u_o, w_v, **kwargs) -> "ASLSTMParams":
        w = np.concatenate([np.atleast_2d(m) for m in (w_i, w_f, w_o, w_g)], axis=1)
        u = np.concatenate([np.atleast_2d(m) for m in (u_i, u_f, u_o, u_g)], axis=1)
        return cls(w=w, u=u, w_v=np.atleast_2d(w_v), **kwargs)

    @classmethod
    def init(
        cls,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        use_bias: bool = False,
        **kwargs,
    ) -> "ASLSTMParams":
        return cls(
            w=_uniform(rng, input_dim, (input_dim, 4 * hidden_dim)),
            u=_uniform(rng, hidden_dim, (hidden_dim, 4 * hidden_dim)),
            w_v=_uniform(rng, input_dim, (input_dim, hidden_dim)),
            bias=np.zeros(4 * hidden_dim) if use_bias else None,
            **kwargs,
        )

    def arrays(self) -> dict[str, object]:
        out = {"w": self.w, "u": self.u, "w_v": self.w_v}
        if self.bias is not None:
            out["bias"] = self.bias
        return out


@dataclass
class ASLSTMState:
    c: np.ndarray
    h: np.ndarray
    v: np.ndarray
    s: np.ndarray
    v_prev: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v_prev is None:
            self.v_prev = np.zeros(np.shape(ad.value(self.v)))

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None) -> "ASLSTMState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        z = np.zeros(shape)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy())

    def detached(self) -> "ASLSTMState":
        """Same values with the recording history cut (truncated BPTT)."""
        return ASLSTMState(*(np.array(ad.value(a)) for a in (self.c, self.h, self.v, self.s, self.v_prev)))


@dataclass
class ReadoutParams:
    proj: np.ndarray  # (hidden, out)
    w_x: np.ndarray  # (input_dim, out)
    bias: np.ndarray  # (out,)
    kappa: float = 0.5
    diffusion_d: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")

    @classmethod
    def init(cls, hidden_dim: int, input_dim: int, out_dim: int, rng: np.random.Generator, **kwargs):
        return cls(
            proj=_uniform(rng, hidden_dim, (hidden_dim, out_dim)),
            w_x=_uniform(rng, max(input_dim, 1), (input_dim, out_dim)),
            bias=np.zeros(out_dim),
            **kwargs,
        )

    def arrays(self) -> dict[str, object]:
        return {"proj": self.proj, "w_x": self.w_x, "bias": self.bias}


@dataclass
class OutputReadout:
    value: np.ndarray
    kappa: float


def _check_input(x, params: ASLSTMParams) -> None:
    n = np.shape(ad.value(x))[-1]
    if n != params.input_dim:
        raise ValueError(f"input has {n} features, cell expects {params.input_dim}")


def alif_state_update(h, x, v_prev, s_prev, params: ASLSTMParams):
    """Membrane update of the cell's ALIF neurons.

    ``alpha * (1 - s_prev) * h + f(x + J)`` where ``f`` is the affine map
    ``w_v`` and the temporal self-diffusion ``J = D * v_prev`` enters after
    the map (hidden and input widths differ in general).
    """
    hidden = params.hidden_dim
    for name, a in (("h", h), ("v_prev", v_prev), ("s_prev", s_prev)):
        if np.shape(ad.value(a))[-1] != hidden:
            raise ValueError(f"{name} must have {hidden} features")
    _check_input(x, params)
    keep = params.alpha * (1.0 - ad.value(s_prev))
    v = keep * h + x @ params.w_v
    if params.diffusion_d != 0.0:
        v = v + params.diffusion_d * v_prev
    return v


def aslstm_step(state: ASLSTMState, x, params: ASLSTMParams) -> tuple[ASLSTMState, np.ndarray]:
    """Advance one ASLSTM cell by one time step."""
    _check_input(x, params)
    hd = params.hidden_dim
    if np.shape(ad.value(state.v))[-1] != hd:
        raise ValueError(f"state has width {np.shape(ad.value(state.v))[-1]}, cell expects {hd}")
    r = state.v if params.recurrence == "membrane" else ad.value(state.s)
    z = x @ params.w + r @ params.u
    if params.bias is not None:
        z = z + params.bias
    sig = ad.sigmoid(z[..., : 3 * hd])
    g = ad.tanh(z[..., 3 * hd :])
    i, f, o = sig[..., :hd], sig[..., hd : 2 * hd], sig[..., 2 * hd :]
    c = f * state.c + i * g
    h = o * ad.tanh(c)
    v = alif_state_update(h, x, state.v, state.s, params)
    s = spike(v, params.v_th, params.surrogate)
    return ASLSTMState(c, h, v, ad.value(s), state.v), s


def slstm_step(state: ASLSTMState, x, params: ASLSTMParams) -> tuple[ASLSTMState, np.ndarray]:
    """Baseline spiking LSTM: no diffusion and spike-driven gate recurrence."""
    return aslstm_step(state, x, as_slstm(params))


def as_slstm(params: ASLSTMParams) -> ASLSTMParams:
    return replace(params, diffusion_d=0.0, recurrence="spike")


def output_neuron(v_tf, x_tf, params: ReadoutParams, v_prev=None) -> OutputReadout:
    """Non-spiking readout engaged at the final time step."""
    drive = params.kappa * v_tf
    if v_prev is not None and params.diffusion_d != 0.0:
        drive = drive + params.diffusion_d * v_prev
    out = drive @ params.proj + x_tf @ params.w_x + params.bias
    return OutputReadout(out, params.kappa)


class ASLSTMRegressor:
    """Stacked ASLSTM layers with a membrane-potential readout.

    Layer ``k + 1`` consumes the membrane potentials of layer ``k``; the
    readout sees the top layer's potentials and the raw network input.
    With ``baseline="slstm"`` every layer runs as the SLSTM cell.
    """

    def __init__(
        self,
        input_dim: int = 1,
        hidden_dim: int = 64,
        output_dim: int = 1,
        n_layers: int = 2,
        seed: int = 0,
        alpha: float = 0.9,
        v_th: float = 1.0,
        diffusion_d: float = 0.5,
        kappa: float = 0.5,
        surrogate: SurrogateSpec = DEFAULT_SURROGATE,
        use_bias: bool = False,
        baseline: Literal["aslstm", "slstm"] = "aslstm",
    ):
        rng = np.random.default_rng(seed)
        self.baseline = baseline
        cell_kw = dict(alpha=alpha, v_th=v_th, diffusion_d=diffusion_d, kappa=kappa, surrogate=surrogate)
        if baseline == "slstm":
            cell_kw.update(diffusion_d=0.0, recurrence="spike")
        elif baseline != "aslstm":
            raise ValueError(f"unknown model kind {baseline!r}")
        self.layers: list[ASLSTMParams] = []
        dims = [input_dim] + [hidden_dim] * n_layers
        for k in range(n_layers):
            p = ASLSTMParams.init(dims[k], hidden_dim, rng, use_bias=use_bias, **cell_kw)
            self.layers.append(p)
        self.readout = ReadoutParams.init(
            hidden_dim, input_dim, output_dim, rng, kappa=kappa, diffusion_d=cell_kw["diffusion_d"]
        )
        self._wrap()

    def _wrap(self) -> None:
        for k, layer in enumerate(self.layers):
            for name, arr in layer.arrays().items():
                setattr(layer, name, ad.Parameter(ad.value(arr), name=f"layer{k}.{name}"))
        for name, arr in self.readout.arrays().items():
            setattr(self.readout, name, ad.Parameter(ad.value(arr), name=f"readout.{name}"))

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].hidden_dim

    def parameters(self) -> dict[str, ad.Parameter]:
        out = {}
        for k, layer in enumerate(self.layers):
            for name, p in layer.arrays().items():
                out[f"layer{k}.{name}"] = p
        for name, p in self.readout.arrays().items():
            out[f"readout.{name}"] = p
        return out

    def init_state(self, batch: int | None = None) -> list[ASLSTMState]:
        return [ASLSTMState.zeros(self.hidden_dim, batch) for _ in self.layers]

    def step(self, x, states: list[ASLSTMState]) -> tuple[object, list[ASLSTMState], list[np.ndarray]]:
        """One time step through every layer; returns (output, states, spikes)."""
        inp = x
        new_states, spikes = [], []
        for layer, st in zip(self.layers, states):
            st, s = aslstm_step(st, inp, layer)
            new_states.append(st)
            spikes.append(ad.value(s))
            inp = st.v
        top = new_states[-1]
        out = output_neuron(top.v, x, self.readout, v_prev=top.v_prev).value
        return out, new_states, spikes

    def run(self, inputs, states: list[ASLSTMState] | None = None):
        """Teacher-forced pass over a ``(steps, batch, input_dim)`` sequence.

        Returns the list of per-step outputs, the final states and the mean
        firing rate per layer.
        """
        steps = len(ad.value(inputs))
        if states is None:
            states = self.init_state(np.shape(ad.value(inputs))[1])
        outs = []
        rates = np.zeros(len(self.layers))
        for t in range(steps):
            out, states, spikes = self.step(inputs[t], states)
            outs.append(out)
            rates += [s.mean() for s in spikes]
        return outs, states, rates / max(steps, 1)
