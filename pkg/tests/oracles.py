"""Finite-difference gradient oracles shared by the unit and acceptance tests."""

import numpy as np

from neurove import autodiff as ad
from neurove.neuron import NeuronParams, NeuronState, SurrogateSpec, heaviside, lif_step, surrogate_primitive
from neurove.recurrent import ASLSTMRegressor


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def central_diff(f, arrays, eps):
    """Gradient of ``f()`` w.r.t. every entry of ``arrays`` (edited in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + eps
            up = f()
            a[i] = old - eps
            dn = f()
            a[i] = old
            g[i] = (up - dn) / (2 * eps)
        out.append(g)
    return out


def smooth_case(seed: int, steps: int = 12):
    """Two-layer ASLSTM regressor whose threshold is never reached.

    Returns (analytic, numeric, n_params)."""
    rng = np.random.default_rng(seed)
    model = ASLSTMRegressor(hidden_dim=3, n_layers=2, seed=seed, v_th=1e6, diffusion_d=float(rng.uniform(0.1, 0.9)))
    params = model.parameters()
    x = rng.normal(size=(steps, 2, 1))
    y = rng.normal(size=(steps, 2, 1))

    def loss_value():
        outs, _, _ = model.run(x)
        return float(np.mean((np.stack(outs) - y) ** 2))

    with ad.Tape() as tape:
        outs, _, rates = model.run(x)
        loss = ad.mean(ad.square(ad.stack(outs) - y))
    assert not np.any(rates), "threshold was reached; the case is not smooth"
    analytic = tape.backward(loss, list(params.values()))
    numeric = central_diff(loss_value, [p.data for p in params.values()], 1e-6)
    n = sum(p.data.size for p in params.values())
    return np.concatenate([a.ravel() for a in analytic]), np.concatenate([g.ravel() for g in numeric]), n


def surrogate_case(seed: int, kind: str = "rectangular", steps: int = 15):
    """Spiking toy net: smooth pre-layer, input map, one LIF layer, fixed
    linear readout of the spikes.

    The oracle forward replaces the emitted spikes by the surrogate
    antiderivative while the reset keeps the hard Heaviside, mirroring the
    straight-through treatment of the reset in the backward pass. The readout
    is linear with fixed weights so that the upstream gradient does not depend
    on whether hard or smoothed spikes were emitted.
    Returns (analytic, numeric, n_params)."""
    rng = np.random.default_rng(seed)
    n_in, n_mid, hidden, batch = 3, 5, 10, 4
    spec = SurrogateSpec(kind, 1.0)
    lif = NeuronParams(alpha=0.8, v_th=1.0)
    w0 = rng.normal(0, 0.8, size=(n_in, n_mid))
    w1 = rng.normal(0, 0.8, size=(n_mid, hidden))
    c = rng.normal(size=(steps, batch, hidden))
    x = rng.uniform(-1, 1, size=(steps, batch, n_in))

    def oracle():
        v = np.zeros((batch, hidden))
        s_hard = np.zeros_like(v)
        total = 0.0
        for t in range(steps):
            v = lif.alpha * (1 - s_hard) * v + np.tanh(x[t] @ w0) @ w1
            total += float(np.sum(surrogate_primitive(v, lif.v_th, spec) * c[t]))
            s_hard = heaviside(v, lif.v_th)
        return total

    p0, p1 = ad.Parameter(w0), ad.Parameter(w1)
    with ad.Tape() as tape:
        state = NeuronState.zeros((batch, hidden))
        loss = 0.0
        fired = 0.0
        for t in range(steps):
            state, s = lif_step(state, ad.matmul(ad.tanh(ad.matmul(x[t], p0)), p1), lif, spec)
            loss = loss + ad.sum(s * c[t])
            fired += float(np.mean(ad.value(s)))
    analytic = tape.backward(loss, [p0, p1])
    numeric = central_diff(oracle, [w0, w1], 1e-7)
    assert fired > 0, "no spikes; the case does not exercise the surrogate"
    return np.concatenate([a.ravel() for a in analytic]), np.concatenate([g.ravel() for g in numeric]), w0.size + w1.size
