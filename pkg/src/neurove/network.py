"""Spiking feature extractor + ASLSTM velocity estimator.

Data flow for one batch::

    spikes [T, B, 2n, H, W]
      -> N x (conv -> batch norm -> LIF)        feature_extract
      -> flatten                    [T, B, F]
      -> stacked ASLSTM cells over T            estimate_velocity
      -> output neuron at t_f, head width n*6
      -> velocities                 [B, n, 6]

Every layer finishes all ``T`` steps before the next layer starts. The
resulting values are identical to a step-interleaved schedule (each layer only
looks at the past of the layer below), but it lets the convolutions and batch
norms run over the merged ``T * B`` axis in one call.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets.poses import VelocityRecord
from .neuron import DEFAULT_SURROGATE, NeuronParams, NeuronState, SurrogateSpec, lif_step
from .recurrent import ASLSTMParams, ASLSTMState, ReadoutParams, aslstm_step, output_neuron


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    out_channels: int
    kernel_size: int = 3
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid block {self}")


@dataclass(frozen=True)
class FeatureExtractorConfig:
    blocks: tuple[BlockConfig, ...] = tuple(BlockConfig(c) for c in (16, 32, 64, 128))
    in_channels: int = 10
    sensor_h: int = 64
    sensor_w: int = 64
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    alpha: float = 0.9
    v_th: float = 1.0
    pool: int = 0  # >0: average the last spike maps onto a pool x pool grid

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ConfigError("the extractor needs at least one block")
        if self.pool < 0:
            raise ConfigError("pool must be non-negative")
        object.__setattr__(self, "blocks", tuple(b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.blocks))

    @classmethod
    def uniform(cls, channels: Sequence[int], kernel_size=3, stride=2, padding=1, **kw) -> "FeatureExtractorConfig":
        return cls(blocks=tuple(BlockConfig(c, kernel_size, stride, padding) for c in channels), **kw)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def output_shapes(self) -> list[tuple[int, int, int]]:
        """(C, H, W) after every block; raises when the map is exhausted."""
        c, h, w = self.in_channels, self.sensor_h, self.sensor_w
        out = []
        for k, b in enumerate(self.blocks):
            h = ad.conv_output_size(h, b.kernel_size, b.stride, b.padding)
            w = ad.conv_output_size(w, b.kernel_size, b.stride, b.padding)
            if h < 1 or w < 1:
                raise ConfigError(f"block {k} leaves no spatial extent (kernel larger than padded input)")
            c = b.out_channels
            out.append((c, h, w))
        return out

    @property
    def feature_dim(self) -> int:
        c, h, w = self.output_shapes()[-1]
        if self.pool:
            if h % self.pool or w % self.pool:
                raise ConfigError(f"pool grid {self.pool} does not divide the {h}x{w} feature map")
            return c * self.pool * self.pool
        return c * h * w


@dataclass(frozen=True)
class EstimatorConfig:
    hidden_dim: int = 64
    n_layers: int = 1
    n_bins: int = 5
    alpha: float = 0.9
    v_th: float = 1.0
    diffusion_d: float = 0.5
    kappa: float = 0.5
    use_bias: bool = False

    def __post_init__(self):
        if self.hidden_dim < 1 or self.n_layers < 1 or self.n_bins < 1:
            raise ConfigError("estimator dims must be positive")


@dataclass
class ExtractorBlock:
    weight: ad.Parameter
    bias: ad.Parameter
    gamma: ad.Parameter
    beta: ad.Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    cfg: BlockConfig


@dataclass
class NeuroVEModel:
    extractor_cfg: FeatureExtractorConfig
    estimator_cfg: EstimatorConfig
    blocks: list[ExtractorBlock]
    cells: list[ASLSTMParams]
    head: ReadoutParams
    surrogate: SurrogateSpec = DEFAULT_SURROGATE
    output_scale: np.ndarray = field(default_factory=lambda: np.ones(6))
    seed: int = 0

    @property
    def n_bins(self) -> int:
        return self.estimator_cfg.n_bins

    def parameters(self) -> dict[str, ad.Parameter]:
        out = {}
        for k, b in enumerate(self.blocks):
            for name in ("weight", "bias", "gamma", "beta"):
                out[f"extractor.{k}.{name}"] = getattr(b, name)
        for k, cell in enumerate(self.cells):
            for name, p in cell.arrays().items():
                out[f"estimator.{k}.{name}"] = p
        for name, p in self.head.arrays().items():
            out[f"head.{name}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, b in enumerate(self.blocks):
            out[f"extractor.{k}.running_mean"] = b.running_mean
            out[f"extractor.{k}.running_var"] = b.running_var
        out["output_scale"] = self.output_scale
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def config_dict(self) -> dict:
        return {
            "extractor": asdict(self.extractor_cfg),
            "estimator": asdict(self.estimator_cfg),
            "surrogate": asdict(self.surrogate),
            "seed": self.seed,
        }


def _uniform(rng, fan_in, shape):
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, size=shape)


def build_model(
    extractor_cfg: FeatureExtractorConfig | None = None,
    estimator_cfg: EstimatorConfig | None = None,
    seed: int = 0,
    surrogate: SurrogateSpec = DEFAULT_SURROGATE,
) -> NeuroVEModel:
    """Deterministic initialisation from ``seed``."""
    ecfg = extractor_cfg or FeatureExtractorConfig()
    scfg = estimator_cfg or EstimatorConfig()
    shapes = ecfg.output_shapes()  # validates the geometry first
    rng = np.random.default_rng(seed)
    blocks = []
    c_in = ecfg.in_channels
    for k, (b, (c, _, _)) in enumerate(zip(ecfg.blocks, shapes)):
        fan_in = c_in * b.kernel_size**2
        blocks.append(
            ExtractorBlock(
                weight=ad.Parameter(_uniform(rng, fan_in, (c, c_in, b.kernel_size, b.kernel_size)), f"extractor.{k}.weight"),
                bias=ad.Parameter(np.zeros(c), f"extractor.{k}.bias"),
                gamma=ad.Parameter(np.ones(c), f"extractor.{k}.gamma"),
                beta=ad.Parameter(np.zeros(c), f"extractor.{k}.beta"),
                running_mean=np.zeros(c),
                running_var=np.ones(c),
                cfg=b,
            )
        )
        c_in = c
    feat = ecfg.feature_dim
    cells = []
    dims = [feat] + [scfg.hidden_dim] * scfg.n_layers
    for k in range(scfg.n_layers):
        cell = ASLSTMParams.init(
            dims[k], scfg.hidden_dim, rng, use_bias=scfg.use_bias,
            alpha=scfg.alpha, v_th=scfg.v_th, diffusion_d=scfg.diffusion_d, kappa=scfg.kappa, surrogate=surrogate,
        )
        for name, arr in cell.arrays().items():
            setattr(cell, name, ad.Parameter(arr, f"estimator.{k}.{name}"))
        cells.append(cell)
    head = ReadoutParams.init(scfg.hidden_dim, feat, 6 * scfg.n_bins, rng, kappa=scfg.kappa, diffusion_d=scfg.diffusion_d)
    for name, arr in head.arrays().items():
        setattr(head, name, ad.Parameter(arr, f"head.{name}"))
    return NeuroVEModel(ecfg, scfg, blocks, cells, head, surrogate, np.ones(6), seed)


@dataclass
class ForwardResult:
    velocity: object  # [B, n, 6], Tensor while recording
    rates: dict[str, float]  # mean firing rate per spiking layer
    schedule: list[tuple[str, int]]  # (layer, time step) in execution order

    def records(self, t0: float = 0.0, bin_duration: float = 0.0) -> list[list[VelocityRecord]]:
        """Per-sample lists of :class:`VelocityRecord`, one per output row."""
        vel = ad.value(self.velocity)
        return [
            [VelocityRecord(t0 + (j + 0.5) * bin_duration, row[:3].copy(), row[3:].copy(), j) for j, row in enumerate(sample)]
            for sample in vel
        ]


def feature_extract(model: NeuroVEModel, spikes, training: bool = False, telemetry: ForwardResult | None = None):
    """``[T, B, 2n, H, W]`` binary input to ``[T, B, F]`` features.

    Features are the last block's spikes, or their pooled rates when
    ``pool`` is set.
    """
    x = spikes if isinstance(spikes, ad.Tensor) else np.asarray(spikes, dtype=np.float64)
    shape = np.shape(ad.value(x))
    ecfg = model.extractor_cfg
    if len(shape) != 5:
        raise ValueError(f"expected a [T, B, C, H, W] tensor, got shape {shape}")
    if shape[2:] != (ecfg.in_channels, ecfg.sensor_h, ecfg.sensor_w):
        raise ValueError(f"input {shape[2:]} does not match extractor ({ecfg.in_channels}, {ecfg.sensor_h}, {ecfg.sensor_w})")
    T, B = shape[:2]
    lif = NeuronParams(alpha=ecfg.alpha, v_th=ecfg.v_th, diffusion_d=0.0)
    for k, blk in enumerate(model.blocks):
        c, h, w = np.shape(ad.value(x))[2:]
        z = ad.conv2d(ad.reshape(x, (T * B, c, h, w)), blk.weight, blk.bias, blk.cfg.stride, blk.cfg.padding)
        z = ad.batch_norm(z, blk.gamma, blk.beta, blk.running_mean, blk.running_var, training, ecfg.bn_momentum, ecfg.bn_epsilon)
        z = ad.reshape(z, (T, B) + np.shape(ad.value(z))[1:])
        state = NeuronState.zeros(np.shape(ad.value(z))[1:])
        out = []
        for t in range(T):
            state, s = lif_step(state, z[t], lif, model.surrogate)
            out.append(s)
            if telemetry is not None:
                telemetry.schedule.append((f"extractor.{k}", t))
        x = ad.stack(out)
        if telemetry is not None:
            telemetry.rates[f"extractor.{k}"] = float(ad.value(x).mean())
    if ecfg.pool:
        c, h, w = np.shape(ad.value(x))[2:]
        p = ecfg.pool
        x = ad.mean(ad.reshape(x, (T, B, c, p, h // p, p, w // p)), axis=(4, 6))
    return ad.reshape(x, (T, B, -1))


def estimate_velocity(model: NeuroVEModel, features, telemetry: ForwardResult | None = None):
    """``[T, B, F]`` features to ``[B, n, 6]`` velocities."""
    shape = np.shape(ad.value(features))
    if len(shape) != 3 or shape[2] != model.cells[0].input_dim:
        raise ValueError(f"features {shape} do not match estimator input width {model.cells[0].input_dim}")
    T, B = shape[:2]
    seq = [features[t] for t in range(T)]
    state = None
    for k, cell in enumerate(model.cells):
        state = ASLSTMState.zeros(cell.hidden_dim, B)
        out, fired = [], 0.0
        for t in range(T):
            state, s = aslstm_step(state, seq[t], cell)
            out.append(state.v)
            fired += float(ad.value(s).mean())
            if telemetry is not None:
                telemetry.schedule.append((f"estimator.{k}", t))
        if telemetry is not None:
            telemetry.rates[f"estimator.{k}"] = fired / max(T, 1)
        seq = out
    readout = output_neuron(state.v, features[T - 1], model.head, v_prev=state.v_prev)
    vel = ad.reshape(readout.value, (B, model.n_bins, 6))
    return vel * model.output_scale


def forward(model: NeuroVEModel, spikes, training: bool = False) -> ForwardResult:
    res = ForwardResult(None, {}, [])
    shape = np.shape(ad.value(spikes))
    if len(shape) == 5 and shape[1] == 0:
        res.velocity = np.zeros((0, model.n_bins, 6))
        return res
    feats = feature_extract(model, spikes, training, res)
    res.velocity = estimate_velocity(model, feats, res)
    return res


# -- checkpoints ------------------------------------------------------------------


def model_from_config(cfg: dict) -> NeuroVEModel:
    ex = dict(cfg["extractor"])
    ex["blocks"] = tuple(BlockConfig(**b) for b in ex["blocks"])
    return build_model(
        FeatureExtractorConfig(**ex), EstimatorConfig(**cfg["estimator"]), cfg.get("seed", 0), SurrogateSpec(**cfg["surrogate"])
    )


def model_state(model: NeuroVEModel) -> dict[str, np.ndarray]:
    out = {k: p.data for k, p in model.parameters().items()}
    out.update(model.buffers())
    return out


def load_model_state(model: NeuroVEModel, tensors: dict[str, np.ndarray]) -> None:
    params = model.parameters()
    for k, p in params.items():
        if k not in tensors:
            raise KeyError(f"checkpoint lacks {k}")
        if tensors[k].shape != p.data.shape:
            raise ValueError(f"{k}: shape {tensors[k].shape} != {p.data.shape}")
        p.data[...] = tensors[k]
    for k, buf in model.buffers().items():
        buf[...] = tensors[k]


def save_model(model: NeuroVEModel, path, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = model_state(model)
    tensors.update(extra or {})
    save_checkpoint(Checkpoint("neurove", model.config_dict(), tensors, meta or {}), path)


def load_model(path) -> tuple[NeuroVEModel, Checkpoint]:
    ck = load_checkpoint(path)
    if ck.kind != "neurove":
        raise ValueError(f"{path} holds a {ck.kind!r} checkpoint, not a velocity model")
    model = model_from_config(ck.config)
    load_model_state(model, ck.tensors)
    return model, ck
