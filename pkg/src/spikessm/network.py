"""Network assembly: stateless input/readout layers around stateful hidden
layers, dense synapses, batch normalization, dropout, and rate decoding.

A network maps a (B, T, c_in) sequence batch to per-step readout logits
(B, T, c_out).  Synaptic currents entering each hidden layer and the
readout are batch-normalized per channel over batch and time jointly.
Dropout acts on the spike tensors between hidden layers, train mode only.
Classification accumulates the readout over time and takes the argmax,
ties broken toward the lowest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .neuron import SsmNeuronLayerParams, build_layer, sequence_forward

CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    c_in: int
    c_out: int
    num_hidden_layers: int
    h: int
    n: int
    n_out: int
    activation: str = "nonsigned"
    regime: str = "stable"
    reset_enabled: bool = True
    dropout_rate: float = 0.0
    batch_norm: bool = True
    rho_init_re: float = 0.5
    rho_init_im: float = 0.0
    r_bias_init: float = 0.0
    surrogate_width: float = 0.5
    norm_mode: str = "complex"
    shared_reset: bool = False
    smooth: bool = False
    delta_min: float | None = None
    delta_max: float | None = None

    def __post_init__(self):
        counts = (self.c_in, self.c_out, self.num_hidden_layers,
                  self.h, self.n, self.n_out)
        if any(int(v) < 1 for v in counts):
            raise ValueError("all size counts must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def rho_init(self) -> complex:
        return complex(self.rho_init_re, self.rho_init_im)


class BatchNorm:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 name: str = "bn"):
        self.gamma = ad.parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = ad.parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self.name = name

    def forward(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        """Normalize (N, channels); train mode uses batch statistics and
        updates the running ones, eval mode uses the running statistics."""
        gamma, beta = self.gamma, self.beta
        if train:
            mean = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x.data - mean) * inv_std
            self.running_mean = (1 - self.momentum) * self.running_mean \
                + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var \
                + self.momentum * var
            data = gamma.data * x_hat + beta.data
            N = x.data.shape[0]

            def backward(g):
                if ad._wants_grad(gamma):
                    gamma.accumulate((g * x_hat).sum(axis=0))
                if ad._wants_grad(beta):
                    beta.accumulate(g.sum(axis=0))
                if ad._wants_grad(x):
                    g_hat = g * gamma.data
                    x.accumulate(inv_std / N * (
                        N * g_hat - g_hat.sum(axis=0)
                        - x_hat * (g_hat * x_hat).sum(axis=0)))

            return ad.custom_node(data, (x, gamma, beta), backward)

        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        x_hat = (x.data - self.running_mean) * inv_std
        data = gamma.data * x_hat + beta.data

        def backward(g):
            if ad._wants_grad(gamma):
                gamma.accumulate((g * x_hat).sum(axis=0))
            if ad._wants_grad(beta):
                beta.accumulate(g.sum(axis=0))
            if ad._wants_grad(x):
                x.accumulate(g * gamma.data * inv_std)

        return ad.custom_node(data, (x, gamma, beta), backward)


def batch_norm_step(bn: BatchNorm, x, mode: str = "train") -> ad.Tensor:
    """Normalize a (B, channels) batch in ``train`` or ``eval`` mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    return bn.forward(ad.as_tensor(x), train=(mode == "train"))


@dataclass
class ForwardRecords:
    """Everything the analysis tooling reads off one forward pass."""

    logits: np.ndarray                    # (B, T, c_out)
    spike_list: list                      # per layer (B, T, h, n_out)
    reset_flags: list                     # per layer (B, T, h)
    surrogate_hits: list
    reset_fires: list
    clip_events: list
    mask: np.ndarray | None = None
    states: list = field(default_factory=list)
    activation: str = "nonsigned"

    @property
    def spikes(self) -> np.ndarray:
        """Stacked (B, T, layers, h, n_out) spike record."""
        return np.stack(self.spike_list, axis=2)


class Network:
    """Input projection -> hidden SSM-neuron layers -> stateless readout."""

    def __init__(self, cfg: NetworkConfig, w_in, w_hidden, w_out,
                 layers, bns):
        self.cfg = cfg
        self.w_in = w_in
        self.w_hidden = w_hidden
        self.w_out = w_out
        self.layers: list[SsmNeuronLayerParams] = layers
        self.bns: list[BatchNorm] = bns
        self.channel_mask: np.ndarray | None = None

    def named_params(self):
        yield "w_in", self.w_in, "other"
        for idx, w in enumerate(self.w_hidden):
            yield f"w_hidden{idx}", w, "other"
        yield "w_out", self.w_out, "other"
        for bn in self.bns:
            yield f"{bn.name}.gamma", bn.gamma, "other"
            yield f"{bn.name}.beta", bn.beta, "other"
        for layer in self.layers:
            yield from layer.named_params()

    def param_tensors(self):
        return [t for _, t, _ in self.named_params()]

    def num_trainable(self) -> int:
        """Trainable real scalars; complex entries count twice, B excluded."""
        total = 0
        for _, t, _ in self.named_params():
            total += t.data.size * (2 if t.is_complex else 1)
        return total

    def zero_grad(self):
        for t in self.param_tensors():
            t.zero_grad()

    def set_smooth(self, smooth: bool):
        for layer in self.layers:
            layer.smooth = smooth

    def forward(self, batch, train: bool = False,
                rng: np.random.Generator | None = None,
                mask: np.ndarray | None = None,
                record_trajectory: bool = False):
        """Run the network; returns (logits Tensor (B,T,c_out), ForwardRecords)."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 3 or batch.shape[2] != self.cfg.c_in:
            raise ValueError(f"batch must be (B, T, {self.cfg.c_in})")
        if not np.all(np.isfinite(batch)):
            raise ValueError("non-finite values in input batch")
        B, T, _ = batch.shape
        cfg = self.cfg
        x = ad.Tensor(batch)

        cur = ad.linear(x, self.w_in)  # (B, T, h)
        spike_list, flag_list, states = [], [], []
        hits, fires, clips = [], [], []
        spikes_flat = None
        for idx, layer in enumerate(self.layers):
            if cfg.batch_norm:
                flat = ad.reshape(cur, (B * T, cfg.h))
                flat = self.bns[idx].forward(flat, train)
                cur = ad.reshape(flat, (B, T, cfg.h))
            spikes, state = sequence_forward(layer, cur,
                                             record_trajectory=record_trajectory)
            if self.channel_mask is not None:
                spikes = ad.mul(spikes, ad.Tensor(self.channel_mask))
            spike_list.append(spikes.data)
            flag_list.append(np.stack(state.reset_flags, axis=1))
            hits.append(state.surrogate_hits)
            fires.append(state.reset_fires)
            clips.append(state.clip_events)
            if record_trajectory:
                states.append(np.stack(state.v_trace, axis=1))
            spikes_flat = ad.reshape(spikes, (B, T, cfg.h * cfg.n_out))
            if idx < len(self.layers) - 1:
                nxt = spikes_flat
                if train and cfg.dropout_rate > 0.0:
                    if rng is None:
                        raise ValueError("dropout in train mode needs an rng")
                    keep = (rng.random(nxt.data.shape) >= cfg.dropout_rate)
                    scale = keep / (1.0 - cfg.dropout_rate)
                    nxt = ad.mul(nxt, ad.Tensor(scale))
                cur = ad.linear(nxt, self.w_hidden[idx])

        logits = ad.linear(spikes_flat, self.w_out)  # (B, T, c_out)
        if cfg.batch_norm:
            flat = ad.reshape(logits, (B * T, cfg.c_out))
            flat = self.bns[-1].forward(flat, train)
            logits = ad.reshape(flat, (B, T, cfg.c_out))

        records = ForwardRecords(
            logits=logits.data, spike_list=spike_list, reset_flags=flag_list,
            surrogate_hits=hits, reset_fires=fires, clip_events=clips,
            mask=mask, states=states, activation=cfg.activation)
        return logits, records


def build_network(cfg: NetworkConfig, seed: int) -> Network:
    """Initialize weights (uniform +-sqrt(1/fan_in)) and neuron layers."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(2 + (cfg.num_hidden_layers - 1))
    rngs = [np.random.default_rng(c) for c in children]
    layer_seeds = [int(np.random.default_rng(c).integers(1 << 30))
                   for c in ss.spawn(cfg.num_hidden_layers)]

    def uniform_fan_in(rng, shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    fan_hid = cfg.h * cfg.n_out
    w_in = ad.parameter(uniform_fan_in(rngs[0], (cfg.h, cfg.c_in), cfg.c_in),
                        name="w_in")
    w_hidden = [
        ad.parameter(uniform_fan_in(rngs[2 + i], (cfg.h, fan_hid), fan_hid),
                     name=f"w_hidden{i}")
        for i in range(cfg.num_hidden_layers - 1)
    ]
    w_out = ad.parameter(uniform_fan_in(rngs[1], (cfg.c_out, fan_hid), fan_hid),
                         name="w_out")
    layers = [
        build_layer(cfg.h, cfg.n, cfg.n_out, seed=layer_seeds[i],
                    activation=cfg.activation, regime=cfg.regime,
                    reset_enabled=cfg.reset_enabled, rho_init=cfg.rho_init,
                    r_bias_init=cfg.r_bias_init, delta_min=cfg.delta_min,
                    delta_max=cfg.delta_max,
                    surrogate_width=cfg.surrogate_width, smooth=cfg.smooth,
                    norm_mode=cfg.norm_mode, shared_reset=cfg.shared_reset,
                    name=f"hidden{i}")
        for i in range(cfg.num_hidden_layers)
    ]
    bns = []
    if cfg.batch_norm:
        bns = [BatchNorm(cfg.h, name=f"bn{i}")
               for i in range(cfg.num_hidden_layers)]
        bns.append(BatchNorm(cfg.c_out, name="bn_out"))
    return Network(cfg, w_in, w_hidden, w_out, layers, bns)


def time_accumulate(logits: ad.Tensor, mask: np.ndarray | None = None) -> ad.Tensor:
    """Sum per-step readout over (valid) timesteps: (B,T,C) -> (B,C)."""
    if mask is None:
        return ad.tsum(logits, axis=1)
    return ad.einsum2("btc,bt->bc", logits, ad.Tensor(mask))


def rate_decode(logits_over_time: np.ndarray,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Class per sample: argmax of the time-accumulated readout.

    Ties break toward the lowest class index.  ``logits_over_time`` is
    (B, T, c_out) or already-accumulated (B, c_out).
    """
    arr = np.asarray(logits_over_time, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[1] < 1:
            raise ValueError("need at least one timestep")
        if mask is not None:
            arr = np.einsum("btc,bt->bc", arr, np.asarray(mask, dtype=np.float64))
        else:
            arr = arr.sum(axis=1)
    return np.argmax(arr, axis=-1)


# ---------------------------------------------------------------------------
# checkpointing


def _config_to_dict(cfg: NetworkConfig) -> dict:
    return asdict(cfg)


def save_checkpoint(net: Network, path, extra: dict | None = None):
    """Versioned container with parameters, running stats, config echo, and
    caller metadata (e.g. RNG state); round-trips bit-exactly."""
    arrays = {}
    for name, tensor, _ in net.named_params():
        arrays[f"param/{name}"] = tensor.data
    for layer in net.layers:
        arrays[f"fixed/{layer.name}.b"] = layer.b.data
    for bn in net.bns:
        arrays[f"buffer/{bn.name}.running_mean"] = bn.running_mean
        arrays[f"buffer/{bn.name}.running_var"] = bn.running_var
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": _config_to_dict(net.cfg),
        "extra": extra or {},
    }
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild a Network from a checkpoint; returns (net, extra_metadata)."""
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = NetworkConfig(**meta["config"])
        net = build_network(cfg, seed=0)
        for name, tensor, _ in net.named_params():
            tensor.data = np.array(blob[f"param/{name}"])
        for layer in net.layers:
            layer.b.data = np.array(blob[f"fixed/{layer.name}.b"])
        for bn in net.bns:
            bn.running_mean = np.array(blob[f"buffer/{bn.name}.running_mean"])
            bn.running_var = np.array(blob[f"buffer/{bn.name}.running_var"])
    return net, meta["extra"]
