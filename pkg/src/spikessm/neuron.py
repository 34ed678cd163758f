"""Multiple-output SSM neurons with a decoupled, learnable reset.

Each of the ``h`` neurons in a hidden layer carries a complex state
``v in C^n`` evolving under diagonal linear dynamics, projects it to
``n_out`` complex outputs, spikes elementwise on the real transformation
``z = Re(y) + Im(y)``, and independently discharges its state through a
norm-based reset condition:

    v[t+1] = Lambda * v[t] + B i[t]
    y[t]   = C v[t] + c_bias
    s[t]   = f(z[t])                         (threshold 1, elementwise)
    v[t+1] = rho * v[t+1]   if  ||y[t]||_2 / n_out + r_bias >= 1

Spiking uses a strict ``>``; the reset condition uses ``>=``.  Both hard
thresholds backpropagate through a boxcar surrogate.  The reset multiplexer
passes gradients through the selected branch only, while the condition's
gradient reaches ``y`` (and ``r_bias``) via the surrogate.  In the unstable
regime, state moduli are clipped to ``STATE_CLIP`` after the reset branch,
with gradients zeroed where the clip engaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .initialization import InitConfig, init_eigenvalues, init_projection

STATE_CLIP = 1000.0
ACTIVATIONS = ("nonsigned", "signed", "gelu")
NORM_MODES = ("complex", "real_sum")


class DivergenceError(RuntimeError):
    """Non-finite values appeared in a state, loss, or gradient."""

    def __init__(self, message: str, layer: str = "", timestep: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.timestep = timestep


@dataclass
class SsmNeuronLayerParams:
    """Parameter store and configuration of one hidden layer of neurons.

    ``lam``, ``c``, ``c_bias``, ``rho`` are complex trainable tensors;
    ``r_bias`` is real trainable; ``b`` is fixed to ones and excluded from
    gradient updates but kept in the store (the neuron model counts it).
    ``rho``/``r_bias`` are per-neuron, shape (h,), or shape (1,) when
    ``shared_reset`` collapses them to a single per-layer pair.
    """

    h: int
    n: int
    n_out: int
    lam: ad.Tensor
    b: ad.Tensor
    c: ad.Tensor
    c_bias: ad.Tensor
    rho: ad.Tensor
    r_bias: ad.Tensor
    activation: str = "nonsigned"
    regime: str = "stable"
    reset_enabled: bool = True
    surrogate_width: float = 0.5
    smooth: bool = False
    norm_mode: str = "complex"
    shared_reset: bool = False
    name: str = "layer"

    def named_params(self):
        """Trainable tensors with their optimizer group tags (B excluded)."""
        yield f"{self.name}.lambda", self.lam, "ssm"
        yield f"{self.name}.c", self.c, "ssm"
        yield f"{self.name}.c_bias", self.c_bias, "ssm"
        yield f"{self.name}.rho", self.rho, "rho"
        yield f"{self.name}.r_bias", self.r_bias, "r_bias"

    def store_arrays(self):
        """Every array in the neuron parameter store, fixed ones included."""
        return {
            f"{self.name}.lambda": self.lam,
            f"{self.name}.b": self.b,
            f"{self.name}.c": self.c,
            f"{self.name}.c_bias": self.c_bias,
            f"{self.name}.rho": self.rho,
            f"{self.name}.r_bias": self.r_bias,
        }


@dataclass
class LayerState:
    """Running state plus per-step records of one sequence pass."""

    v: ad.Tensor  # (B, h, n) complex
    spikes: list = field(default_factory=list)       # per-step (B, h, n_out)
    reset_flags: list = field(default_factory=list)  # per-step (B, h) float
    y_trace: list = field(default_factory=list)      # optional (B, h, n_out)
    z_trace: list = field(default_factory=list)
    v_trace: list = field(default_factory=list)      # optional (B, h, n)
    surrogate_hits: int = 0
    reset_fires: int = 0
    clip_events: int = 0


def build_layer(h: int, n: int, n_out: int, seed: int, *,
                activation: str = "nonsigned", regime: str = "stable",
                reset_enabled: bool = True, rho_init: complex = 0.5,
                r_bias_init: float = 0.0, delta_min: float | None = None,
                delta_max: float | None = None, surrogate_width: float = 0.5,
                smooth: bool = False, norm_mode: str = "complex",
                shared_reset: bool = False,
                name: str = "layer") -> SsmNeuronLayerParams:
    """Construct an initialized layer: eigenvalues from the diagonal-SSM
    scheme (destabilized in the unstable regime), C standard-normal,
    c_bias zero, B fixed ones."""
    if min(h, n, n_out) < 1:
        raise ValueError("h, n, n_out must all be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if norm_mode not in NORM_MODES:
        raise ValueError(f"unknown norm_mode {norm_mode!r}")
    init_kw = {}
    if delta_min is not None:
        init_kw["delta_min"] = delta_min
    if delta_max is not None:
        init_kw["delta_max"] = delta_max
    cfg = InitConfig(n=n, seed=seed, regime=regime, num_neurons=h, **init_kw)
    lam = init_eigenvalues(cfg)
    c, c_bias = init_projection(n, n_out, seed=seed + 1, num_neurons=h)
    reset_shape = (1,) if shared_reset else (h,)
    return SsmNeuronLayerParams(
        h=h, n=n, n_out=n_out,
        lam=ad.parameter(lam, name=f"{name}.lambda"),
        b=ad.Tensor(np.ones((h, n))),
        c=ad.parameter(c, name=f"{name}.c"),
        c_bias=ad.parameter(c_bias, name=f"{name}.c_bias"),
        rho=ad.parameter(np.full(reset_shape, rho_init, dtype=np.complex128),
                         name=f"{name}.rho"),
        r_bias=ad.parameter(np.full(reset_shape, float(r_bias_init)),
                            name=f"{name}.r_bias"),
        activation=activation, regime=regime, reset_enabled=reset_enabled,
        surrogate_width=surrogate_width, smooth=smooth, norm_mode=norm_mode,
        shared_reset=shared_reset, name=name,
    )


def init_state(params: SsmNeuronLayerParams, batch: int,
               v0: np.ndarray | None = None) -> LayerState:
    """Fresh state, zeros unless an explicit ``v0`` is given."""
    if v0 is None:
        v = np.zeros((batch, params.h, params.n), dtype=np.complex128)
    else:
        v0 = np.asarray(v0, dtype=np.complex128)
        if v0.shape == (params.h, params.n):
            v0 = np.broadcast_to(v0, (batch, params.h, params.n))
        v = np.array(v0, copy=True)
        if v.shape != (batch, params.h, params.n):
            raise ValueError("v0 shape mismatch")
    return LayerState(v=ad.Tensor(v))


# ---------------------------------------------------------------------------
# the four constituent operations of one step


def state_transition(params: SsmNeuronLayerParams, v, i) -> ad.Tensor:
    """``v' = Lambda * v + B * i`` elementwise over the diagonal dynamics.

    ``v`` is (B, h, n) complex, ``i`` is (B, h) real.
    """
    v = ad.as_tensor(v)
    i = ad.as_tensor(i)
    if not np.all(np.isfinite(i.data)):
        raise DivergenceError("non-finite input current", layer=params.name)
    i_col = ad.expand_last(i)
    if np.all(params.b.data == 1.0):
        inp = i_col  # B is ones: multiplying is an exact no-op
    else:
        inp = ad.mul(params.b, i_col)
    return ad.add(ad.mul(params.lam, v), inp)


def output_projection(params: SsmNeuronLayerParams, v):
    """``y = C v + c_bias`` and its real transformation ``z = Re(y)+Im(y)``."""
    v = ad.as_tensor(v)
    y = ad.add(ad.einsum2("hon,bhn->bho", params.c, v), params.c_bias)
    z = ad.add(ad.real(y), ad.imag(y))
    return y, z


def spike(z, activation: str, *, w: float = 0.5, smooth: bool = False) -> ad.Tensor:
    """Elementwise activation at threshold 1: {0,1}, {-1,0,1}, or GELU."""
    if activation == "nonsigned":
        return ad.heaviside(z, 1.0, w=w, smooth=smooth)
    if activation == "signed":
        return ad.signed_spike(z, 1.0, w=w, smooth=smooth)
    if activation == "gelu":
        return ad.gelu(z)
    raise ValueError(f"unknown activation {activation!r}")


def _reset_condition_parts(params: SsmNeuronLayerParams, y):
    y = ad.as_tensor(y)
    if params.norm_mode == "real_sum":
        y = ad.add(ad.real(y), ad.imag(y))
    norm = ad.l2_norm(y, axis=-1)
    cond_val = ad.add(ad.mul(norm, 1.0 / params.n_out), params.r_bias)
    cond = ad.heaviside(cond_val, 1.0, w=params.surrogate_width,
                        smooth=params.smooth, at_least=True)
    return cond, cond_val


def reset_condition(params: SsmNeuronLayerParams, y) -> ad.Tensor:
    """Norm condition ``||y||_2 / n_out + r_bias >= 1`` as a 0/1 tensor.

    The norm is the complex Euclidean norm of ``y`` by default; the
    ``real_sum`` mode applies it to ``z = Re(y) + Im(y)`` instead.
    """
    cond, _ = _reset_condition_parts(params, y)
    return cond


def reset_action(params: SsmNeuronLayerParams, v) -> ad.Tensor:
    """Scale every state component by the learnable reset value ``rho``."""
    if not params.reset_enabled:
        raise ValueError("reset_action called with reset disabled")
    rho = ad.reshape(params.rho, params.rho.shape + (1,))
    return ad.mul(ad.as_tensor(v), rho)


# ---------------------------------------------------------------------------
# stepping


def layer_step(params: SsmNeuronLayerParams, state: LayerState, inputs,
               t: int = 0, record_trajectory: bool = False):
    """One full step: transition, projection, spike, conditional reset.

    ``inputs`` is (B, h) or (h,); returns the updated state and the spike
    tensor of shape (B, h, n_out).  The reset of the post-transition state
    is gated on the condition evaluated at the current output ``y[t]``.
    """
    inputs = ad.as_tensor(inputs)
    if inputs.data.ndim == 1:
        inputs = ad.reshape(inputs, (1, -1))
    v = state.v
    y, z = output_projection(params, v)
    s = spike(z, params.activation, w=params.surrogate_width, smooth=params.smooth)
    v_next = state_transition(params, v, inputs)

    if params.reset_enabled:
        cond, cond_val = _reset_condition_parts(params, y)
        rho_m1 = ad.sub(params.rho, 1.0)
        factor = ad.add(1.0, ad.mul(cond, rho_m1))  # rho where firing, 1 elsewhere
        v_next = ad.mul(v_next, ad.expand_last(factor))
        cond_data = cond.data
        state.reset_fires += int(np.count_nonzero(cond_data))
        state.surrogate_hits += int(np.count_nonzero(
            np.abs(cond_val.data - 1.0) <= params.surrogate_width))
    else:
        cond_data = np.zeros(v_next.data.shape[:2])

    if params.regime == "unstable":
        state.clip_events += int(np.count_nonzero(
            np.abs(v_next.data) > STATE_CLIP))
        v_next = ad.modulus_clip(v_next, STATE_CLIP)

    if not np.all(np.isfinite(v_next.data.view(np.float64))):
        raise DivergenceError(
            f"non-finite state in {params.name} at timestep {t} "
            f"(regime={params.regime}, reset={params.reset_enabled})",
            layer=params.name, timestep=t)

    state.v = v_next
    state.spikes.append(s)
    state.reset_flags.append(cond_data)
    if record_trajectory:
        state.y_trace.append(y.data.copy())
        state.z_trace.append(z.data.copy())
        state.v_trace.append(v_next.data.copy())
    return state, s


def sequence_forward(params: SsmNeuronLayerParams, input_seq,
                     v0: np.ndarray | None = None,
                     record_trajectory: bool = False):
    """Unroll the layer over a (B, T, h) or (T, h) input current sequence.

    Returns the stacked spike tensor (B, T, h, n_out) and the final
    LayerState whose per-step records the analysis tooling consumes.
    """
    seq = ad.as_tensor(input_seq)
    if seq.data.ndim == 2:
        seq = ad.reshape(seq, (1,) + seq.data.shape)
    if seq.data.ndim != 3:
        raise ValueError("input sequence must be (B, T, h) or (T, h)")
    batch, steps, width = seq.data.shape
    if width != params.h:
        raise ValueError(f"expected {params.h} input channels, got {width}")
    if steps < 1:
        raise ValueError("need at least one timestep")
    state = init_state(params, batch, v0=v0)
    if record_trajectory:
        state.v_trace.append(state.v.data.copy())
    for t in range(steps):
        layer_step(params, state, ad.index_time(seq, t), t=t,
                   record_trajectory=record_trajectory)
    spikes = ad.stack(state.spikes, axis=1)
    return spikes, state
