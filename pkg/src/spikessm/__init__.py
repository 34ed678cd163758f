"""Multiple-output spiking neurons with linear complex-diagonal state-space
dynamics and a learnable nonlinear reset, plus the classical neurons they
generalize and a full surrogate-gradient BPTT training stack."""

from .analysis import (
    CostReport,
    accuracy_over_time,
    count_params,
    count_reset_macs,
    drop_channels,
    spike_rate,
)
from .autodiff import Tape, Tensor, finite_difference_grad, no_grad
from .classic import (
    AdLifParams,
    GeneralNeuronParams,
    LifParams,
    adlif_as_general,
    adlif_step,
    general_step,
    hard_reset_step,
    lif_as_general,
    lif_step,
)
from .data import (
    SequenceDataset,
    load_binned_spikes,
    load_smnist,
    save_binned_spikes,
    sum_bin,
    synth_pattern_task,
)
from .initialization import (
    InitConfig,
    clip_eigenvalues,
    destabilize,
    init_projection,
    s4d_lin_init,
)
from .network import (
    Network,
    NetworkConfig,
    batch_norm_step,
    build_network,
    load_checkpoint,
    rate_decode,
    save_checkpoint,
)
from .neuron import (
    DivergenceError,
    LayerState,
    SsmNeuronLayerParams,
    build_layer,
    layer_step,
    reset_action,
    reset_condition,
    sequence_forward,
    spike,
    state_transition,
)
from .training import (
    FitConfig,
    GroupHyper,
    ParamGroups,
    TrainState,
    adamw_step,
    bptt_backward,
    clip_gradients,
    cosine_lr,
    cross_entropy,
    fit,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
