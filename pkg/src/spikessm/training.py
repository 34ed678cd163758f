"""BPTT training: cross-entropy on time-accumulated logits, AdamW with
per-parameter-group learning rates and decoupled weight decay, cosine
learning-rate schedule, per-component gradient clipping, and the
stable-regime eigenvalue clip after every optimizer step.

Complex parameters are updated as two independent real components (their
float64 views).  Parameter groups: ``ssm`` (eigenvalues, output map, output
bias), ``other`` (synaptic weights, normalization affines), ``rho`` and
``r_bias`` (the two reset parameters).  The fixed input vector B belongs to
no group and is never updated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .analysis import SpikeRateAccumulator
from .data import SequenceDataset, iterate_batches
from .initialization import clip_eigenvalues
from .network import Network, rate_decode, save_checkpoint, time_accumulate
from .neuron import DivergenceError

GRAD_CLIP_DEFAULT = 1e5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class GroupHyper:
    lr: float
    weight_decay: float = 0.0


@dataclass
class ParamGroups:
    """Learning rate and weight decay per parameter group."""

    ssm: GroupHyper
    other: GroupHyper
    rho: GroupHyper
    r_bias: GroupHyper

    def for_tag(self, tag: str) -> GroupHyper:
        try:
            return getattr(self, tag)
        except AttributeError:
            raise KeyError(f"unknown parameter group {tag!r}") from None

    @classmethod
    def uniform(cls, lr: float, weight_decay: float = 0.0) -> "ParamGroups":
        g = GroupHyper(lr, weight_decay)
        return cls(ssm=g, other=g, rho=g, r_bias=g)


@dataclass
class TrainState:
    """Optimizer moments, schedule clock, and the run's RNG."""

    params: list = field(default_factory=list)  # (name, tensor, group) triples
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    total_steps: int = 1
    rng: np.random.Generator = None
    eig_violations: int = 0

    @classmethod
    def create(cls, net: Network, total_steps: int, seed: int) -> "TrainState":
        params = list(net.named_params())
        state = cls(params=params, total_steps=max(int(total_steps), 1),
                    rng=np.random.default_rng(seed))
        for name, tensor, _ in params:
            view = _float_view(tensor.data)
            state.m[name] = np.zeros_like(view)
            state.v[name] = np.zeros_like(view)
        return state


def _float_view(arr: np.ndarray) -> np.ndarray:
    return arr.view(np.float64) if np.iscomplexobj(arr) else arr


def cross_entropy(logits, labels) -> ad.Tensor:
    """Mean over the batch of ``-log softmax`` at the true class."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels)
    B, C = logits.data.shape
    if labels.shape != (B,):
        raise ValueError("labels must be one class index per sample")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range [0, {C})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    data = -log_probs[np.arange(B), labels].mean()

    def backward(g):
        soft = np.exp(log_probs)
        soft[np.arange(B), labels] -= 1.0
        logits.accumulate(g * soft / B)

    return ad.custom_node(np.float64(data), (logits,), backward)


def bptt_backward(tape: ad.Tape, loss: ad.Tensor, net: Network) -> dict:
    """Reverse sweep over the recorded forward; returns per-parameter
    gradients (exact zeros for parameters with no path to the loss)."""
    tape.backward(loss)
    grads = {}
    for name, tensor, _ in net.named_params():
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(_float_view(np.asarray(g)))):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    return grads


def clip_gradients(grads: dict, bound: float = GRAD_CLIP_DEFAULT) -> dict:
    """Clamp every real gradient component to [-bound, bound].

    NaNs are an error (never silently clamped); complex gradients are
    clamped on their real and imaginary parts independently.
    """
    out = {}
    for name, g in grads.items():
        g = np.asarray(g)
        view = _float_view(g)
        if np.isnan(view).any():
            raise DivergenceError(f"NaN gradient for parameter {name}")
        clipped = np.clip(view, -bound, bound)
        out[name] = clipped.view(g.dtype) if np.iscomplexobj(g) else clipped
    return out


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


def adamw_step(state: TrainState, groups: ParamGroups, grads: dict):
    """Decoupled-weight-decay Adam update with the cosine schedule factor.

    After the update, stable-regime layers have their eigenvalue moduli
    clipped back to at most 1.
    """
    state.step += 1
    t = state.step
    schedule = 0.5 * (1.0 + np.cos(np.pi * (t - 1) / state.total_steps))
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor, tag in state.params:
        hyper = groups.for_tag(tag)
        lr = hyper.lr * schedule
        g = _float_view(np.asarray(grads[name]))
        p = _float_view(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        if hyper.weight_decay:
            p -= lr * hyper.weight_decay * p
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)


def enforce_stability(net: Network, state: TrainState | None = None):
    """Clip eigenvalue moduli in stable-regime layers; count any would-be
    violations seen before the clip (the in-loop invariant check)."""
    for layer in net.layers:
        if layer.regime != "stable":
            continue
        lam = layer.lam.data
        layer.lam.data = clip_eigenvalues(lam)
        if state is not None and np.any(np.abs(layer.lam.data) > 1.0):
            state.eig_violations += 1


@dataclass
class FitConfig:
    epochs: int
    batch_size: int
    groups: ParamGroups
    seed: int = 0
    grad_clip: float = GRAD_CLIP_DEFAULT
    eval_batch_size: int = 256
    shuffle: bool = True
    checkpoint_dir: str | None = None
    log: object = None  # callable(str) or None


def evaluate(net: Network, dataset: SequenceDataset, batch_size: int = 256,
             collect_spikes: bool = True):
    """Test accuracy plus per-layer spike-rate accumulation (eval mode)."""
    correct = 0
    total = 0
    rates = SpikeRateAccumulator(len(net.layers)) if collect_spikes else None
    with ad.no_grad():
        for x, labels, mask in iterate_batches(dataset, batch_size):
            logits, rec = net.forward(x, train=False, mask=mask)
            preds = rate_decode(logits.data, mask)
            correct += int((preds == labels).sum())
            total += len(labels)
            if rates is not None and net.cfg.activation != "gelu":
                rates.update(rec)
    acc = correct / max(total, 1)
    return acc, rates


def fit(net: Network, train_ds: SequenceDataset, test_ds: SequenceDataset,
        cfg: FitConfig):
    """Train for the configured epochs; returns (metrics, train_state).

    Each epoch appends one metrics dict (keys: epoch, train_loss,
    train_acc, test_acc, lr, spike_rate_l{i}_mean/std, wall_time).  The
    wall_time entry is informational and excluded from the deterministic
    metrics CSV by the CLI.
    """
    n_train = len(train_ds)
    if n_train == 0:
        raise ValueError("training dataset is empty")
    batches_per_epoch = int(np.ceil(n_train / cfg.batch_size))
    state = TrainState.create(net, total_steps=cfg.epochs * batches_per_epoch,
                              seed=cfg.seed)
    metrics: list[dict] = []
    best_acc = -1.0

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        t_start = time.perf_counter()
        order = state.rng.permutation(n_train) if cfg.shuffle \
            else np.arange(n_train)
        epoch_loss = 0.0
        epoch_correct = 0
        for x, labels, mask in iterate_batches(train_ds, cfg.batch_size,
                                               order=order):
            net.zero_grad()
            with ad.Tape() as tape:
                logits, _ = net.forward(x, train=True, rng=state.rng, mask=mask)
                acc_logits = time_accumulate(logits, mask)
                loss = cross_entropy(acc_logits, labels)
                if not np.isfinite(loss.data):
                    raise DivergenceError(
                        "non-finite training loss "
                        f"(regime={net.cfg.regime}, reset={net.cfg.reset_enabled}, "
                        f"activation={net.cfg.activation}, epoch={epoch})")
                grads = bptt_backward(tape, loss, net)
            grads = clip_gradients(grads, cfg.grad_clip)
            adamw_step(state, cfg.groups, grads)
            enforce_stability(net, state)
            epoch_loss += float(loss.data) * len(labels)
            preds = rate_decode(acc_logits.data)
            epoch_correct += int((preds == labels).sum())

        test_acc, rates = evaluate(net, test_ds, cfg.eval_batch_size)
        lr_now = cosine_lr(cfg.groups.other.lr, min(state.step, state.total_steps),
                           state.total_steps)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / n_train,
            "train_acc": epoch_correct / n_train,
            "test_acc": test_acc,
            "lr": lr_now,
        }
        if rates is not None:
            for i, (mean, std) in enumerate(rates.layer_stats()):
                row[f"spike_rate_l{i + 1}_mean"] = mean
                row[f"spike_rate_l{i + 1}_std"] = std
        else:
            for i in range(len(net.layers)):
                row[f"spike_rate_l{i + 1}_mean"] = float("nan")
                row[f"spike_rate_l{i + 1}_std"] = float("nan")
        row["wall_time"] = time.perf_counter() - t_start
        metrics.append(row)
        if cfg.log is not None:
            cfg.log(f"epoch {epoch}: loss={row['train_loss']:.4f} "
                    f"train_acc={row['train_acc']:.4f} test_acc={test_acc:.4f}")
        if cfg.checkpoint_dir is not None and test_acc > best_acc:
            best_acc = test_acc
            save_checkpoint(net, f"{cfg.checkpoint_dir}/checkpoint_best.npz",
                            extra={"epoch": epoch, "test_acc": test_acc})

    if cfg.checkpoint_dir is not None:
        save_checkpoint(net, f"{cfg.checkpoint_dir}/checkpoint_final.npz",
                        extra={"epoch": cfg.epochs - 1,
                               "rng_state": _rng_state_json(state.rng)})
    return metrics, state


def _rng_state_json(rng: np.random.Generator | None):
    if rng is None:
        return None
    state = rng.bit_generator.state
    return {"bit_generator": state["bit_generator"],
            "state": {k: int(v) if isinstance(v, (int, np.integer)) else v
                      for k, v in state["state"].items()}}


# ---------------------------------------------------------------------------
# parameter flattening (gradient-correctness harness)


def flatten_params(net: Network):
    """Concatenate all trainable tensors into one real vector."""
    chunks = []
    layout = []
    for name, tensor, _ in net.named_params():
        view = _float_view(tensor.data).ravel()
        layout.append((name, tensor, view.size))
        chunks.append(view.copy())
    return np.concatenate(chunks), layout


def unflatten_params(net: Network, vec: np.ndarray):
    pos = 0
    for _, tensor, _ in net.named_params():
        view = _float_view(tensor.data)
        view.reshape(-1)[:] = vec[pos:pos + view.size]
        pos += view.size
    if pos != vec.size:
        raise ValueError("parameter vector size mismatch")


def gather_flat_grads(net: Network, grads: dict) -> np.ndarray:
    return np.concatenate([
        _float_view(np.asarray(grads[name])).ravel()
        for name, _, _ in net.named_params()])
