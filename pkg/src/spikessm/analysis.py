"""Measurement tooling: parameter/MAC cost accounting, spike rates,
accuracy over prefix lengths, output-channel dropout, architecture sweeps.

Cost conventions: one MAC is one real multiply or one real add.  Complex
values are counted through their real-pair representation; the square root
inside the Euclidean norm is not counted.  The per-neuron parameter count
``p = (2 n_out + 3)(n + 1)`` enumerates the neuron model's parameter store
(eigenvalues, input vector, output map, output bias, reset scale, reset
bias), counting a complex scalar as two real ones.  The input vector B is
part of that store even though training holds it fixed at ones.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import SequenceDataset, iterate_batches
from .network import ForwardRecords, Network, rate_decode
from .neuron import SsmNeuronLayerParams


def count_params(n: int, n_out: int) -> int:
    """Trainable real-valued parameters per neuron: (2 n_out + 3)(n + 1)."""
    if n < 1 or n_out < 1:
        raise ValueError("n and n_out must be >= 1")
    return (2 * n_out + 3) * (n + 1)


def count_reset_macs(n: int, n_out: int):
    """MACs of the reset mechanism: condition, action, and their sum."""
    if n < 1 or n_out < 1:
        raise ValueError("n and n_out must be >= 1")
    m_rc = 4 * n_out + 1
    m_ra = 6 * n
    return m_rc, m_ra, m_rc + m_ra


@dataclass
class CostReport:
    n: int
    n_out: int
    h: int
    p: int
    p_per_layer: int
    m_rc: int
    m_ra: int
    m_r: int
    m_r_per_layer: int
    synaptic_macs_per_step: int

    @classmethod
    def build(cls, n: int, n_out: int, h: int) -> "CostReport":
        if h < 1:
            raise ValueError("h must be >= 1")
        p = count_params(n, n_out)
        m_rc, m_ra, m_r = count_reset_macs(n, n_out)
        # one hidden-to-hidden junction: h*n_out multiplies and
        # h*n_out - 1 adds per post-synaptic neuron
        synaptic = h * (2 * h * n_out - 1)
        return cls(n=n, n_out=n_out, h=h, p=p, p_per_layer=p * h,
                   m_rc=m_rc, m_ra=m_ra, m_r=m_r, m_r_per_layer=m_r * h,
                   synaptic_macs_per_step=synaptic)

    csv_header = ("n,n_out,h,p,p_per_layer,m_rc,m_ra,m_r,m_r_per_layer,"
                  "synaptic_macs_per_step")

    def csv_row(self) -> str:
        return (f"{self.n},{self.n_out},{self.h},{self.p},{self.p_per_layer},"
                f"{self.m_rc},{self.m_ra},{self.m_r},{self.m_r_per_layer},"
                f"{self.synaptic_macs_per_step}")


def neuron_param_scalars(layer: SsmNeuronLayerParams) -> int:
    """Enumerate the real scalars per neuron in the layer's parameter store.

    Counts every array in the store (including the fixed input vector B,
    which the neuron model's accounting includes); a complex entry counts
    as two real scalars.
    """
    if layer.shared_reset:
        raise ValueError("per-neuron accounting needs per-neuron reset params")
    total = 0
    for tensor in layer.store_arrays().values():
        total += tensor.data.size * (2 if tensor.is_complex else 1)
    if total % layer.h:
        raise AssertionError("store size not divisible by neuron count")
    return total // layer.h


class MacCounter:
    """Counts real multiplies and adds under the documented convention."""

    def __init__(self):
        self.mults = 0
        self.adds = 0

    def mul(self, k: int = 1):
        self.mults += k

    def add(self, k: int = 1):
        self.adds += k

    @property
    def total(self) -> int:
        return self.mults + self.adds


def measure_reset_macs(n: int, n_out: int, seed: int = 0):
    """Instrumented arithmetic count of one reset-triggering step.

    Evaluates the reset condition and (since it fires) the reset action on
    random values, counting every real multiply/add actually performed.
    Returns (condition_macs, action_macs, fired).
    """
    rng = np.random.default_rng(seed)
    # scale y so the norm condition certainly fires
    y = (rng.normal(size=n_out) + 1j * rng.normal(size=n_out)) + 3.0 * n_out
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    rho = complex(rng.normal(), rng.normal())
    r_bias = float(rng.normal() * 0.1)

    cond_counter = MacCounter()
    acc = 0.0
    first_term = True
    for o in range(n_out):
        re, im = y[o].real, y[o].imag
        sq_re = re * re
        cond_counter.mul()
        sq_im = im * im
        cond_counter.mul()
        for term in (sq_re, sq_im):
            if first_term:
                acc = term  # first term costs no addition
                first_term = False
            else:
                acc = acc + term
                cond_counter.add()
    norm = np.sqrt(acc)  # square root excluded from the count
    scaled = norm * (1.0 / n_out)
    cond_counter.mul()
    value = scaled + r_bias
    cond_counter.add()
    fired = value >= 1.0

    action_counter = MacCounter()
    if fired:
        for k in range(n):
            a, b = rho.real, rho.imag
            c, d = v[k].real, v[k].imag
            _re = a * c - b * d
            action_counter.mul(2)
            action_counter.add()
            _im = a * d + b * c
            action_counter.mul(2)
            action_counter.add()
    return cond_counter.total, action_counter.total, bool(fired)


# ---------------------------------------------------------------------------
# spike rates


class SpikeRateAccumulator:
    """Per-channel spike activity counts, aggregated over batches."""

    def __init__(self, num_layers: int):
        self.counts = [None] * num_layers
        self.steps = [0.0] * num_layers

    def update(self, records: ForwardRecords):
        mask = records.mask
        for i, spikes in enumerate(records.spike_list):
            active = (spikes != 0.0)
            if mask is not None:
                active = active & (mask[:, :, None, None] > 0)
                valid = mask.sum()
            else:
                valid = spikes.shape[0] * spikes.shape[1]
            per_channel = active.sum(axis=(0, 1))  # (h, n_out)
            if self.counts[i] is None:
                self.counts[i] = per_channel.astype(np.float64)
            else:
                self.counts[i] += per_channel
            self.steps[i] += float(valid)

    def layer_stats(self):
        """Per layer (mean, std) of the channel spike rates (population std)."""
        stats = []
        for counts, steps in zip(self.counts, self.steps):
            if counts is None or steps == 0:
                stats.append((0.0, 0.0))
                continue
            rates = counts / steps
            stats.append((float(rates.mean()), float(rates.std())))
        return stats


def spike_rate(records: ForwardRecords):
    """Per-layer (mean, std) spike rate across neuron-channels.

    Activity is value-agnostic: a -1 counts the same as a +1.  Raises on
    GELU records, whose outputs are not spikes.
    """
    if records.activation == "gelu":
        raise ValueError("spike rate is undefined for GELU activations")
    acc = SpikeRateAccumulator(len(records.spike_list))
    acc.update(records)
    return acc.layer_stats()


# ---------------------------------------------------------------------------
# accuracy over time and channel dropout


def accuracy_over_time(net: Network, dataset: SequenceDataset,
                       checkpoints, batch_size: int = 256):
    """Accuracy when decoding only the first t steps, for each t given.

    ``t = 0`` decodes an all-zero accumulation (the tie rule then yields a
    constant prediction); t values beyond the longest sequence are
    rejected.
    """
    checkpoints = [int(t) for t in checkpoints]
    correct = {t: 0 for t in checkpoints}
    total = 0
    max_t_seen = 0
    with ad.no_grad():
        for x, labels, mask in iterate_batches(dataset, batch_size):
            logits, _ = net.forward(x, train=False, mask=mask)
            arr = logits.data
            if mask is not None:
                arr = arr * mask[:, :, None]
            max_t_seen = max(max_t_seen, arr.shape[1])
            cum = np.cumsum(arr, axis=1)
            for t in checkpoints:
                if t > arr.shape[1]:
                    raise ValueError(f"prefix length {t} exceeds sequence "
                                     f"length {arr.shape[1]}")
                if t == 0:
                    acc_logits = np.zeros(cum[:, 0].shape)
                else:
                    acc_logits = cum[:, t - 1]
                preds = np.argmax(acc_logits, axis=-1)
                correct[t] += int((preds == labels).sum())
            total += len(labels)
    return [(t, correct[t] / max(total, 1)) for t in checkpoints]


def drop_channels(net: Network, which: str, count: int) -> Network:
    """View of the network with the first or last ``count`` output channels
    of every neuron forced to zero; shares all parameters."""
    n_out = net.cfg.n_out
    if which not in ("first", "last"):
        raise ValueError("which must be 'first' or 'last'")
    if not 0 <= count <= n_out:
        raise ValueError(f"count must be in [0, {n_out}]")
    view = copy.copy(net)
    mask = np.ones(n_out)
    if count:
        if which == "first":
            mask[:count] = 0.0
        else:
            mask[n_out - count:] = 0.0
    view.channel_mask = mask
    return view


def eval_accuracy(net: Network, dataset: SequenceDataset,
                  batch_size: int = 256) -> float:
    correct = 0
    with ad.no_grad():
        for x, labels, mask in iterate_batches(dataset, batch_size):
            logits, _ = net.forward(x, train=False, mask=mask)
            preds = rate_decode(logits.data, mask)
            correct += int((preds == labels).sum())
    return correct / max(len(dataset), 1)


# ---------------------------------------------------------------------------
# architecture sweep


def grid_satisfying(cells, hn: int | None = None, hn_out: int | None = None):
    """Filter (h, n, n_out) cells by the fixed-product design rules."""
    out = []
    for h, n, n_out in cells:
        if hn is not None and h * n != hn:
            continue
        if hn_out is not None and h * n_out != hn_out:
            continue
        out.append((h, n, n_out))
    return out


SWEEP_CSV_HEADER = "h,n,n_out,regime,reset,seed,status,test_acc,params_per_layer"


def architecture_sweep(cells, regime_grid, run_cell, seeds=(0,)):
    """Run ``run_cell(h, n, n_out, regime, reset, seed) -> test accuracy``
    over the full grid; a failing cell is recorded and does not abort the
    sweep.  Rows come back in deterministic grid order."""
    rows = []
    for h, n, n_out in cells:
        for regime, reset in regime_grid:
            for seed in seeds:
                row = {
                    "h": h, "n": n, "n_out": n_out, "regime": regime,
                    "reset": reset, "seed": seed,
                    "params_per_layer": count_params(n, n_out) * h,
                }
                try:
                    row["test_acc"] = float(run_cell(h, n, n_out, regime,
                                                     reset, seed))
                    row["status"] = "ok"
                except Exception as exc:  # record, keep sweeping
                    row["test_acc"] = float("nan")
                    row["status"] = f"error: {type(exc).__name__}"
                rows.append(row)
    return rows
