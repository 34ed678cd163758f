"""Classical spiking neurons and their embeddings into the general form.

The general feed-forward neuron updates an n-dimensional state with a leak
matrix, a soft-reset feedback vector scaled by the current spike, and an
input vector:

    v[t+1] = A v[t] - R s[t] + B i[t],      s[t] = 1 if v[t] in Theta else 0

A hard-reset variant drops the R term and overwrites the state with a fixed
reset state whenever the neuron spikes.  LIF and adLIF are special cases;
the constructors below emit the matrices that make the general step
reproduce them exactly, which the test suite uses as a trajectory oracle.

Note on the adLIF feedback vector: the scalar update subtracts ``alpha *
theta`` from the membrane potential and adds ``+b`` to the recovery
variable on a spike.  Since the general form subtracts ``R s``, the
embedding emits ``R = [+alpha*theta, -b]``; the scalar equations are
treated as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GeneralNeuronParams:
    """Matrices of the general spiking neuron; ``theta_region`` maps a state
    vector to the spike decision."""

    A: np.ndarray
    B: np.ndarray
    R: np.ndarray
    theta_region: Callable[[np.ndarray], bool]
    v_rst: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(-1)
        self.R = np.asarray(self.R, dtype=float).reshape(-1)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape != (n,) or self.R.shape != (n,):
            raise ValueError("inconsistent neuron dimensions")
        if self.v_rst is not None:
            self.v_rst = np.asarray(self.v_rst, dtype=float).reshape(-1)
            if self.v_rst.shape != (n,):
                raise ValueError("v_rst dimension mismatch")


@dataclass
class LifParams:
    alpha: float
    theta: float = 1.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("LIF threshold must be positive")


@dataclass
class AdLifParams:
    alpha: float
    beta: float
    a: float
    b: float
    theta: float = 1.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("adLIF threshold must be positive")


def general_step(params: GeneralNeuronParams, v: np.ndarray, i: float):
    """One soft-reset step; the spike is derived from the current state."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != params.A.shape[0]:
        raise ValueError("state dimension mismatch")
    s = 1 if params.theta_region(v) else 0
    v_next = params.A @ v - params.R * s + params.B * i
    return v_next, s


def hard_reset_step(params: GeneralNeuronParams, v: np.ndarray, i: float):
    """One hard-reset step: no feedback term, state overwritten on spike."""
    if params.v_rst is None:
        raise ValueError("hard reset requires v_rst")
    v = np.asarray(v, dtype=float).reshape(-1)
    s = 1 if params.theta_region(v) else 0
    v_next = params.A @ v + params.B * i
    if s:
        v_next = params.v_rst.copy()
    return v_next, s


def lif_step(params: LifParams, u: float, i: float):
    s = 1 if u >= params.theta else 0
    u_next = params.alpha * u - params.alpha * params.theta * s \
        + (1.0 - params.alpha) * i
    return u_next, s


def adlif_step(params: AdLifParams, u: float, w: float, i: float):
    s = 1 if u >= params.theta else 0
    u_next = params.alpha * u - params.alpha * params.theta * s \
        + (1.0 - params.alpha) * i - (1.0 - params.alpha) * w
    w_next = params.a * u + params.beta * w + params.b * s
    return u_next, w_next, s


def lif_as_general(params: LifParams) -> GeneralNeuronParams:
    theta = params.theta
    return GeneralNeuronParams(
        A=[[params.alpha]],
        B=[1.0 - params.alpha],
        R=[params.alpha * theta],
        theta_region=lambda v: v[0] >= theta,
    )


def adlif_as_general(params: AdLifParams) -> GeneralNeuronParams:
    theta = params.theta
    return GeneralNeuronParams(
        A=[[params.alpha, -(1.0 - params.alpha)],
           [params.a, params.beta]],
        B=[1.0 - params.alpha, 0.0],
        R=[params.alpha * theta, -params.b],
        theta_region=lambda v: v[0] >= theta,
    )
