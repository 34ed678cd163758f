"""Eigenvalue initialization, regime construction, and training-time clips.

Continuous-time eigenvalues follow the linear-imaginary diagonal scheme
``lambda_k = -1/2 + i*pi*k`` (k = 0..n-1, no explicit conjugate pairs), one
per state component.  Each neuron draws a timestep ``delta`` log-uniformly
from ``[delta_min, delta_max]`` shared across its components, and the
bilinear map

    lambda_d = (1 + delta*lambda/2) / (1 - delta*lambda/2)

produces the discrete eigenvalues, whose moduli land in [0.9, 1).  The
unstable regime then scales every second eigenvalue by 1.5, pushing
floor(n/2) moduli above 1; the stable regime instead re-clips moduli to 1
after every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DELTA_MIN_DEFAULT = 1e-3
DELTA_MAX_DEFAULT = 1e-1
UNSTABLE_SCALE = 1.5


@dataclass
class InitConfig:
    n: int
    delta_min: float = DELTA_MIN_DEFAULT
    delta_max: float = DELTA_MAX_DEFAULT
    seed: int = 0
    regime: str = "stable"  # "stable" | "unstable"
    num_neurons: int = 1

    def __post_init__(self):
        if not (0 < self.delta_min <= self.delta_max):
            raise ValueError("need 0 < delta_min <= delta_max")
        if self.regime not in ("stable", "unstable"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.n < 1 or self.num_neurons < 1:
            raise ValueError("n and num_neurons must be >= 1")


def bilinear(lam: np.ndarray, delta) -> np.ndarray:
    """Discretize continuous eigenvalues with the bilinear (Tustin) map."""
    half = 0.5 * np.multiply(delta, lam)
    return (1.0 + half) / (1.0 - half)


def s4d_lin_init(cfg: InitConfig) -> np.ndarray:
    """Sample discrete eigenvalues, shape (num_neurons, n), complex128."""
    rng = np.random.default_rng(cfg.seed)
    k = np.arange(cfg.n)
    lam_cont = -0.5 + 1j * np.pi * k
    log_delta = rng.uniform(np.log(cfg.delta_min), np.log(cfg.delta_max),
                            size=(cfg.num_neurons, 1))
    delta = np.exp(log_delta)  # one timestep per neuron
    return bilinear(lam_cont[None, :], delta)


def destabilize(lam: np.ndarray) -> np.ndarray:
    """Scale every second eigenvalue (indices 1, 3, ...) by 1.5."""
    out = np.array(lam, dtype=np.complex128, copy=True)
    out[..., 1::2] *= UNSTABLE_SCALE
    return out


def clip_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Rescale any entry with modulus > 1 to modulus 1, keeping phase.

    Guarantees ``|out| <= 1.0`` in floating point: rescaling by the modulus
    can overshoot by an ulp, so the division is iterated and any residual
    overshoot nudged down.
    """
    out = np.array(lam, dtype=np.complex128, copy=True)
    for _ in range(3):
        mod = np.abs(out)
        over = mod > 1.0
        if not over.any():
            return out
        out = np.where(over, out / np.where(over, mod, 1.0), out)
    over = np.abs(out) > 1.0
    return np.where(over, out * (1.0 - 4e-16), out)


def init_projection(n: int, n_out: int, seed: int, num_neurons: int = 1):
    """Output map init: C with i.i.d. standard-normal real and imaginary
    parts, bias exactly zero.

    Returns (C, c_bias) with shapes (num_neurons, n_out, n) and
    (num_neurons, n_out).
    """
    if n < 1 or n_out < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    shape = (num_neurons, n_out, n)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c_bias = np.zeros((num_neurons, n_out), dtype=np.complex128)
    return c, c_bias


def init_eigenvalues(cfg: InitConfig) -> np.ndarray:
    """Regime-aware initialization: destabilized in the unstable regime."""
    lam = s4d_lin_init(cfg)
    if cfg.regime == "unstable":
        lam = destabilize(lam)
    return lam
