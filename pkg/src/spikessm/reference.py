"""Deliberately naive per-neuron, per-component reference implementation.

Plain Python loops over neurons, state components, output channels, and
time, mirroring the layer semantics one scalar at a time.  This is the
trajectory oracle the vectorized layer is checked against (to 1e-12) and
the substrate for the arithmetic-operation instrumentation used by the
cost-accounting tests.
"""

from __future__ import annotations

import math

import numpy as np

from .neuron import STATE_CLIP


def _spike_value(z: float, activation: str) -> float:
    if activation == "nonsigned":
        return 1.0 if z > 1.0 else 0.0
    if activation == "signed":
        if z > 1.0:
            return 1.0
        if z < -1.0:
            return -1.0
        return 0.0
    if activation == "gelu":
        return z * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    raise ValueError(f"unknown activation {activation!r}")


def reference_sequence_forward(lam, b, c, c_bias, rho, r_bias, inputs, *,
                               activation: str = "nonsigned",
                               regime: str = "stable",
                               reset_enabled: bool = True,
                               norm_mode: str = "complex",
                               v0=None):
    """Run one un-batched sequence through the naive scalar loop.

    Arrays use the layer shapes: ``lam``/``b`` (h, n), ``c`` (h, n_out, n),
    ``c_bias`` (h, n_out), ``rho``/``r_bias`` (h,) or (1,), ``inputs``
    (T, h).  Returns a dict of per-step trajectories.
    """
    lam = np.asarray(lam, dtype=complex)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=complex)
    c_bias = np.asarray(c_bias, dtype=complex)
    rho = np.atleast_1d(np.asarray(rho, dtype=complex))
    r_bias = np.atleast_1d(np.asarray(r_bias, dtype=float))
    inputs = np.asarray(inputs, dtype=float)
    steps, h = inputs.shape
    n = lam.shape[1]
    n_out = c.shape[1]

    v = [[0j] * n for _ in range(h)]
    if v0 is not None:
        v0 = np.asarray(v0, dtype=complex)
        v = [[complex(v0[j, k]) for k in range(n)] for j in range(h)]

    states = np.zeros((steps + 1, h, n), dtype=complex)
    y_all = np.zeros((steps, h, n_out), dtype=complex)
    z_all = np.zeros((steps, h, n_out))
    spikes = np.zeros((steps, h, n_out))
    flags = np.zeros((steps, h))
    states[0] = np.array(v)

    for t in range(steps):
        for j in range(h):
            rho_j = rho[j] if rho.size > 1 else rho[0]
            rb_j = r_bias[j] if r_bias.size > 1 else r_bias[0]

            # projection from the current state
            y_j = []
            for o in range(n_out):
                acc = complex(c_bias[j, o])
                for k in range(n):
                    acc = acc + c[j, o, k] * v[j][k]
                y_j.append(acc)
                z = acc.real + acc.imag
                y_all[t, j, o] = acc
                z_all[t, j, o] = z
                spikes[t, j, o] = _spike_value(z, activation)

            # reset condition on the current output
            sq = 0.0
            for o in range(n_out):
                if norm_mode == "complex":
                    sq += y_j[o].real ** 2 + y_j[o].imag ** 2
                else:
                    zz = y_j[o].real + y_j[o].imag
                    sq += zz * zz
            cond = math.sqrt(sq) * (1.0 / n_out) + rb_j >= 1.0
            fired = reset_enabled and cond
            flags[t, j] = 1.0 if fired else 0.0

            # transition, conditional reset, unstable-regime clip
            for k in range(n):
                nxt = lam[j, k] * v[j][k] + b[j, k] * inputs[t, j]
                if fired:
                    nxt = rho_j * nxt
                if regime == "unstable":
                    mod = abs(nxt)
                    if mod > STATE_CLIP:
                        nxt = nxt * (STATE_CLIP / mod)
                if not (math.isfinite(nxt.real) and math.isfinite(nxt.imag)):
                    raise FloatingPointError(
                        f"reference state diverged at t={t}, neuron {j}")
                v[j][k] = nxt
        states[t + 1] = np.array(v)

    return {
        "states": states,
        "y": y_all,
        "z": z_all,
        "spikes": spikes,
        "reset_flags": flags,
    }


def reference_step(lam, b, c, c_bias, rho, r_bias, v, current, **kw):
    """Single step of the scalar loop; ``v`` is (h, n), ``current`` (h,)."""
    out = reference_sequence_forward(
        lam, b, c, c_bias, rho, r_bias,
        np.asarray(current, dtype=float)[None, :], v0=v, **kw)
    return {
        "v_next": out["states"][1],
        "spikes": out["spikes"][0],
        "reset_flags": out["reset_flags"][0],
        "y": out["y"][0],
        "z": out["z"][0],
    }


def hand_orbit_modulus(lam_value: complex, v0: complex, steps: int):
    """Moduli of the pure orbit ``v[t] = lam^t v0`` (analysis helper)."""
    out = np.empty(steps + 1)
    cur = complex(v0)
    out[0] = abs(cur)
    for t in range(steps):
        cur = lam_value * cur
        out[t + 1] = abs(cur)
    return out
