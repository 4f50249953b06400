"""Measurement records, filtering and entanglement measures.

The weak continuous photon-number measurement produces the record

    I(t) = sum_n n [ <P_n> + dW_n / (2 eta dt) ]

whose mean is the expected photon number and whose single-projector variance
is 1/(4 eta^2 dt) per step. Entanglement is quantified by the logarithmic
negativity E_N = ln ||rho^(T_i)||_1 in the natural base, so a Bell pair
scores ln 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from optomech.fock import FockSpace, mode_populations, partial_transpose

LOG2 = math.log(2.0)


def expected_number(space: FockSpace, rho: np.ndarray, mode: str):
    """<n> of one mode from the diagonal populations. Batch-aware."""
    pops = mode_populations(space, rho, mode)
    levels = np.arange(pops.shape[-1])
    val = pops @ levels
    return val if isinstance(val, np.ndarray) and val.ndim else float(val)


def photocurrent_from_probs(probs: np.ndarray, dw: np.ndarray, eta: float, dt: float):
    """Measurement record from cavity-level probabilities and the shared dW."""
    if eta <= 0:
        raise ValueError("photocurrent requires eta > 0; the record divides by eta")
    probs = np.asarray(probs)
    dw = np.asarray(dw)
    if probs.shape != dw.shape:
        raise ValueError(f"probs shape {probs.shape} and dW shape {dw.shape} differ")
    levels = np.arange(probs.shape[-1])
    val = (probs + dw / (2.0 * eta * dt)) @ levels
    return val if isinstance(val, np.ndarray) and val.ndim else float(val)


def photocurrent(space: FockSpace, rho: np.ndarray, dw: np.ndarray, eta: float, dt: float):
    """I(t) for a state (or stack of states) and matching Wiener increments."""
    probs = mode_populations(space, rho, "cavity")
    return photocurrent_from_probs(probs, dw, eta, dt)


@dataclass(frozen=True)
class GaussianFilterConfig:
    """Truncated Gaussian smoothing kernel, widths in integration steps."""

    sigma_steps: float = 20.0
    radius_steps: int | None = None  # None resolves to round(3 sigma)
    causal: bool = True

    def __post_init__(self):
        if self.sigma_steps <= 0:
            raise ValueError("sigma_steps must be positive")
        if self.radius_steps is None:
            object.__setattr__(self, "radius_steps", int(round(3 * self.sigma_steps)))
        if self.radius_steps < 0:
            raise ValueError("radius_steps must be non-negative")


def gaussian_kernel(config: GaussianFilterConfig) -> np.ndarray:
    """Symmetric normalized kernel of length 2*radius + 1."""
    r = config.radius_steps
    k = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-0.5 * (k / config.sigma_steps) ** 2)
    return w / w.sum()


def gaussian_filter(series: np.ndarray, config: GaussianFilterConfig) -> np.ndarray:
    """Filter a full series. Edge windows renormalize over available samples,
    so the DC gain is exactly 1 everywhere; the causal variant only sees the
    past."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    r = config.radius_steps
    w = np.exp(-0.5 * (np.arange(r + 1) / config.sigma_steps) ** 2)
    out = np.empty_like(x)
    for t in range(len(x)):
        lo = max(0, t - r)
        hi = t if config.causal else min(len(x) - 1, t + r)
        past = w[: t - lo + 1][::-1]
        future = w[1 : hi - t + 1]
        weights = np.concatenate([past, future])
        out[t] = weights @ x[lo : hi + 1] / weights.sum()
    return out


class CausalGaussianFilter:
    """Streaming form of the causal filter; push one sample, read one output."""

    def __init__(self, config: GaussianFilterConfig):
        self.config = config
        self._weights = np.exp(
            -0.5 * (np.arange(config.radius_steps + 1) / config.sigma_steps) ** 2
        )[::-1]
        self._buf: list[float] = []

    def reset(self):
        self._buf.clear()

    def push(self, value: float) -> float:
        self._buf.append(float(value))
        window = self._buf[-(self.config.radius_steps + 1) :]
        w = self._weights[-len(window) :]
        return float(w @ np.asarray(window) / w.sum())


def log_negativity(space: FockSpace, rho: np.ndarray, mode: str = "cavity"):
    """E_N = ln ||rho^(T_mode)||_1, natural base. Batch-aware."""
    pt = partial_transpose(space, rho, mode)
    eigs = np.linalg.eigvalsh(pt)
    val = np.log(np.abs(eigs).sum(axis=-1))
    return val if isinstance(val, np.ndarray) and val.ndim else float(val)


def percent_of_bell(en_value) -> float:
    """Normalize an entanglement value by ln 2, in percent."""
    return float(np.asarray(en_value)) / LOG2 * 100.0


def episode_entanglement(en_series: np.ndarray) -> float:
    """E_N-tilde: time average of E_N over one episode."""
    en = np.asarray(en_series, dtype=float)
    if en.size == 0:
        raise ValueError("empty entanglement series")
    return float(en.mean())


def windowed_entanglement(en_tilde: np.ndarray, window: int = 10):
    """<E_N>: mean and std of E_N-tilde over the last `window` episodes.

    Fewer episodes than the window triggers a partial-window warning and
    averages what is available.
    """
    en = np.asarray(en_tilde, dtype=float)
    if en.size == 0:
        raise ValueError("no episodes to summarize")
    if en.size < window:
        warnings.warn(
            f"only {en.size} episodes available for a window of {window}; "
            "averaging the partial window",
            stacklevel=2,
        )
    tail = en[-window:]
    return float(tail.mean()), float(tail.std())


def moving_average(values: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing moving average; early entries average the available prefix."""
    x = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    csum = np.cumsum(x)
    out = np.empty_like(x)
    for t in range(len(x)):
        lo = max(0, t - window + 1)
        total = csum[t] - (csum[lo - 1] if lo > 0 else 0.0)
        out[t] = total / (t - lo + 1)
    return out
