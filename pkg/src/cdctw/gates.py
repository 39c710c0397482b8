"""Conditional stochastic gates: clamped-Gaussian feature gates whose means
come from a per-frame gating network.

A gate is z = clamp(mu + eps, 0, 1) with eps ~ N(0, sigma^2) during training
and z = clamp(mu, 0, 1) at evaluation.  The expected number of open gates,
sum_d P(z_d > 0) = sum_d Phi(mu_d / sigma), is the differentiable surrogate
for the l0 count; Phi here is the Gaussian CDF (the identity P(z > 0) =
Phi(mu / sigma) only holds for the CDF, and the gradient below is its
density).  The penalty is averaged over frames so its weight is insensitive
to sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from cdctw.seqcore import SequenceView

GATE_MODES = ("train-stochastic", "eval-deterministic")

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ContextMatrix:
    """Per-frame contextual input for a gating network."""

    data: np.ndarray
    kind: str = "flow-magnitude"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or not np.isfinite(data).all():
            raise ValueError("context must be a finite 2-D matrix")
        if self.kind not in ("flow-magnitude", "external"):
            raise ValueError(f"unknown context kind {self.kind!r}")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GateState:
    """Gate means, clamped gate values, and (in train mode) the noise draw."""

    mu: np.ndarray
    z: np.ndarray
    sigma: float
    mode: str
    epsilon: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ValueError(f"mode must be one of {GATE_MODES}")
        if self.mu.shape != self.z.shape:
            raise ValueError("mu and z shapes differ")
        if (self.z < 0).any() or (self.z > 1).any():
            raise ValueError("gate values must lie in [0, 1]")


def flow_context(view: SequenceView) -> ContextMatrix:
    """Flow-magnitude context: per-feature |frame_t - frame_{t-1}|.

    Column 0 is zero (no predecessor).  Output has the same shape as the
    view's data.
    """
    data = view.data
    ctx = np.zeros_like(data)
    if data.shape[1] > 1:
        ctx[:, 1:] = np.abs(data[:, 1:] - data[:, :-1])
    return ContextMatrix(ctx, kind="flow-magnitude")


def sample_gates(mu: np.ndarray, sigma: float, mode: str,
                 rng: np.random.Generator | None = None) -> GateState:
    """Draw clamped-Gaussian gates around ``mu``.

    train-stochastic adds fresh N(0, sigma^2) noise per entry (``rng``
    required); eval-deterministic clamps the means directly.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    if mode == "train-stochastic":
        if rng is None:
            raise ValueError("train-stochastic sampling requires an rng")
        eps = rng.normal(0.0, sigma, size=mu.shape)
        z = np.clip(mu + eps, 0.0, 1.0)
        return GateState(mu=mu, z=z, sigma=sigma, mode=mode, epsilon=eps)
    if mode == "eval-deterministic":
        return GateState(mu=mu, z=np.clip(mu, 0.0, 1.0), sigma=sigma, mode=mode)
    raise ValueError(f"mode must be one of {GATE_MODES}")


def l0_penalty(mu: np.ndarray, sigma: float) -> tuple[float, np.ndarray]:
    """Expected open-gate count, averaged over frames.

    value = mean_t sum_d Phi(mu[d, t] / sigma); the gradient is the Gaussian
    density phi(mu / sigma) / (N * sigma).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.shape[1] if mu.ndim == 2 else 1
    scaled = mu / sigma
    value = float(ndtr(scaled).sum() / n)
    grad = _INV_SQRT_2PI * np.exp(-0.5 * scaled * scaled) / (n * sigma)
    return value, grad


def gate_backward(grad_z: np.ndarray, state: GateState) -> np.ndarray:
    """Gradient through the clamp: pass where 0 < mu + eps < 1, zero where
    the clamp saturated."""
    if state.mode != "train-stochastic" or state.epsilon is None:
        raise ValueError("gate_backward needs a train-stochastic GateState with stored noise")
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != state.mu.shape:
        raise ValueError("grad_z shape does not match gates")
    pre = state.mu + state.epsilon
    interior = (pre > 0.0) & (pre < 1.0)
    return np.where(interior, grad_z, 0.0)
