"""Adam gradient descent over the logit volume, with loss-curve capture.

The protocol is deliberately rigid: fixed step count, no schedules, no early
stopping.  Two refinements with identical inputs produce bit-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import losses
from .volume import Case, Volume

HypothesisName = Literal["compact", "diffuse"]


class NumericalFailure(RuntimeError):
    """Optimization hit a non-finite gradient; message names the step index."""


@dataclass(frozen=True)
class OptimizerProtocol:
    lr: float = 0.1
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int
    protocol: OptimizerProtocol

    @classmethod
    def fresh(cls, shape, protocol: OptimizerProtocol) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0, protocol=protocol)


@dataclass(frozen=True)
class RefinementTrace:
    """Loss at the start and after every step (length steps + 1), plus the
    refined logits."""

    hypothesis: HypothesisName
    loss_values: tuple[float, ...]
    final_z: Volume

    @property
    def initial_loss(self) -> float:
        return self.loss_values[0]

    @property
    def final_loss(self) -> float:
        return self.loss_values[-1]

    @property
    def steps(self) -> int:
        return len(self.loss_values) - 1


def adam_step(state: AdamState, z: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update: z' = z - lr * m_hat / (sqrt(v_hat) + eps)."""
    if not np.isfinite(grad).all():
        raise NumericalFailure(f"non-finite gradient at step {state.t + 1}")
    pr = state.protocol
    t = state.t + 1
    m = pr.beta1 * state.m + (1.0 - pr.beta1) * grad
    v = pr.beta2 * state.v + (1.0 - pr.beta2) * grad * grad
    m_hat = m / (1.0 - pr.beta1**t)
    v_hat = v / (1.0 - pr.beta2**t)
    z_new = z - pr.lr * m_hat / (np.sqrt(v_hat) + pr.eps_adam)
    return AdamState(m=m, v=v, t=t, protocol=pr), z_new


def refine(
    case: Case,
    hypothesis: HypothesisName,
    weights=None,
    protocol: OptimizerProtocol = OptimizerProtocol(),
    edge_cfg: losses.EdgeMapConfig = losses.EdgeMapConfig(),
    g_override: Volume | None = None,
) -> RefinementTrace:
    """Run the named hypothesis loss from z = z0 for ``protocol.steps`` updates.

    For the diffuse hypothesis the edge map is computed once from the case
    image before iteration (``g_override`` replaces it, e.g. an all-ones map
    for the no-edge-map ablation).
    """
    z0 = case.logits0.data
    if hypothesis == "compact":
        weights = weights if weights is not None else losses.CompactWeights()
        objective = losses.compact_objective(z0, case.spacing, weights)
    elif hypothesis == "diffuse":
        weights = weights if weights is not None else losses.DiffuseWeights()
        if g_override is not None:
            g = g_override
        else:
            g = losses.edge_map(case.image, sigma_mm=edge_cfg.sigma_mm, alpha=edge_cfg.alpha)
        objective = losses.diffuse_objective(z0, g.data, weights)
    else:
        raise ValueError(f"unknown hypothesis {hypothesis!r}")

    z = z0.copy()
    state = AdamState.fresh(z.shape, protocol)
    value, grad = objective(z)
    curve = [value]
    for _ in range(protocol.steps):
        state, z = adam_step(state, z, grad)
        value, grad = objective(z)
        curve.append(value)
    return RefinementTrace(
        hypothesis=hypothesis,
        loss_values=tuple(curve),
        final_z=Volume(z, case.spacing),
    )
