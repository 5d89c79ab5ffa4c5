"""Adam for Euclidean parameters and Riemannian Adam for Poincare-ball parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hypgeo
from .errors import ShapeError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter, mutates ``state``."""
    if grad.shape != param.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


def riemannian_adam_step(point: np.ndarray, egrad: np.ndarray, state: AdamState, lr: float,
                         beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                         cfg: hypgeo.GeometryConfig = hypgeo.DEFAULT) -> np.ndarray:
    """Riemannian Adam update of ball point(s) (last axis = coordinates).

    The Riemannian gradient rescales the Euclidean one by the inverse metric
    ``1 / lambda_x^2``.  Moments are kept in the tangent space and carried
    between points unchanged (identity transport).  The step is the exact
    exponential map at ``x``: ``x (+) exp_0(lambda_x / 2 * u)``.
    """
    if egrad.shape != point.shape:
        raise ShapeError(f"gradient shape {egrad.shape} != point shape {point.shape}")
    lam = hypgeo.conformal_factor(point)[..., None]
    rgrad = egrad / (lam * lam)
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * rgrad
    state.v = beta2 * state.v + (1.0 - beta2) * rgrad * rgrad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    u = -lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.any(u):
        return point.copy()
    return hypgeo.mobius_add(point, hypgeo.exp_map_0(0.5 * lam * u, cfg), cfg)


@dataclass
class Adam:
    """Adam over a list of tensors (updated in place through ``.data``)."""

    params: list
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list = field(default_factory=list)

    def __post_init__(self):
        if not self.states:
            self.states = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]

    def _update(self, p, g, s):
        return adam_step(p.data, g, s, self.lr, self.beta1, self.beta2, self.eps)

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            p.data = self._update(p, p.grad, s)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self, prefix: str) -> dict:
        out = {}
        for i, s in enumerate(self.states):
            out[f"{prefix}/{i}/m"] = s.m
            out[f"{prefix}/{i}/v"] = s.v
            out[f"{prefix}/{i}/t"] = np.array([s.t], dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict, prefix: str):
        for i, s in enumerate(self.states):
            s.m = np.array(arrays[f"{prefix}/{i}/m"])
            s.v = np.array(arrays[f"{prefix}/{i}/v"])
            s.t = int(arrays[f"{prefix}/{i}/t"][0])


@dataclass
class RiemannianAdam(Adam):
    """Adam on the Poincare ball for parameters that are ball points."""

    geometry: hypgeo.GeometryConfig = hypgeo.DEFAULT

    def _update(self, p, g, s):
        return riemannian_adam_step(p.data, g, s, self.lr, self.beta1, self.beta2, self.eps, self.geometry)

