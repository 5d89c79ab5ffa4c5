"""Poincare-ball geometry (curvature 1).

Points live along the last axis, so every function also works on batches of
shape (..., d).  Functions accept numpy arrays or :class:`~hypad.autodiff.Tensor`
objects; with tensors the result is recorded on the tape.

Every operation that produces a ball point finishes with :func:`clamp_to_ball`,
which keeps points at radius ``<= 1 - ball_margin`` so that the conformal
factor and the distance stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, InvalidValueError

# keeps the radial direction of a zero vector well defined
_MIN_NORM = 1e-15
# rescaled points land a few ulps inside the clamp radius despite rounding
_SHRINK = 1.0 - 1e-15


@dataclass(frozen=True)
class GeometryConfig:
    curvature_c: float = 1.0
    ball_margin: float = 1e-5
    acosh_eps: float = 1e-7

    def __post_init__(self):
        if self.curvature_c != 1.0:
            raise ContractError("only the unit ball (curvature 1) is supported")
        if not 0.0 < self.ball_margin < 1e-2:
            raise ContractError(f"ball_margin must lie in (0, 1e-2), got {self.ball_margin}")
        if not self.acosh_eps > 0.0:
            raise ContractError("acosh_eps must be positive")

    @property
    def max_radius(self) -> float:
        return 1.0 - self.ball_margin


DEFAULT = GeometryConfig()


def _data(x):
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)


def sq_norm(x):
    return ad.sum(ad.square(x), axis=-1, keepdims=True)


def clamp_to_ball(v, cfg: GeometryConfig = DEFAULT):
    """Rescale vectors longer than ``1 - ball_margin`` onto that radius."""
    if not np.all(np.isfinite(_data(v))):
        raise InvalidValueError("clamp_to_ball: non-finite input")
    r = cfg.max_radius * _SHRINK
    norm = ad.clip_min(ad.norm2(v), _MIN_NORM)
    # scale = min(1, r / |v|); r / |v| < 1 exactly when the point is outside
    return ad.mul(v, ad.clip_max(ad.div(r, norm), 1.0))


def conformal_factor(x):
    """``2 / (1 - |x|^2)``, the scale of the ball metric at ``x``."""
    lam = ad.div(2.0, ad.sub(1.0, sq_norm(x)))
    return ad.reshape(lam, lam.shape[:-1]) if isinstance(lam, ad.Tensor) else lam[..., 0]


def exp_map_0(v, cfg: GeometryConfig = DEFAULT):
    """Exponential map at the origin: ``tanh(|v|) v / |v|``, clamped."""
    norm = ad.clip_min(ad.norm2(v), _MIN_NORM)
    return clamp_to_ball(ad.mul(ad.div(ad.tanh(norm), norm), v), cfg)


def log_map_0(x):
    """Logarithmic map at the origin: ``artanh(|x|) x / |x|``."""
    norm = ad.clip_min(ad.norm2(x), _MIN_NORM)
    return ad.mul(ad.div(ad.artanh(norm), norm), x)


def mobius_add(a, b, cfg: GeometryConfig = DEFAULT):
    """Mobius (gyro) addition ``a (+) b``, clamped to the ball."""
    ab = ad.sum(ad.mul(a, b), axis=-1, keepdims=True)
    a2 = sq_norm(a)
    b2 = sq_norm(b)
    num = ad.add(ad.mul(ad.add(ad.add(1.0, ad.mul(2.0, ab)), b2), a), ad.mul(ad.sub(1.0, a2), b))
    den = ad.add(ad.add(1.0, ad.mul(2.0, ab)), ad.mul(a2, b2))
    return clamp_to_ball(ad.div(num, den), cfg)


def mobius_matvec(M, x, cfg: GeometryConfig = DEFAULT):
    """Mobius matrix-vector product ``exp_0(M log_0(x))`` for row vectors x.

    ``M`` has shape (d_out, d_in); ``x`` has shape (..., d_in).
    """
    return exp_map_0(ad.matmul(log_map_0(x), ad.transpose(M)), cfg)


def poincare_distance(h, h2, cfg: GeometryConfig = DEFAULT):
    """Geodesic distance on the ball, one value per point pair (last axis reduced)."""
    diff2 = sq_norm(ad.sub(h, h2))
    den = ad.mul(ad.sub(1.0, sq_norm(h)), ad.sub(1.0, sq_norm(h2)))
    arg = ad.add(1.0, ad.mul(2.0, ad.div(diff2, den)))
    d = ad.acosh_stable(arg, grad_floor=1.0 + cfg.acosh_eps)
    return ad.reshape(d, d.shape[:-1]) if isinstance(d, ad.Tensor) else d[..., 0]


def uncertainty(h2):
    """Hyperbolic uncertainty ``1 - |h2|^2``: 1 at the origin, ~0 near the rim."""
    u = ad.sub(1.0, sq_norm(h2))
    return ad.reshape(u, u.shape[:-1]) if isinstance(u, ad.Tensor) else u[..., 0]


def check_ball_point(x, cfg: GeometryConfig = DEFAULT, dim: int | None = None) -> np.ndarray:
    """Validate a ball point (strictly inside the unit ball, optional dimension)."""
    x = np.asarray(_data(x), dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidValueError("ball point has non-finite coordinates")
    if dim is not None and x.shape[-1] != dim:
        raise ContractError(f"expected dimension {dim}, got {x.shape[-1]}")
    if np.any(np.sum(x * x, axis=-1) >= 1.0):
        raise InvalidValueError("point lies on or outside the unit sphere")
    return x
