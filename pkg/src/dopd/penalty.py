"""Penalty maps applied to the aggregate constraint before dual ascent.

A penalty is a coordinate-wise convex map ``F: R^m -> R^m`` carried together
with its Jacobian and the Lipschitz constants that enter the regret bounds.
Constants are declared, never recomputed, so custom penalties must supply
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Union

import numpy as np

PenaltyKind = Union[bool, Literal["approximate"]]


@dataclass(frozen=True)
class PenaltyFunction:
    """Vector penalty with declared constants.

    Attributes
    ----------
    m : int
        Constraint dimension.
    eval : callable
        ``x -> F(x)`` for ``x`` of shape ``(m,)``.
    jacobian : callable
        ``x -> dF(x)`` of shape ``(m, m)``.
    lipschitz : float
        ``L_F``: bound on ``||dF||`` and Lipschitz constant of ``F``.
    grad_lipschitz : float
        ``G_F``: Lipschitz constant of the Jacobian.
    is_penalty : bool or "approximate"
        Whether ``[F(x)]_k > 0`` iff ``x_k > 0`` and zero otherwise.
    satisfies_nonpositivity : bool
        Whether ``F(x) <= 0`` whenever ``x <= 0``.
    rowwise : bool
        Whether ``eval`` also accepts a stack of shape ``(k, m)`` and maps
        each row, which lets the engine evaluate all agents in one call.
    """

    name: str
    m: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    grad_lipschitz: float
    is_penalty: PenaltyKind
    satisfies_nonpositivity: bool
    params: tuple = ()
    rowwise: bool = False

    def __call__(self, x) -> np.ndarray:
        return self.eval(np.asarray(x, dtype=float))

    def spec(self) -> dict:
        """Config dictionary that rebuilds this penalty via :func:`make_penalty`."""
        return {"name": self.name, **dict(self.params)}


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not mu > 0 or not math.isfinite(mu):
        raise ValueError(f"smoothing parameter mu must be positive, got {mu}")
    return mu


def _rows(x, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (m,):
        raise ValueError(f"expected trailing dimension {m}, got shape {x.shape}")
    return x


def _diag_jacobian(d: np.ndarray) -> np.ndarray:
    return d[..., :, None] * np.eye(d.shape[-1])


def _check_m(m: int) -> int:
    if int(m) != m or m < 1:
        raise ValueError(f"penalty dimension must be a positive integer, got {m}")
    return int(m)


def smooth_max_eval(x, mu: float):
    """Smooth surrogate of ``max(x, 0)``, applied element-wise.

    Quadratic ``(x + mu)^2 / (4 mu)`` on ``[-mu, mu]``, ``x`` above ``mu``
    and zero below ``-mu``.
    """
    mu = _check_mu(mu)
    x = np.asarray(x, dtype=float)
    out = np.where(x > mu, x, (x + mu) ** 2 / (4.0 * mu))
    out = np.where(x < -mu, 0.0, out)
    return out if out.ndim else float(out)


def smooth_max_grad(x, mu: float):
    """Derivative of :func:`smooth_max_eval`; values lie in ``[0, 1]``."""
    mu = _check_mu(mu)
    x = np.asarray(x, dtype=float)
    out = np.clip((x + mu) / (2.0 * mu), 0.0, 1.0)
    return out if out.ndim else float(out)


def identity_penalty(m: int) -> PenaltyFunction:
    """``F(x) = x``; the dual step reduces to Arrow-Hurwicz-Uzawa."""
    m = _check_m(m)
    eye = np.eye(m)
    return PenaltyFunction(
        name="identity",
        m=m,
        eval=lambda x: _rows(x, m).copy(),
        jacobian=lambda x: np.broadcast_to(eye, _rows(x, m).shape + (m,)).copy(),
        lipschitz=1.0,
        grad_lipschitz=0.0,
        is_penalty=False,
        satisfies_nonpositivity=True,
        rowwise=True,
    )


def smooth_max_penalty(m: int, mu: float = 0.001) -> PenaltyFunction:
    """Coordinate-wise smooth max with ``L_F = sqrt(m)``, ``G_F = sqrt(m)/mu``.

    The surrogate is positive on ``(-mu, 0]``, so it is only an approximate
    penalty and does not map nonpositive vectors to nonpositive vectors.
    """
    m = _check_m(m)
    mu = _check_mu(mu)
    return PenaltyFunction(
        name="smooth_max",
        m=m,
        eval=lambda x: smooth_max_eval(_rows(x, m), mu),
        jacobian=lambda x: _diag_jacobian(smooth_max_grad(_rows(x, m), mu)),
        lipschitz=math.sqrt(m),
        grad_lipschitz=math.sqrt(m) / mu,
        is_penalty="approximate",
        satisfies_nonpositivity=False,
        params=(("mu", mu),),
        rowwise=True,
    )


def strict_smooth_max_penalty(m: int, mu: float = 0.001) -> PenaltyFunction:
    """Smooth max shifted right by ``mu`` so that it vanishes exactly on ``x <= 0``.

    ``F(x) = smooth_max_eval(x - mu, mu)``: zero for ``x <= 0``, ``x^2/(4 mu)``
    on ``[0, 2 mu]`` and ``x - mu`` above. Same constants as the unshifted map.
    """
    m = _check_m(m)
    mu = _check_mu(mu)
    return PenaltyFunction(
        name="strict_smooth_max",
        m=m,
        eval=lambda x: smooth_max_eval(_rows(x, m) - mu, mu),
        jacobian=lambda x: _diag_jacobian(smooth_max_grad(_rows(x, m) - mu, mu)),
        lipschitz=math.sqrt(m),
        grad_lipschitz=math.sqrt(m) / mu,
        is_penalty=True,
        satisfies_nonpositivity=True,
        params=(("mu", mu),),
        rowwise=True,
    )


_FACTORIES = {
    "identity": lambda m, **kw: identity_penalty(m),
    "smooth_max": lambda m, mu=0.001: smooth_max_penalty(m, mu),
    "strict_smooth_max": lambda m, mu=0.001: strict_smooth_max_penalty(m, mu),
}


def make_penalty(spec: dict | str, m: int) -> PenaltyFunction:
    """Build a penalty from a config entry such as ``{"name": "smooth_max", "mu": 0.001}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in _FACTORIES:
        raise ValueError(f"unknown penalty {name!r}; expected one of {sorted(_FACTORIES)}")
    return _FACTORIES[name](m, **spec)
