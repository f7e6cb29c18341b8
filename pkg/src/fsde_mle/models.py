"""Problem instances: the semilinear fractional SDE

    D^alpha X = A X + b(X) + sigma(X) dW/dt,   X(0) = x0,  t in [0, T],

in its Volterra form with kernel ``K(u) = u**(alpha-1) E_{alpha,alpha}(A u**alpha)``.

Coefficient maps act on arrays whose trailing axis is the state, so a whole
block of paths is evaluated in one call:

* ``drift(x)``: ``(..., d) -> (..., d)``
* ``diffusion(x)``: ``(..., d) -> (..., d, m)``
* ``drift_jacobian(x)``: ``(..., d) -> (..., d, d)``, entry ``[j, k] = d b^j / d x_k``
* ``diffusion_jacobian(x)``: ``(..., d) -> (..., d, m, d)``,
  entry ``[j, l, k] = d sigma^j_l / d x_k``

Coefficient maps must be pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidParams, UnknownModel

__all__ = ["ModelSpec", "ValidationReport", "builtin_model", "validate", "MODEL_NAMES"]

Coefficient = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One FSDE problem instance.

    Structural checks (shapes, ``alpha`` in ``(1/2, 1)``) run at
    construction.  Negative definiteness of ``A`` and the Jacobian
    consistency are reported by :func:`validate`; the schemes refuse a model
    whose ``A`` is not negative definite.
    """

    alpha: float
    A: np.ndarray
    drift: Coefficient
    diffusion: Coefficient
    drift_jacobian: Coefficient
    diffusion_jacobian: Coefficient
    x0: np.ndarray
    T: float = 1.0
    name: str = "custom"
    noise_dim: int = field(default=0)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise InvalidParams(f"A must be square, got {A.shape}")
        if x0.shape != (A.shape[0],):
            raise InvalidParams(f"x0 has shape {x0.shape}, expected ({A.shape[0]},)")
        if not (0.5 < self.alpha < 1.0):
            raise InvalidParams(f"alpha must lie in (1/2, 1), got {self.alpha}")
        if not (self.T > 0):
            raise InvalidParams(f"horizon T must be positive, got {self.T}")
        A.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "x0", x0)
        sig = np.asarray(self.diffusion(x0))
        if sig.ndim != 2 or sig.shape[0] != A.shape[0]:
            raise InvalidParams(f"diffusion(x0) has shape {sig.shape}, expected (d, m)")
        object.__setattr__(self, "noise_dim", sig.shape[1])

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.noise_dim

    def with_alpha(self, alpha: float) -> "ModelSpec":
        return ModelSpec(
            alpha, self.A, self.drift, self.diffusion, self.drift_jacobian,
            self.diffusion_jacobian, self.x0, self.T, self.name,
        )


@dataclass
class ValidationReport:
    valid: bool
    violations: list
    lipschitz_drift: float
    lipschitz_diffusion: float
    lipschitz: float
    notes: list = field(default_factory=list)


# built-in coefficients -------------------------------------------------------


def _zero_drift(x):
    return np.zeros_like(x)


def _unit_diffusion(x):
    return np.ones(x.shape + (1,))


def _zero_jac(x):
    return np.zeros(x.shape + (x.shape[-1],))


def _zero_diff_jac(x):
    return np.zeros(x.shape + (1, x.shape[-1]))


def _half_sin(x):
    return 0.5 * np.sin(x)


def _half_sin_jac(x):
    return (0.5 * np.cos(x))[..., None]


def _cos_diffusion(x):
    return (0.5 * np.cos(x) + 1.0)[..., None]


def _cos_diffusion_jac(x):
    return (-0.5 * np.sin(x))[..., None, None]


def _swap_sin(x):
    return 0.5 * np.sin(x[..., ::-1])


def _swap_sin_jac(x):
    out = np.zeros(x.shape + (2,))
    out[..., 0, 1] = 0.5 * np.cos(x[..., 1])
    out[..., 1, 0] = 0.5 * np.cos(x[..., 0])
    return out


def _diag_cos(x):
    out = np.zeros(x.shape + (2,))
    out[..., 0, 0] = 1.0 + 0.5 * np.cos(x[..., 0])
    out[..., 1, 1] = 1.0 + 0.5 * np.cos(x[..., 1])
    return out


def _diag_cos_jac(x):
    out = np.zeros(x.shape + (2, 2))
    out[..., 0, 0, 0] = -0.5 * np.sin(x[..., 0])
    out[..., 1, 1, 1] = -0.5 * np.sin(x[..., 1])
    return out


MODEL_NAMES = ("additive_scalar", "bilinear_scalar", "coupled_2d")


def builtin_model(name: str, alpha: float) -> ModelSpec:
    """Return one of the shipped test problems.

    ``additive_scalar``
        ``A = -1``, ``b = 0``, ``sigma = 1``, ``x0 = 0``.
    ``bilinear_scalar``
        ``A = -1``, ``b = sin(x)/2``, ``sigma = cos(x)/2 + 1``, ``x0 = 1``.
    ``coupled_2d``
        ``A = [[-2, 1], [1, -2]]``, ``b = (sin x2, sin x1)/2``,
        ``sigma = diag(1 + cos(x1)/2, 1 + cos(x2)/2)``, ``x0 = (1, 0)``.
    """
    if name == "additive_scalar":
        return ModelSpec(alpha, [[-1.0]], _zero_drift, _unit_diffusion, _zero_jac,
                         _zero_diff_jac, [0.0], name=name)
    if name == "bilinear_scalar":
        return ModelSpec(alpha, [[-1.0]], _half_sin, _cos_diffusion, _half_sin_jac,
                         _cos_diffusion_jac, [1.0], name=name)
    if name == "coupled_2d":
        return ModelSpec(alpha, [[-2.0, 1.0], [1.0, -2.0]], _swap_sin, _diag_cos,
                         _swap_sin_jac, _diag_cos_jac, [1.0, 0.0], name=name)
    raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")


def is_negative_definite(A) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < 0))


def _fd_jacobian(f, x, step):
    d = x.shape[-1]
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def validate(model: ModelSpec, *, points: int = 20, pairs: int = 10_000, seed: int = 0,
             step: float = 1e-6, rtol: float = 1e-5) -> ValidationReport:
    """Sample-check the model against its structural assumptions.

    Checks negative definiteness of ``A`` and compares both Jacobians with
    central differences at ``points`` random states.  Lipschitz constants
    are estimated as the largest difference quotient over ``pairs`` close
    random pairs; they are reported, never enforced.  Uniform continuity of
    the derivatives cannot be sampled and is listed as an untested note.
    Never raises on a bad model; problems land in ``violations``.
    """
    violations = []
    if not is_negative_definite(model.A):
        violations.append("A is not negative definite")
    rng = np.random.default_rng(seed)
    d = model.d
    xs = model.x0 + 2.0 * rng.standard_normal((points, d))
    try:
        for x in xs:
            for label, f, jac in (
                ("drift", model.drift, model.drift_jacobian),
                ("diffusion", model.diffusion, model.diffusion_jacobian),
            ):
                exact = np.asarray(jac(x), dtype=float)
                approx = _fd_jacobian(f, x, step)
                if exact.shape != approx.shape:
                    violations.append(f"{label} jacobian has shape {exact.shape}, "
                                      f"expected {approx.shape}")
                    break
                err = np.max(np.abs(exact - approx))
                if err > rtol * max(1.0, np.max(np.abs(exact))):
                    violations.append(f"{label} jacobian mismatch {err:.2e} at x={x.tolist()}")
                    break
    except Exception as exc:  # a user-supplied coefficient blew up
        violations.append(f"coefficient evaluation failed: {exc!r}")

    x = model.x0 + 3.0 * rng.uniform(-1.0, 1.0, (pairs, d))
    dx = 1e-3 * rng.standard_normal((pairs, d))
    y = x + dx
    dist = np.linalg.norm(dx, axis=-1)
    db = np.linalg.norm(model.drift(x) - model.drift(y), axis=-1)
    ds = np.linalg.norm(model.diffusion(x) - model.diffusion(y), axis=(-2, -1))
    report = ValidationReport(
        valid=not violations,
        violations=violations,
        lipschitz_drift=float(np.max(db / dist)),
        lipschitz_diffusion=float(np.max(ds / dist)),
        lipschitz=float(np.max((db + ds) / dist)),
        notes=["uniform continuity of the coefficient derivatives is assumed, not tested"],
    )
    return report
