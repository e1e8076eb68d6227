"""Interpolation set maintenance and full quadratic models.

The model is ``m(x_k + s) = c0 + g.s + 0.5 s.H.s``, determined by
interpolating ``(n+1)(n+2)/2`` objective values in the monomial basis
``{1, s_i, s_i s_j (i < j), 0.5 s_i^2}`` centred at the current iterate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, DuplicatePoint, InvalidRadius, SingularSystem

# Condition-number ceiling for the (scaled) interpolation matrix.
SINGULAR_COND = 1e14
# Points closer than this (relative to max(1, scale)) are considered identical.
DUPLICATE_TOL = 1e-14


def n_points(n: int) -> int:
    return (n + 1) * (n + 2) // 2


@dataclass
class InterpolationSet:
    points: np.ndarray  # (p, n)
    values: np.ndarray  # (p,)

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float, ndmin=2)
        self.values = np.array(self.values, dtype=float).reshape(-1)
        p, n = self.points.shape
        if p != n_points(n) or self.values.shape != (p,):
            raise DimensionMismatch(
                f"interpolation set needs {n_points(n)} points and values, got {p}/{self.values.size}"
            )

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def index_of(self, x) -> Optional[int]:
        x = np.asarray(x, dtype=float)
        scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
        d = np.max(np.abs(self.points - x), axis=1)
        hits = np.flatnonzero(d <= DUPLICATE_TOL * scale)
        return int(hits[0]) if hits.size else None

    def replace(self, i: int, x, f: float) -> None:
        self.points[i] = x
        self.values[i] = f


@dataclass
class QuadraticModel:
    c0: float
    g: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        H = np.asarray(self.H, dtype=float)
        self.H = 0.5 * (H + H.T)

    @property
    def n(self) -> int:
        return self.g.size

    def gradient(self, s) -> np.ndarray:
        return self.g + self.H @ s


def build_stencil(x_center, delta0: float) -> np.ndarray:
    """Centre, ``+-delta0 e_i`` and ``delta0 (e_i + e_j)`` for ``i < j``."""
    if not delta0 > 0:
        raise InvalidRadius(f"stencil radius must be positive, got {delta0}")
    x = np.asarray(x_center, dtype=float).reshape(-1)
    n = x.size
    eye = np.eye(n)
    pts = [x.copy()]
    for i in range(n):
        pts.append(x + delta0 * eye[i])
        pts.append(x - delta0 * eye[i])
    for i in range(n):
        for j in range(i + 1, n):
            pts.append(x + delta0 * (eye[i] + eye[j]))
    return np.array(pts)


def basis_matrix(S: np.ndarray) -> np.ndarray:
    """Rows ``phi(s)`` for each row ``s`` of ``S``.

    Column order: constant, linear terms, ``0.5 s_i^2`` then ``s_i s_j`` (i<j).
    """
    S = np.atleast_2d(S)
    p, n = S.shape
    iu, ju = np.triu_indices(n, k=1)
    return np.hstack([np.ones((p, 1)), S, 0.5 * S**2, S[:, iu] * S[:, ju]])


def _coeffs_to_model(c0, coef, n):
    g = coef[:n]
    H = np.diag(coef[n : 2 * n])
    iu, ju = np.triu_indices(n, k=1)
    off = coef[2 * n :]
    H[iu, ju] = off
    H[ju, iu] = off
    return QuadraticModel(c0, g, H)


def _center_index(Y, x_k):
    idx = Y.index_of(x_k)
    if idx is None:
        raise ValueError("the current iterate must belong to the interpolation set")
    return idx


def fit_model(Y: InterpolationSet, x_k) -> QuadraticModel:
    """Interpolating quadratic centred at ``x_k``.

    The system is solved in coordinates scaled by the largest distance from
    ``x_k`` (the result is mapped back exactly), and ``c0`` is pinned to the
    stored value at ``x_k``. Raises :class:`SingularSystem` when the scaled
    basis matrix has condition number above ``SINGULAR_COND``.
    """
    x_k = np.asarray(x_k, dtype=float)
    n = Y.n
    k = _center_index(Y, x_k)
    S = Y.points - x_k
    r = float(np.max(np.linalg.norm(S, axis=1)))
    if r == 0.0:
        raise SingularSystem("all interpolation points coincide")
    M = basis_matrix(S / r)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularSystem(f"interpolation matrix condition number {cond:.3e}")

    c0 = float(Y.values[k])
    rows = np.arange(len(Y)) != k
    rhs = Y.values[rows] - c0
    coef = np.linalg.solve(M[rows][:, 1:], rhs)
    # undo the coordinate scaling: linear terms by r, quadratic terms by r^2
    coef[:n] /= r
    coef[n:] /= r * r
    return _coeffs_to_model(c0, coef, n)


def eval_model(model: QuadraticModel, s) -> float:
    s = np.asarray(s, dtype=float)
    if s.shape != model.g.shape:
        raise DimensionMismatch(f"step of shape {s.shape} for a model in R^{model.n}")
    return float(model.c0 + model.g @ s + 0.5 * s @ (model.H @ s))


def poisedness_measure(Y: InterpolationSet, x_k, delta: float) -> float:
    """Reciprocal condition number of the basis matrix on ``(y - x_k) / delta``."""
    S = (Y.points - np.asarray(x_k, dtype=float)) / delta
    sv = np.linalg.svd(basis_matrix(S), compute_uv=False)
    if sv[0] == 0.0 or not np.all(np.isfinite(sv)):
        return 0.0
    return float(sv[-1] / sv[0])


def _farthest(points, x, exclude=None):
    d = np.linalg.norm(points - x, axis=1)
    if exclude is not None:
        d[exclude] = -np.inf
    # argmax returns the first maximiser: lowest index wins ties
    return int(np.argmax(d))


def replace_on_accept(Y: InterpolationSet, x_new, f_new: float) -> int:
    """Evict the point farthest from ``x_new`` and insert ``(x_new, f_new)``.

    Returns the index that was overwritten.
    """
    x_new = np.asarray(x_new, dtype=float)
    if Y.index_of(x_new) is not None:
        raise DuplicatePoint("accepted point is already interpolated")
    i = _farthest(Y.points, x_new)
    Y.replace(i, x_new, f_new)
    return i


def replace_on_reject(Y: InterpolationSet, x_k, trial, f_trial: float) -> int:
    """Evict the point farthest from ``x_k``, never ``x_k`` itself."""
    trial = np.asarray(trial, dtype=float)
    if Y.index_of(trial) is not None:
        raise DuplicatePoint("trial point is already interpolated")
    k = _center_index(Y, x_k)
    i = _farthest(Y.points, np.asarray(x_k, dtype=float), exclude=k)
    Y.replace(i, trial, f_trial)
    return i


def lagrange_polynomial(Y: InterpolationSet, x_k, delta: float, j: int):
    """Quadratic vanishing on every point of ``Y`` except ``y_j``.

    Returned as a coefficient vector in the basis of :func:`basis_matrix`,
    acting on scaled steps ``(x - x_k) / delta`` and normalised so that
    ``|l(y_j)| = 1`` when ``Y`` is poised. The polynomial spans the null space
    of the remaining ``p - 1`` rows, so it is defined even when ``Y`` itself
    is degenerate; replacing ``y_j`` by ``y`` rescales ``|det|`` by ``|l(y)|``.
    """
    S = (Y.points - np.asarray(x_k, dtype=float)) / delta
    M = basis_matrix(S)
    others = np.delete(M, j, axis=0)
    _, sv, vt = np.linalg.svd(others)
    # others is (p-1) x p: its null space is the last right singular vector
    if sv[0] == 0.0 or sv[-1] / sv[0] < 1.0 / SINGULAR_COND:
        raise SingularSystem("remaining interpolation points are degenerate")
    coef = vt[-1]
    at_j = M[j] @ coef
    if abs(at_j) > 1e-300 and abs(at_j) * SINGULAR_COND > np.max(np.abs(coef)):
        coef = coef / at_j
    return coef


def _maximize_abs_quadratic(coef, n, radius=1.0, iters=60):
    """Approximate argmax of |l(s)| over the ball ``||s|| <= radius``.

    Projected gradient ascent from the ``2n`` axis points; deterministic.
    """
    model = _coeffs_to_model(coef[0], coef[1:], n)

    def val(s):
        return eval_model(model, s)

    L = max(np.linalg.norm(model.H, 2), 1e-12)
    best_s, best_v = None, -np.inf
    eye = np.eye(n)
    for start in np.vstack([radius * eye, -radius * eye]):
        s = start.copy()
        sign = 1.0 if val(s) >= 0 else -1.0
        step = 1.0 / L
        v = sign * val(s)
        for _ in range(iters):
            grad = sign * model.gradient(s)
            cand = s + step * grad
            nc = np.linalg.norm(cand)
            if nc > radius:
                cand *= radius / nc
            vc = sign * val(cand)
            if vc > v + 1e-15 * max(1.0, abs(v)):
                s, v = cand, vc
            else:
                step *= 0.5
                if step < 1e-12:
                    break
        if v > best_v:
            best_s, best_v = s, v
    return best_s, best_v


def improve_geometry(
    Y: InterpolationSet,
    x_k,
    delta: float,
    evaluate: Callable[[np.ndarray], float],
) -> bool:
    """Replace the point farthest from ``x_k`` by a maximiser of its Lagrange
    polynomial over the trust region and evaluate the objective there.

    ``evaluate`` is the counted objective (it may raise
    :class:`EvalBudgetExceeded`, which is propagated). Returns ``False``
    without touching ``Y`` or evaluating when the candidate would not improve
    the poisedness measure.
    """
    x_k = np.asarray(x_k, dtype=float)
    n = Y.n
    k = _center_index(Y, x_k)
    j = _farthest(Y.points, x_k, exclude=k)
    coef = lagrange_polynomial(Y, x_k, delta, j)
    s, _ = _maximize_abs_quadratic(coef, n)
    y_new = x_k + delta * s
    if Y.index_of(y_new) is not None:
        return False

    before = poisedness_measure(Y, x_k, delta)
    trial = InterpolationSet(Y.points.copy(), Y.values.copy())
    trial.points[j] = y_new
    if poisedness_measure(trial, x_k, delta) < before:
        return False
    Y.replace(j, y_new, evaluate(y_new))
    return True


def dump_set(writer, k: int, Y: InterpolationSet) -> None:
    """Write one CSV row per interpolation point: iter, index, coords..., f."""
    for i, (y, f) in enumerate(zip(Y.points, Y.values)):
        writer.writerow([k, i, *(repr(float(v)) for v in y), repr(float(f))])


def open_trace(path, n: int):
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["iter", "point"] + [f"x{i + 1}" for i in range(n)] + ["f"])
    return fh, w
