"""Direct least-squares ellipse fitting and the geometric oocyte descriptors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    EmptyInput,
    InsufficientPoints,
    MissingCytoplasm,
    MissingZona,
    NonpositiveArea,
)
from .imagery import Label
from .morphology import (
    POLAR_BODY_MIN_AREA,
    Roi,
    boundary_pixels,
    connected_components,
    fill_holes,
    keep_largest,
    suppress_small,
)

GEOMETRY_NAMES = (
    "mu_c", "e_c", "gamma_c", "mu_z", "e_z", "gamma_z",
    "m", "r", "n_pb", "S_pb", "S_cc",
)

# inverse of the constraint matrix restricted to the quadratic terms,
# for the constraint 4ac - b^2 = 1
_C1_INV = np.array([[0.0, 0.0, 0.5], [0.0, -1.0, 0.0], [0.5, 0.0, 0.0]])


@dataclass(frozen=True)
class Ellipse:
    """Ellipse with center ``(cx, cy)``, semi-axes ``a >= b`` and rotation ``theta``.

    ``theta`` is the angle of the major axis measured from the +x axis towards
    +y (image rows grow downward), reduced to ``[0, pi)``.
    """

    cx: float
    cy: float
    a: float
    b: float
    theta: float

    @property
    def center(self) -> tuple[float, float]:
        return self.cx, self.cy

    def contains(self, x, y):
        dx = np.asarray(x, dtype=float) - self.cx
        dy = np.asarray(y, dtype=float) - self.cy
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = (dx * c + dy * s) / self.a
        v = (-dx * s + dy * c) / self.b
        return u * u + v * v <= 1.0

    def sample(self, n: int = 360) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        c, s = math.cos(self.theta), math.sin(self.theta)
        u, v = self.a * np.cos(t), self.b * np.sin(t)
        return np.column_stack([self.cx + u * c - v * s, self.cy + u * s + v * c])


def fit_conic(points) -> np.ndarray:
    """Coefficients ``(A, B, C, D, E, F)`` of the best algebraic ellipse.

    Minimises the algebraic distance subject to ``4AC - B^2 = 1`` using the
    numerically stable block decomposition of the 6x6 scatter matrix. Points
    are expected to be centred and scaled by the caller.
    """
    x, y = points[:, 0], points[:, 1]
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    if np.linalg.cond(s3) > 1e12:
        raise DegenerateConfiguration("scatter matrix is singular (collinear points?)")
    t = -np.linalg.solve(s3, s2.T)
    scatter = s1 + s2 @ t
    _, vecs = np.linalg.eig(_C1_INV @ scatter)
    vecs = np.real(vecs)
    cond = 4.0 * vecs[0] * vecs[2] - vecs[1] ** 2
    valid = np.flatnonzero(cond > 0)
    if valid.size == 0:
        raise DegenerateConfiguration("no elliptical solution")
    # normalise to 4AC - B^2 = 1 and keep the smallest algebraic error
    cands = vecs[:, valid] / np.sqrt(cond[valid])
    cost = np.einsum("ik,ij,jk->k", cands, scatter, cands)
    a1 = cands[:, int(np.argmin(cost))]
    return np.concatenate([a1, t @ a1])


def conic_to_ellipse(coef) -> Ellipse:
    A, B, C, D, E, F = coef
    quad = np.array([[A, B / 2.0], [B / 2.0, C]])
    try:
        cx, cy = np.linalg.solve(2.0 * quad, [-D, -E])
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfiguration("conic has no center") from exc
    f0 = F + (D * cx + E * cy) / 2.0
    if A + C < 0:
        quad, f0 = -quad, -f0
    lam, vec = np.linalg.eigh(quad)
    if lam[0] <= 0 or f0 >= 0:
        raise DegenerateConfiguration("conic is not a real ellipse")
    # smaller eigenvalue belongs to the major axis
    a = math.sqrt(-f0 / lam[0])
    b = math.sqrt(-f0 / lam[1])
    theta = math.atan2(vec[1, 0], vec[0, 0]) % math.pi
    if theta >= math.pi:
        theta = 0.0
    return Ellipse(float(cx), float(cy), a, b, theta)


def fit_ellipse(points) -> Ellipse:
    """Fit an ellipse to ``(x, y)`` points by the direct constrained method."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if len(points) < 6:
        raise InsufficientPoints(f"need at least 6 points, got {len(points)}")
    shift = points.mean(axis=0)
    scale = np.sqrt(((points - shift) ** 2).sum(axis=1).mean())
    if not scale > 0:
        raise DegenerateConfiguration("all points coincide")
    unit = conic_to_ellipse(fit_conic((points - shift) / scale))
    return Ellipse(float(unit.cx * scale + shift[0]), float(unit.cy * scale + shift[1]),
                   float(unit.a * scale), float(unit.b * scale), float(unit.theta))


def ellipse_features(ell: Ellipse, area: float) -> tuple[float, float, float]:
    """Mean semi-axis, eccentricity and compactness of a fitted ellipse."""
    if not area > 0:
        raise NonpositiveArea(f"component area must be positive, got {area}")
    a, b = max(ell.a, ell.b), min(ell.a, ell.b)
    mu = (a + b) / 2.0
    e = math.sqrt(max(0.0, 1.0 - (b * b) / (a * a)))
    gamma = a * b * math.pi / area
    return mu, e, gamma


def misalignment(c1, c2) -> float:
    return math.hypot(c1[0] - c2[0], c1[1] - c2[1])


def area_ratio(s_c: float, s_z: float) -> float:
    if not s_z > 0:
        raise NonpositiveArea(f"zona area must be positive, got {s_z}")
    return s_c / s_z


def polar_body_features(mask, min_area: int = POLAR_BODY_MIN_AREA) -> tuple[int, int]:
    comps = suppress_small(
        connected_components(np.asarray(mask) == Label.POLAR_BODY), min_area)
    return len(comps), sum(c.area for c in comps)


def cumulus_area(mask) -> int:
    return int(np.count_nonzero(np.asarray(mask) == Label.CUMULUS))


@dataclass(frozen=True)
class GeometricFeatures:
    mu_c: float
    e_c: float
    gamma_c: float
    mu_z: float
    e_z: float
    gamma_z: float
    m: float
    r: float
    n_pb: int
    S_pb: int
    S_cc: int
    cytoplasm_ellipse: Ellipse | None = None
    zona_ellipse: Ellipse | None = None

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, n) for n in GEOMETRY_NAMES)


def largest_component(mask, label: int):
    comps = connected_components(np.asarray(mask) == label, label)
    try:
        return keep_largest(comps)
    except EmptyInput:
        return None


def compute_geometry(roi: Roi, min_polar_body_area: int = POLAR_BODY_MIN_AREA) -> GeometricFeatures:
    mask = roi.mask
    cyto = largest_component(mask, Label.CYTOPLASM)
    if cyto is None:
        raise MissingCytoplasm(f"ROI {roi.roi_id or '?'} has no cytoplasm")
    zona = largest_component(mask, Label.ZONA)
    if zona is None:
        raise MissingZona(f"ROI {roi.roi_id or '?'} has no zona pellucida")

    # the zona is an annulus: fit its outer contour via the filled union
    filled = fill_holes(cyto.to_mask() | zona.to_mask())
    outer = keep_largest(connected_components(filled))

    ell_c = fit_ellipse(boundary_pixels(cyto))
    ell_z = fit_ellipse(boundary_pixels(outer))
    mu_c, e_c, gamma_c = ellipse_features(ell_c, cyto.area)
    mu_z, e_z, gamma_z = ellipse_features(ell_z, outer.area)
    n_pb, s_pb = polar_body_features(mask, min_polar_body_area)
    return GeometricFeatures(
        mu_c, e_c, gamma_c, mu_z, e_z, gamma_z,
        m=misalignment(ell_c.center, ell_z.center),
        r=area_ratio(cyto.area, outer.area),
        n_pb=n_pb, S_pb=s_pb, S_cc=cumulus_area(mask),
        cytoplasm_ellipse=ell_c, zona_ellipse=ell_z,
    )
