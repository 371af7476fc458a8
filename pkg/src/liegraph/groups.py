"""Group elements, logarithmic maps and anisotropic distances on SE(2) and SO(3).

Both groups are represented by 3x3 matrices: SE(2) as homogeneous planar
transforms, SO(3) as rotation matrices in ZYZ Euler parametrisation
G = R_z(gamma) R_y(beta) R_z(alpha).  Group-algebra coordinates are plain
length-3 numpy arrays (c1, c2, c3); for SE(2) these are the two translation
generators and the rotation generator, for SO(3) the component ordering is
(c1, c2, c3) = theta * (n_x, n_z, n_y) so that c2 always multiplies the
generator of in-place rotations about the reference axis.

Everything numeric is written twice over: a scalar API built on small
dataclasses, and vectorised kernels on parameter / matrix arrays that the
graph builder calls for all-pairs work.  The scalar API delegates to the
kernels so the two cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# Series switch points for the closed-form logs.
SMALL_ANGLE = 1e-6
# Trace threshold below which the SO(3) log falls back to the axis-from-diagonal
# branch (rotation angle within ~1e-4 of pi).
NEAR_PI_TRACE = -1.0 + 1e-8
# sin(beta) below this is treated as a pole of the ZYZ chart (gauge gamma = 0).
POLE_TOL = 1e-12

ORTHO_TOL = 1e-9


class GroupKind(Enum):
    SE2 = "se2"
    SO3 = "so3"


def wrap_angle(theta):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# matrix <-> parameter kernels


def se2_matrices(params: np.ndarray) -> np.ndarray:
    """(..., 3) arrays of (x, y, theta) to homogeneous matrices (..., 3, 3)."""
    params = np.asarray(params, dtype=float)
    x, y, theta = params[..., 0], params[..., 1], params[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(params.shape[:-1] + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 0, 2] = x
    out[..., 1, 2] = y
    out[..., 2, 2] = 1.0
    return out


def se2_params(matrices: np.ndarray) -> np.ndarray:
    matrices = np.asarray(matrices, dtype=float)
    theta = wrap_angle(np.arctan2(matrices[..., 1, 0], matrices[..., 0, 0]))
    return np.stack([matrices[..., 0, 2], matrices[..., 1, 2], theta], axis=-1)


def so3_matrices(params: np.ndarray) -> np.ndarray:
    """ZYZ angles (alpha, beta, gamma) to rotation matrices.

    G = R_z(gamma) R_y(beta) R_z(alpha); acting on the reference axis
    (0, 0, 1) this lands on the unit-sphere point with colatitude beta and
    longitude gamma, independent of alpha.
    """
    params = np.asarray(params, dtype=float)
    a, b, g = params[..., 0], params[..., 1], params[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    out = np.empty(params.shape[:-1] + (3, 3))
    out[..., 0, 0] = cg * cb * ca - sg * sa
    out[..., 0, 1] = -cg * cb * sa - sg * ca
    out[..., 0, 2] = cg * sb
    out[..., 1, 0] = sg * cb * ca + cg * sa
    out[..., 1, 1] = -sg * cb * sa + cg * ca
    out[..., 1, 2] = sg * sb
    out[..., 2, 0] = -sb * ca
    out[..., 2, 1] = sb * sa
    out[..., 2, 2] = cb
    return out


def so3_params(matrices: np.ndarray) -> np.ndarray:
    """ZYZ angles from rotation matrices, pole gauge gamma = 0."""
    m = np.asarray(matrices, dtype=float)
    cb = np.clip(m[..., 2, 2], -1.0, 1.0)
    # atan2 keeps full precision at the poles, where arccos(m22) would lose
    # half the significant digits.
    sb = np.hypot(m[..., 0, 2], m[..., 1, 2])
    beta = np.arctan2(sb, cb)
    regular = sb > POLE_TOL

    gamma = np.where(regular, np.arctan2(m[..., 1, 2], m[..., 0, 2]), 0.0)
    alpha = np.where(regular, np.arctan2(m[..., 2, 1], -m[..., 2, 0]), 0.0)

    # Poles: beta ~ 0 gives G = R_z(gamma + alpha), beta ~ pi gives
    # G = R_z(gamma - alpha) R_y(pi); both get gauge gamma = 0.
    north = ~regular & (cb > 0.0)
    south = ~regular & (cb <= 0.0)
    if np.any(north):
        alpha = np.where(north, np.arctan2(m[..., 1, 0], m[..., 0, 0]), alpha)
    if np.any(south):
        alpha = np.where(south, -np.arctan2(-m[..., 1, 0], -m[..., 0, 0]), alpha)
    return np.stack([wrap_angle(alpha), beta, wrap_angle(gamma)], axis=-1)


# ---------------------------------------------------------------------------
# logarithmic maps


def _half_angle_cot(theta: np.ndarray) -> np.ndarray:
    """(theta/2) * cot(theta/2), even in theta, series below the switch point."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    exact = 0.5 * safe / np.tan(0.5 * safe)
    series = 1.0 - theta * theta / 12.0
    return np.where(small, series, exact)


def se2_log_params(x, y, theta) -> np.ndarray:
    """Closed-form SE(2) log; theta is used as given, without wrapping.

    Callers pass theta outside [-pi, pi) on purpose when probing the
    pi-shifted branches of the orientation coordinate.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    h = _half_angle_cot(theta)
    c1 = h * x + 0.5 * theta * y
    c2 = -0.5 * theta * x + h * y
    return np.stack([c1, c2, np.broadcast_to(theta, c1.shape).copy()], axis=-1)


def so3_log_matrices(matrices: np.ndarray) -> np.ndarray:
    """Principal SO(3) log from the antisymmetric part.

    Returns (c1, c2, c3) = theta * (n_x, n_z, n_y).  Uses the even series of
    theta / (2 sin theta) below SMALL_ANGLE and recovers the axis from the
    dominant diagonal of (G + I)/2 when the trace is within NEAR_PI_TRACE
    of -1.
    """
    m = np.asarray(matrices, dtype=float)
    tr = np.asarray(m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2])
    cos_t = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)

    a1 = m[..., 2, 1] - m[..., 1, 2]
    a2 = m[..., 1, 0] - m[..., 0, 1]
    a3 = m[..., 0, 2] - m[..., 2, 0]
    # |sin theta| from the antisymmetric part; atan2 stays fully accurate at
    # both ends of [0, pi], where arccos of the trace loses half the digits.
    sin_norm = 0.5 * np.sqrt(a1 * a1 + a2 * a2 + a3 * a3)
    theta = np.arctan2(sin_norm, cos_t)

    small = np.abs(theta) < SMALL_ANGLE
    sin_t = np.sin(np.where(small, 1.0, theta))
    factor = np.where(small, 0.5 + theta * theta / 12.0, theta / (2.0 * sin_t))
    c = np.stack([a1, a2, a3], axis=-1) * factor[..., None]

    near_pi = tr <= NEAR_PI_TRACE
    if np.any(near_pi):
        flat = m[near_pi].reshape(-1, 3, 3)
        # Symmetrize first: the O(sin theta) antisymmetric part would
        # otherwise pollute the off-diagonal axis products.
        b = 0.5 * (0.5 * (flat + flat.transpose(0, 2, 1)) + np.eye(3))
        diag = np.clip(np.stack([b[:, 0, 0], b[:, 1, 1], b[:, 2, 2]], axis=1), 0.0, None)
        lead = np.argmax(diag, axis=1)
        rows = np.arange(flat.shape[0])
        axis = np.empty((flat.shape[0], 3))
        axis[rows, lead] = np.sqrt(diag[rows, lead])
        for j in range(3):
            off = lead != j
            axis[off, j] = b[off, j, lead[off]] / axis[off, lead[off]]
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        # Orient the axis to agree with the (tiny) antisymmetric part.
        asym = np.stack([flat[:, 2, 1] - flat[:, 1, 2],
                         flat[:, 1, 0] - flat[:, 0, 1],
                         flat[:, 0, 2] - flat[:, 2, 0]], axis=1)
        perm_axis = axis[:, [0, 2, 1]]
        flip = np.sum(perm_axis * asym, axis=1) < 0.0
        perm_axis[flip] *= -1.0
        c[near_pi] = theta[near_pi][..., None] * perm_axis
    return c


def sphere_log_matrices(matrices: np.ndarray) -> np.ndarray:
    """Log of the torsion-free sphere transport R_z(gamma) R_y(beta) R_z(-gamma).

    Only the image point G.(0,0,1) enters, so the result is independent of the
    alpha coordinate and its orientation component c2 vanishes identically.
    """
    m = np.asarray(matrices, dtype=float)
    ux, uy, uz = m[..., 0, 2], m[..., 1, 2], m[..., 2, 2]
    beta = np.arccos(np.clip(uz, -1.0, 1.0))
    sb = np.hypot(ux, uy)
    regular = sb > POLE_TOL
    cg = np.where(regular, ux / np.where(regular, sb, 1.0), 1.0)
    sg = np.where(regular, uy / np.where(regular, sb, 1.0), 0.0)
    c1 = -beta * sg
    c3 = beta * cg
    return np.stack([c1, np.zeros_like(c1), c3], axis=-1)


# ---------------------------------------------------------------------------
# metric


@dataclass(frozen=True)
class Metric:
    """Diagonal left-invariant metric diag(1, epsilon^-2, xi^2), uniformly
    scaled by scale^2.

    The weight triple is stated in SE(2) component order (two spatial slots,
    then orientation).  so3_weight_order says which weight lands on which
    SO(3) log component; the default (0, 2, 1) puts xi^2 on c2, the
    orientation slot of the (c1, c2, c3) = theta*(n_x, n_z, n_y) ordering.
    """

    epsilon: float = 1.0
    xi: float = 1.0
    scale: float = 1.0
    so3_weight_order: tuple[int, int, int] = (0, 2, 1)

    def __post_init__(self):
        if not (self.epsilon > 0.0 and self.xi > 0.0 and self.scale > 0.0):
            raise ValueError("metric parameters must be positive")
        if sorted(self.so3_weight_order) != [0, 1, 2]:
            raise ValueError("so3_weight_order must be a permutation of (0, 1, 2)")

    def weights(self, kind: GroupKind) -> np.ndarray:
        base = np.array([1.0, self.epsilon ** -2.0, self.xi ** 2.0])
        base *= self.scale ** 2.0
        if kind is GroupKind.SO3:
            return base[list(self.so3_weight_order)]
        return base

    def is_isotropic(self) -> bool:
        return self.epsilon == 1.0 and self.xi == 1.0


def metric_norm(c: np.ndarray, metric: Metric, kind: GroupKind) -> np.ndarray:
    """Weighted norm of algebra coordinates (..., 3)."""
    w = metric.weights(kind)
    c = np.asarray(c, dtype=float)
    return np.sqrt(w[0] * c[..., 0] ** 2 + w[1] * c[..., 1] ** 2 + w[2] * c[..., 2] ** 2)


# ---------------------------------------------------------------------------
# pairwise squared-distance kernels (graph construction hot path)


def se2_pair_sq(params_a, params_b, weights) -> np.ndarray:
    """Squared anisotropic distances between aligned parameter arrays.

    Broadcasting shapes are the caller's business: (A, 1, 3) against (B, 3)
    gives the full block, two (n, 3) arrays give elementwise pairs.  The
    orientation coordinate of the relative element is probed at the three
    branches theta, theta - pi, theta + pi and the smallest squared norm wins.
    """
    pa = np.asarray(params_a, dtype=float)
    pb = np.asarray(params_b, dtype=float)
    dx = pb[..., 0] - pa[..., 0]
    dy = pb[..., 1] - pa[..., 1]
    ct, st = np.cos(pa[..., 2]), np.sin(pa[..., 2])
    xr = ct * dx + st * dy
    yr = -st * dx + ct * dy
    dth = wrap_angle(pb[..., 2] - pa[..., 2])
    w0, w1, w2 = weights
    best = None
    for off in (0.0, -np.pi, np.pi):
        th = dth + off
        h = _half_angle_cot(th)
        c1 = h * xr + 0.5 * th * yr
        c2 = -0.5 * th * xr + h * yr
        d2 = w0 * c1 * c1 + w1 * c2 * c2 + w2 * th * th
        best = d2 if best is None else np.minimum(best, d2)
    return best


def _so3_weighted_sq(rel: np.ndarray, weights) -> np.ndarray:
    c = so3_log_matrices(rel)
    w0, w1, w2 = weights
    return w0 * c[..., 0] ** 2 + w1 * c[..., 1] ** 2 + w2 * c[..., 2] ** 2


def so3_pair_sq(mats_a, mats_b, weights) -> np.ndarray:
    """Squared distances for rotation-matrix arrays (..., 3, 3).

    The +/- pi shifts of the relative alpha both equal a right multiplication
    by R_z(pi) = diag(-1, -1, 1), so exactly two candidate branches exist.
    """
    rel = np.einsum("...ji,...jk->...ik", mats_a, mats_b)
    d2 = _so3_weighted_sq(rel, weights)
    flipped = rel * np.array([-1.0, -1.0, 1.0])
    return np.minimum(d2, _so3_weighted_sq(flipped, weights))


def sphere_pair_sq(mats_a, mats_b, weights) -> np.ndarray:
    """Squared sphere-transport distances; depends only on the image points."""
    u = np.asarray(mats_b, dtype=float)[..., :, 2]
    v = np.einsum("...ji,...j->...i", np.asarray(mats_a, dtype=float), u)
    beta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    sb = np.hypot(v[..., 0], v[..., 1])
    safe = np.where(sb > POLE_TOL, sb, 1.0)
    cg = np.where(sb > POLE_TOL, v[..., 0] / safe, 1.0)
    sg = np.where(sb > POLE_TOL, v[..., 1] / safe, 0.0)
    w0, _, w2 = weights
    c1 = -beta * sg
    c3 = beta * cg
    return w0 * c1 * c1 + w2 * c3 * c3


# ---------------------------------------------------------------------------
# scalar element API


@dataclass(frozen=True, eq=False)
class GroupElement:
    """One group element: canonical parameters plus the matrix they rebuild."""

    kind: GroupKind
    params: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        self.params.setflags(write=False)
        self.matrix.setflags(write=False)


def se2_element(x: float, y: float, theta: float) -> GroupElement:
    p = np.array([float(x), float(y), float(wrap_angle(theta))])
    return GroupElement(GroupKind.SE2, p, se2_matrices(p))


def so3_element(alpha: float, beta: float, gamma: float) -> GroupElement:
    if not 0.0 <= beta <= np.pi:
        raise ValueError(f"beta must lie in [0, pi], got {beta}")
    p = np.array([float(wrap_angle(alpha)), float(beta), float(wrap_angle(gamma))])
    return GroupElement(GroupKind.SO3, p, so3_matrices(p))


def identity(kind: GroupKind) -> GroupElement:
    if kind is GroupKind.SE2:
        return se2_element(0.0, 0.0, 0.0)
    return so3_element(0.0, 0.0, 0.0)


def from_matrix(kind: GroupKind, matrix: np.ndarray) -> GroupElement:
    """Build an element from a 3x3 matrix, validating group membership."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    if kind is GroupKind.SE2:
        r = m[:2, :2]
        if not np.allclose(m[2], [0.0, 0.0, 1.0], atol=ORTHO_TOL):
            raise ValueError("last row of an SE(2) matrix must be (0, 0, 1)")
        if not np.allclose(r.T @ r, np.eye(2), atol=ORTHO_TOL) or np.linalg.det(r) < 0.0:
            raise ValueError("rotation block is not special orthogonal")
        p = se2_params(m)
        return GroupElement(kind, p, se2_matrices(p))
    if not np.allclose(m.T @ m, np.eye(3), atol=ORTHO_TOL) or np.linalg.det(m) < 0.0:
        raise ValueError("matrix is not special orthogonal")
    p = so3_params(m)
    return GroupElement(kind, p, so3_matrices(p))


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    if g.kind is not h.kind:
        raise ValueError("cannot compose elements of different groups")
    return from_matrix(g.kind, g.matrix @ h.matrix)


def inverse(g: GroupElement) -> GroupElement:
    if g.kind is GroupKind.SE2:
        r = g.matrix[:2, :2]
        m = np.eye(3)
        m[:2, :2] = r.T
        m[:2, 2] = -r.T @ g.matrix[:2, 2]
        return from_matrix(g.kind, m)
    return from_matrix(g.kind, g.matrix.T)


def group_log(g: GroupElement) -> np.ndarray:
    """Principal logarithm of one element as algebra coordinates."""
    if g.kind is GroupKind.SE2:
        x, y, theta = g.params
        return se2_log_params(x, y, theta)
    return so3_log_matrices(g.matrix)


def sphere_log(g: GroupElement) -> np.ndarray:
    """Torsion-free sphere log of an SO(3) element (orientation slot is zero)."""
    if g.kind is not GroupKind.SO3:
        raise ValueError("sphere_log is defined for SO(3) elements")
    return sphere_log_matrices(g.matrix)


def distance(g: GroupElement, h: GroupElement, metric: Metric) -> float:
    """Approximate left-invariant distance ||log(g^-1 h)||, pi-periodic in
    the orientation coordinate."""
    if g.kind is not h.kind:
        raise ValueError("cannot measure distance between different groups")
    w = metric.weights(g.kind)
    if g.kind is GroupKind.SE2:
        d2 = se2_pair_sq(g.params, h.params, w)
    else:
        d2 = so3_pair_sq(g.matrix, h.matrix, w)
    return float(np.sqrt(d2))


def sphere_distance(g: GroupElement, h: GroupElement, metric: Metric) -> float:
    """Distance through the sphere log; ignores both alpha coordinates."""
    if g.kind is not GroupKind.SO3 or h.kind is not GroupKind.SO3:
        raise ValueError("sphere_distance is defined for SO(3) elements")
    w = metric.weights(GroupKind.SO3)
    return float(np.sqrt(sphere_pair_sq(g.matrix, h.matrix, w)))
