"""SO(3)/SE(3) exponential and logarithm maps, group operations, and pose sets.

Twists are 6-vectors ordered ``(omega, v)``: rotation first, translation
second. All map functions are vectorized over leading axes, so a batch of
twists of shape ``(..., 6)`` maps to rotations ``(..., 3, 3)`` and
translations ``(..., 3)``.

The SE(3) maps are the coupled ones: the translational part of a twist is
pushed through the left Jacobian ``V(omega)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, InvalidArgumentError

SMALL_ANGLE = 1e-8
# log() switches to the symmetric-part axis extraction above this angle
NEAR_PI_BRANCH = np.pi - 1e-2
# se3_log refuses rotations this close to pi
PI_MARGIN = 1e-6
ROTATION_TOL = 1e-6


def hat(w):
    """Skew-symmetric matrix of a (batch of) 3-vector(s)."""
    w = np.asarray(w, dtype=float)
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1] = -w[..., 2]
    K[..., 0, 2] = w[..., 1]
    K[..., 1, 0] = w[..., 2]
    K[..., 1, 2] = -w[..., 0]
    K[..., 2, 0] = -w[..., 1]
    K[..., 2, 1] = w[..., 0]
    return K


def vee(K):
    K = np.asarray(K, dtype=float)
    return np.stack([K[..., 2, 1], K[..., 0, 2], K[..., 1, 0]], axis=-1)


def _first_index(mask):
    flat = np.flatnonzero(np.ravel(mask))
    if flat.size == 0:
        return None
    idx = np.unravel_index(flat[0], np.shape(mask))
    return idx[0] if len(idx) == 1 else tuple(int(i) for i in idx)


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite values")


def _exp_coefficients(theta):
    """Return sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with small-angle series."""
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(th) / th)
    half = np.sin(th / 2.0) / (th / 2.0)
    b = np.where(small, 0.5 - t2 / 24.0, 0.5 * half * half)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (th - np.sin(th)) / th**3)
    return a, b, c


def rotation_error(R, tol=ROTATION_TOL):
    """Worst of ||R^T R - I||_F and |det R - 1| over a batch."""
    R = np.asarray(R, dtype=float)
    gram = np.swapaxes(R, -1, -2) @ R - np.eye(3)
    orth = np.sqrt(np.sum(gram * gram, axis=(-2, -1)))
    det = np.abs(np.linalg.det(R) - 1.0)
    return np.maximum(orth, det)


def is_rotation(R, tol=1e-9):
    return bool(np.all(rotation_error(R) <= tol))


def so3_exp(omega):
    """Rodrigues' formula; ``omega`` has shape (..., 3)."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape[-1:] != (3,):
        raise InvalidArgumentError(f"so3_exp expects (..., 3), got {omega.shape}")
    _check_finite(omega, "rotation vector")
    theta = np.linalg.norm(omega, axis=-1)
    a, b, _ = _exp_coefficients(theta)
    K = hat(omega)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_log(R, check=True):
    """Principal rotation vector of ``R`` (norm in [0, pi])."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidArgumentError(f"so3_log expects (..., 3, 3), got {R.shape}")
    _check_finite(R, "rotation")
    if check:
        err = rotation_error(R)
        bad = err > ROTATION_TOL
        if np.any(bad):
            raise InvalidArgumentError(
                f"matrix is not a rotation (error {np.max(err):.2e}) at index {_first_index(bad)}"
            )
    w = vee(R - np.swapaxes(R, -1, -2))  # 2 sin(theta) * axis
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < SMALL_ANGLE
    # s vanishes at theta = pi too; that case is overwritten by the near-pi branch
    safe_s = np.where(small | (s == 0.0), 1.0, s)
    scale = np.where(small, 0.5 * (1.0 + theta * theta / 6.0), theta / (2.0 * safe_s))
    out = scale[..., None] * w

    near_pi = theta > NEAR_PI_BRANCH
    if np.any(near_pi):
        Rn = R[near_pi]
        cn = c[near_pi]
        sym = 0.5 * (Rn + np.swapaxes(Rn, -1, -2))
        B = (sym - cn[:, None, None] * np.eye(3)) / (1.0 - cn)[:, None, None]
        diag = np.diagonal(B, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        rows = np.arange(len(k))
        axis = B[rows, :, k] / np.sqrt(diag[rows, k])[:, None]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        sign = np.where(np.sum(axis * w[near_pi], axis=-1) < 0.0, -1.0, 1.0)
        out[near_pi] = (sign * theta[near_pi])[:, None] * axis
    return out


def se3_exp(xi):
    """Exponential of twists ``(..., 6)`` -> ``(R, t)`` with shapes (..., 3, 3), (..., 3)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (6,):
        raise InvalidArgumentError(f"se3_exp expects (..., 6), got {xi.shape}")
    _check_finite(xi, "twist")
    omega, v = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(omega, axis=-1)
    a, b, c = _exp_coefficients(theta)
    K = hat(omega)
    K2 = K @ K
    eye = np.eye(3)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2
    V = eye + b[..., None, None] * K + c[..., None, None] * K2
    t = np.einsum("...ij,...j->...i", V, v)
    return R, t


def se3_log(R, t, check=True):
    """Logarithm of rigid transforms; raises DomainError for angles within 1e-6 of pi."""
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_finite(t, "translation")
    omega = so3_log(R, check=check)
    theta = np.linalg.norm(omega, axis=-1)
    bad = theta >= np.pi - PI_MARGIN
    if np.any(bad):
        raise DomainError("rotation angle too close to pi for a unique logarithm", _first_index(bad))
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    half = th / 2.0
    # 1 - (t sin t) / (2 (1 - cos t)) = 1 - (t/2) cot(t/2)
    d = np.where(small, 1.0 / 12.0 + theta * theta / 720.0, (1.0 - half * np.cos(half) / np.sin(half)) / (th * th))
    K = hat(omega)
    Vinv = np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)
    v = np.einsum("...ij,...j->...i", Vinv, t)
    return np.concatenate([omega, v], axis=-1)


def project_to_so3(M):
    """Nearest rotation to ``M`` in Frobenius norm, via SVD with a determinant fix."""
    M = np.asarray(M, dtype=float)
    if M.shape[-2:] != (3, 3):
        raise InvalidArgumentError(f"project_to_so3 expects (..., 3, 3), got {M.shape}")
    _check_finite(M, "matrix")
    U, S, Vt = np.linalg.svd(M)
    if np.any(S[..., -1] <= 1e-12):
        raise DegenerateInputError(f"rank-deficient matrix at index {_first_index(S[..., -1] <= 1e-12)}")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.ones(M.shape[:-2] + (3,))
    D[..., 2] = d
    return (U * D[..., None, :]) @ Vt


def random_rotations(rng, size=None):
    """Rotations drawn uniformly (Haar) on SO(3) from normalized Gaussian quaternions."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(shape + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A single SE(3) element: ``p -> R @ p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def exp(cls, xi):
        R, t = se3_exp(np.asarray(xi, dtype=float).reshape(6))
        return cls(R, t)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def log(self):
        return se3_log(self.R, self.t)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def compose(self, other):
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    __matmul__ = compose

    def inverse(self):
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.t)

    def apply(self, p):
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def angle(self):
        """Rotation angle in radians."""
        return float(np.linalg.norm(so3_log(self.R, check=False)))

    def __repr__(self):
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"


class PoseSet:
    """An ordered collection of N rigid transforms stored as stacked arrays."""

    __slots__ = ("R", "t")

    def __init__(self, R, t):
        R = np.array(R, dtype=float)
        t = np.array(t, dtype=float)
        if R.ndim != 3 or R.shape[1:] != (3, 3) or t.shape != (R.shape[0], 3):
            raise InvalidArgumentError(f"bad pose set shapes {R.shape}, {t.shape}")
        R.flags.writeable = False
        t.flags.writeable = False
        self.R = R
        self.t = t

    @classmethod
    def from_transforms(cls, transforms):
        transforms = list(transforms)
        return cls(np.stack([T.R for T in transforms]), np.stack([T.t for T in transforms]))

    @classmethod
    def identity(cls, n):
        return cls(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)))

    @classmethod
    def exp(cls, xi):
        R, t = se3_exp(np.asarray(xi, dtype=float).reshape(-1, 6))
        return cls(R, t)

    def log(self):
        return se3_log(self.R, self.t)

    def __len__(self):
        return self.R.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return PoseSet(self.R[i], self.t[i])
        return RigidTransform(self.R[i], self.t[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def compose(self, other):
        """Scan-wise product ``self[i] @ other[i]``."""
        _check_same_length(self, other)
        return PoseSet(self.R @ other.R, np.einsum("nij,nj->ni", self.R, other.t) + self.t)

    __matmul__ = compose

    def inverse(self):
        Rt = np.swapaxes(self.R, -1, -2)
        return PoseSet(Rt, -np.einsum("nij,nj->ni", Rt, self.t))

    def left_multiply(self, G):
        """Apply a common transform ``G`` on the left of every pose."""
        return PoseSet(G.R @ self.R, self.t @ G.R.T + G.t)

    def permute(self, perm):
        perm = np.asarray(perm)
        return PoseSet(self.R[perm], self.t[perm])

    def matrices(self):
        M = np.tile(np.eye(4), (len(self), 1, 1))
        M[:, :3, :3] = self.R
        M[:, :3, 3] = self.t
        return M

    def max_deviation(self, other):
        _check_same_length(self, other)
        return float(max(np.max(np.abs(self.R - other.R)), np.max(np.abs(self.t - other.t))))

    def __repr__(self):
        return f"PoseSet(n={len(self)})"


def _check_same_length(a, b):
    if len(a) != len(b):
        raise InvalidArgumentError(f"pose sets differ in length: {len(a)} vs {len(b)}")


def compose(T1, T2):
    return T1.compose(T2)


def inverse(T):
    return T.inverse()


def apply(T, p):
    return T.apply(p)


def pose_interpolate(w, T0, Tprior):
    """Geodesic interpolant ``Exp((1-w) Log(Tprior T0^-1)) T0``.

    ``w = 1`` returns ``T0`` and ``w = 0`` returns ``Tprior``. Accepts either
    single transforms or equal-length :class:`PoseSet` instances.
    """
    if not 0.0 <= w <= 1.0:
        raise InvalidArgumentError(f"interpolation weight must lie in [0, 1], got {w}")
    single = isinstance(T0, RigidTransform)
    if single:
        T0 = PoseSet.from_transforms([T0])
        Tprior = PoseSet.from_transforms([Tprior])
    _check_same_length(T0, Tprior)
    if w == 1.0:
        out = T0
    elif w == 0.0:
        out = Tprior
    else:
        rel = Tprior.compose(T0.inverse())
        out = PoseSet.exp((1.0 - w) * rel.log()).compose(T0)
    return out[0] if single else out


def sample_random_pose(rng, rot_scale, trans_scale, n=None):
    """Exp of a Gaussian twist with per-component stdevs ``rot_scale`` (rad) and ``trans_scale`` (m).

    Returns a :class:`RigidTransform`, or a :class:`PoseSet` of ``n`` draws.
    """
    if rot_scale < 0 or trans_scale < 0:
        raise InvalidArgumentError("sampling scales must be non-negative")
    count = 1 if n is None else n
    xi = rng.standard_normal((count, 6))
    xi[:, :3] *= rot_scale
    xi[:, 3:] *= trans_scale
    poses = PoseSet.exp(xi)
    return poses[0] if n is None else poses
