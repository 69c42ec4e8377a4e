"""
Rigid motions on SE(3)
======================

Exponential and logarithm maps, composition, and geodesic interpolation
between two poses.
"""

import numpy as np

from posediff.lie import RigidTransform, pose_interpolate, project_to_so3, se3_exp, se3_log

rng = np.random.default_rng(0)

# a twist is (omega, v): rotation part first
xi = np.array([0.3, -0.2, 0.9, 1.0, 0.5, -2.0])
R, t = se3_exp(xi)
print("rotation angle (rad):", np.linalg.norm(xi[:3]))
print("det R:", np.linalg.det(R))
print("round trip error:", np.abs(se3_log(R, t) - xi).max())

# composition and inverse
A = RigidTransform.exp(xi)
B = RigidTransform.exp(rng.normal(size=6))
I = A @ A.inverse()
print("A A^-1 == I:", np.allclose(I.matrix(), np.eye(4)))
print("(AB)^-1 == B^-1 A^-1:",
      np.allclose((A @ B).inverse().matrix(), (B.inverse() @ A.inverse()).matrix()))

# w weights the target: w=1 gives A, w=0 gives the prior B
for w in (0.0, 0.25, 0.5, 0.75, 1.0):
    Tw = pose_interpolate(w, A, B)
    d = np.linalg.norm((Tw @ A.inverse()).log())
    print(f"w={w:.2f}  distance from A in twist norm: {d:.4f}")

# projecting a noisy matrix back onto SO(3)
M = R + 0.05 * rng.normal(size=(3, 3))
Q = project_to_so3(M)
print("projected is orthonormal:", np.allclose(Q.T @ Q, np.eye(3)), " det:", round(np.linalg.det(Q), 12))
