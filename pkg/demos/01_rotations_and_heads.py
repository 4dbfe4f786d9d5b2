"""Rotation geometry, the three output heads, and what the QCQP head's matrix says about confidence.

Run: python3 demos/01_rotations_and_heads.py
"""
import numpy as np

from cryorient import so3
from cryorient.rep_heads import head_6d, head_quat, qcqp_build_A, qcqp_forward
from cryorient.uncertainty import dispersions

# Distances between rotations live in [0, pi].  Two independent uniform
# rotations sit about 2.31 rad apart at the median, which is the score of a
# model that guesses at random.
q = so3.sample_uniform(seed=0, n=10_000)
r = so3.sample_uniform(seed=1, n=10_000)
print(f"random-pair median distance: {np.median(so3.geodesic_distance(q, r)):.3f} rad")

# q and -q are the same rotation.
print("d(q, -q) =", so3.geodesic_distance(q[0], -q[0]))

# A quarter turn about x, written as ZYZ Euler angles and back.
qx = so3.axis_rotation([1, 0, 0], np.pi / 2)
e = so3.quat_to_euler_zyz(qx)
back = so3.canonical_sign(so3.euler_zyz_to_quat(e))
print("quarter turn about x, ZYZ =", np.round(e, 4), "-> back:", np.round(back, 6))

# Three ways to turn raw network outputs into a unit quaternion.
rng = np.random.default_rng(3)
print("normalised 4-vector:", np.round(head_quat(rng.normal(size=4)), 4))
print("Gram-Schmidt 6D    :", np.round(head_6d(rng.normal(size=6)), 4))
theta = rng.normal(size=10)
print("QCQP (10 numbers)  :", np.round(qcqp_forward(theta)[0], 4))

# The QCQP head builds a PSD matrix A and returns its lowest eigenvector.
# The eigenvalue spread doubles as a Bingham concentration: more negative
# dispersions mean a sharper, more confident prediction.
for scale in (0.3, 3.0):
    A = qcqp_build_A(scale * theta)
    d = dispersions(A)
    print(f"scale {scale}: lambda_max={d.lambda_max:8.3f}  trace_stat={d.trace_stat:9.3f}")
