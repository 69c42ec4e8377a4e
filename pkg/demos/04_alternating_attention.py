"""
Alternating attention as a pose regressor
=========================================

Superpoint tokens from each scan go through blocks that alternate between
attending within a scan and attending across all scans. Two small heads read
a pose per scan from the pooled tokens. Weights are random, so the output is
a (poor) prior, but the structure is permutation equivariant.
"""

import numpy as np

from posediff.attention import AAConfig, alternating_attention, build_tokens, init_weights, regress_poses
from posediff.geometry import SceneConfig, generate_scene
from posediff.lie import is_rotation

cfg = AAConfig()
w = init_weights(cfg)
scene = generate_scene(SceneConfig(n_scans=4, seed=9))

tokens = build_tokens(scene.scans, w, cfg)
print("tokens per scan:", np.diff(tokens.offsets), " dim:", tokens.dim)

out = alternating_attention(tokens, w, cfg)
poses = regress_poses(out, w, cfg)
print("all outputs are rotations:", all(is_rotation(R) for R in poses.R))
print("translations:\n", np.round(poses.t, 3))

# reversing the scan order reverses the output
perm = np.arange(4)[::-1]
flipped = regress_poses(alternating_attention(tokens.permute(perm), w, cfg), w, cfg)
print("equivariance error:", flipped.max_deviation(poses.permute(perm)))
