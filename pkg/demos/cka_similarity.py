"""
Layer-by-layer representation similarity with linear CKA
========================================================

Centered kernel alignment compares what two layers compute, ignoring
rotations, unit reorderings, and scale. A model whose layers all repeat
the same computation lights up the whole matrix; independent layers do
not.
"""

import numpy as np

from ffmerge.analysis import cka_matrix, linear_cka
from ffmerge.engine import capture_activations
from ffmerge.fixtures import (default_config, duplicate_model, random_model,
                              token_sequences)

rng = np.random.default_rng(2)

# the invariances in isolation
x = rng.normal(size=(80, 12))
y = rng.normal(size=(80, 12))
q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
print(f"cka(x, x)          = {linear_cka(x, x):.6f}")
print(f"cka(x, y)          = {linear_cka(x, y):.6f}")
print(f"cka(x, y @ Q)      = {linear_cka(x, y @ q):.6f}  (orthogonal Q)")
print(f"cka(x, 100 * y)    = {linear_cka(x, y * 100.0):.6f}")

def show(matrix):
    for row in matrix.values:
        print("  " + " ".join(f"{v:.3f}" for v in row))

# every layer of the duplicate fixture computes the same thing
cfg = default_config(n_layers=5, d_model=16, d_ff=32)
data = token_sequences(cfg, 12, 12, seed=3)
dup = duplicate_model(cfg, seed=5)
acts = capture_activations(dup, data, "ff_out", max_samples=100)
print("\nduplicate-layer model, ff_out CKA:")
show(cka_matrix(acts))

# independent random layers are far less similar off the diagonal
rand = random_model(cfg, seed=6)
acts = capture_activations(rand, data, "ff_out", max_samples=100)
matrix = cka_matrix(acts)
print("\nrandom-layer model, ff_out CKA:")
show(matrix)
print(f"\nexport formats: {len(matrix.to_csv().splitlines())} csv rows, "
      f"json keys {sorted(__import__('json').loads(matrix.to_json()))}")
