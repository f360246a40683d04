"""Dissimilarity matrices and the classical baseline.

Builds Euclidean, cosine, and Jaccard dissimilarities from small synthetic
datasets, embeds them with classical MDS, and scores the embeddings with
STRESS.
"""

import numpy as np

from gbmds import build_matrix, classical_mds, latent_distances, ngram_tokenize, stress

rng = np.random.default_rng(0)

# --- Euclidean distances of noisy planar points --------------------------
points = rng.standard_normal((8, 2))
observed = points + 0.05 * rng.standard_normal(points.shape)
D = build_matrix(observed, "euclidean")
print("Euclidean matrix, first rows:")
print(np.round(D.values[:3, :3], 3))

coords = classical_mds(D, 2)
print("classical MDS stress (should be tiny for near-planar data):",
      round(stress(D, latent_distances(coords, "euclidean")), 4))

# --- Cosine dissimilarities of nonnegative profiles ----------------------
profiles = np.abs(rng.standard_normal((6, 12))) + 0.05
Dc = build_matrix(profiles, "cosine")
print("\ncosine dissimilarities live in [0, 1]:",
      (float(Dc.values.min()), round(float(Dc.values.max()), 3)),
      "upper bound:", Dc.upper_bound)

# --- Jaccard dissimilarities of 2-gram token sets ------------------------
docs = [
    "the particles move between bridge densities",
    "the particles carry importance weights",
    "distances shrink when documents share phrases",
]
token_sets = [ngram_tokenize(doc, 2) for doc in docs]
Dj = build_matrix(token_sets, "jaccard")
print("\nJaccard matrix from 2-grams:")
print(np.round(Dj.values, 3))
