"""Greedy threshold clustering of caption embeddings.

Deduplicates near-identical captions produced for overlapping region
proposals: captions whose embeddings are mutually similar collapse into
one cluster represented by a single phrase and its embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterConfig:
    similarity_threshold: float = 0.85
    min_cluster_size: int = 2

    def __post_init__(self):
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError(
                f"similarity_threshold must lie in (0, 1), got {self.similarity_threshold}"
            )
        if self.min_cluster_size < 1:
            raise ValueError(
                f"min_cluster_size must be >= 1, got {self.min_cluster_size}"
            )


@dataclass
class CaptionCluster:
    representative: str
    embedding: np.ndarray
    member_indices: list[int]


def cluster_captions(
    captions: list[str],
    embeddings: list[np.ndarray],
    cfg: ClusterConfig = ClusterConfig(),
) -> list[CaptionCluster]:
    """Cluster captions by thresholded cosine similarity.

    Every caption seeds a candidate cluster holding all captions within
    the similarity threshold of it (itself included). Candidates below
    the minimum size are discarded; the rest are accepted greedily from
    largest to smallest (ties by lowest seed index), removing already
    accepted members and re-checking the minimum size after removal.
    The representative is the member with the highest total similarity
    to the cluster (ties by lowest index).
    """
    if len(captions) != len(embeddings):
        raise ValueError(
            f"{len(captions)} captions but {len(embeddings)} embeddings"
        )
    n = len(captions)
    if n == 0:
        return []
    mat = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    mat = mat / np.maximum(norms, 1e-12)
    sim = mat @ mat.T

    candidates = []
    for seed in range(n):
        members = {j for j in range(n) if sim[seed, j] >= cfg.similarity_threshold}
        if len(members) >= cfg.min_cluster_size:
            candidates.append((seed, members))
    candidates.sort(key=lambda c: (-len(c[1]), c[0]))

    taken: set[int] = set()
    clusters: list[CaptionCluster] = []
    for seed, members in candidates:
        remaining = sorted(members - taken)
        if len(remaining) < cfg.min_cluster_size:
            continue
        taken.update(remaining)
        totals = [sim[i, remaining].sum() for i in remaining]
        rep = remaining[int(np.argmax(totals))]
        clusters.append(
            CaptionCluster(
                representative=captions[rep],
                embedding=np.asarray(embeddings[rep]),
                member_indices=remaining,
            )
        )
    return clusters
