import numpy as np
import pytest

from weakground.cluster import CaptionCluster, ClusterConfig, cluster_captions


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def cluster_reference(embeddings, threshold, min_size):
    """Exhaustive restatement of the clustering rules, independent of
    the production code: build the similarity matrix, form one candidate
    per seed, keep large ones, accept greedily by (original size, seed),
    drop members already taken, re-check the size floor.

    Normalization mirrors production bit-for-bit; mathematically tied
    representative totals (2-member clusters) otherwise break on
    last-ulp noise and exact comparison becomes meaningless.
    """
    n = len(embeddings)
    mat = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    mat = mat / np.maximum(np.linalg.norm(mat, axis=1, keepdims=True), 1e-12)
    sim = mat @ mat.T
    cands = []
    for i in range(n):
        members = frozenset(j for j in range(n) if sim[i, j] >= threshold)
        if len(members) >= min_size:
            cands.append((i, members))
    cands = sorted(cands, key=lambda t: (-len(t[1]), t[0]))
    used = set()
    result = []
    for seed, members in cands:
        live = sorted(m for m in members if m not in used)
        if len(live) < min_size:
            continue
        used |= set(live)
        # Same float semantics as production for the tie-break: fancy
        # indexed numpy sum, first strict maximum wins.
        best_rep, best_total = None, -np.inf
        for m in live:
            total = float(sim[m, live].sum())
            if total > best_total:
                best_rep, best_total = m, total
        result.append((live, best_rep))
    return result


class TestClusterCaptions:
    def test_three_similar_one_outlier(self):
        base = unit(np.ones(16))
        near = [unit(np.ones(16) + 0.05 * np.eye(16)[i]) for i in range(3)]
        outlier = unit(np.eye(16)[0] - np.eye(16)[1])
        captions = ["a", "b", "c", "odd one"]
        clusters = cluster_captions(captions, near + [outlier])
        assert len(clusters) == 1
        assert clusters[0].member_indices == [0, 1, 2]

    def test_all_dissimilar_empty(self):
        embeddings = [unit(np.eye(8)[i]) for i in range(5)]
        assert cluster_captions([f"c{i}" for i in range(5)], embeddings) == []

    def test_duplicate_pair(self):
        v = unit(np.arange(1, 9))
        clusters = cluster_captions(["same", "same"], [v, v.copy()])
        assert len(clusters) == 1
        assert clusters[0].member_indices == [0, 1]
        assert clusters[0].representative == "same"

    def test_empty_input(self):
        assert cluster_captions([], []) == []

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cluster_captions(["a"], [])

    def test_clusters_disjoint_and_near_seed(self):
        rng = np.random.default_rng(23)
        cfg = ClusterConfig()
        for _ in range(50):
            n = int(rng.integers(2, 50))
            dim = 12
            anchors = [unit(rng.standard_normal(dim)) for _ in range(3)]
            embeddings = []
            for _ in range(n):
                a = anchors[int(rng.integers(3))]
                embeddings.append(unit(a + 0.12 * rng.standard_normal(dim)))
            clusters = cluster_captions(
                [f"c{i}" for i in range(n)], embeddings, cfg
            )
            seen = set()
            for cl in clusters:
                assert not (set(cl.member_indices) & seen)
                seen |= set(cl.member_indices)
                assert len(cl.member_indices) >= cfg.min_cluster_size

    def test_matches_reference_on_random_sets(self):
        rng = np.random.default_rng(29)
        cfg = ClusterConfig(similarity_threshold=0.85, min_cluster_size=2)
        for _ in range(100):
            n = int(rng.integers(1, 50))
            dim = 10
            anchors = [unit(rng.standard_normal(dim)) for _ in range(4)]
            embeddings = [
                unit(
                    anchors[int(rng.integers(4))]
                    + rng.uniform(0.02, 0.25) * rng.standard_normal(dim)
                )
                for _ in range(n)
            ]
            captions = [f"c{i}" for i in range(n)]
            got = cluster_captions(captions, embeddings, cfg)
            want = cluster_reference(embeddings, 0.85, 2)
            assert len(got) == len(want)
            for cl, (members, rep) in zip(got, want):
                assert cl.member_indices == members
                assert cl.representative == captions[rep]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ClusterConfig(similarity_threshold=1.5)
        with pytest.raises(ValueError):
            ClusterConfig(min_cluster_size=0)
