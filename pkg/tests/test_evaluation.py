import itertools
import math

import numpy as np
import pytest

from hardmetric.errors import InputError
from hardmetric.evaluation import (
    EvalReport,
    evaluate_embeddings,
    export_embeddings_csv,
    kmeans,
    nmi,
    pairwise_f1,
    recall_at_k,
    save_metrics_json,
)


def nmi_oracle(assignment, labels):
    """Contingency-table MI and entropies computed with explicit loops."""
    n = len(assignment)
    clusters = sorted(set(assignment))
    classes = sorted(set(labels))
    mi = 0.0
    for c in clusters:
        for l in classes:
            nij = sum(1 for a, b in zip(assignment, labels) if a == c and b == l)
            if nij == 0:
                continue
            ni = sum(1 for a in assignment if a == c)
            nj = sum(1 for b in labels if b == l)
            mi += (nij / n) * math.log((nij / n) / ((ni / n) * (nj / n)))
    def entropy(values):
        out = 0.0
        for v in set(values):
            p = sum(1 for x in values if x == v) / n
            out -= p * math.log(p)
        return out
    h_c, h_l = entropy(assignment), entropy(labels)
    if h_c == 0 and h_l == 0:
        return 1.0
    if mi <= 0:
        return 0.0
    return mi / ((h_c + h_l) / 2)


def f1_oracle(assignment, labels):
    """All unordered pairs, counted one by one."""
    tp = pred = actual = 0
    for i, j in itertools.combinations(range(len(labels)), 2):
        same_c = assignment[i] == assignment[j]
        same_l = labels[i] == labels[j]
        pred += same_c
        actual += same_l
        tp += same_c and same_l
    precision = tp / pred if pred else 0.0
    recall = tp / actual if actual else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


class TestKmeans:
    def test_k_equals_n_gives_singletons(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(6, 3))
        assign = kmeans(pts, 6, seed=1)
        assert len(set(assign.tolist())) == 6
        # inertia zero: every point is its own center
        for c in range(6):
            members = pts[assign == c]
            assert np.allclose(members, members.mean(axis=0))

    def test_two_separated_blobs_recovered_exactly(self):
        rng = np.random.default_rng(1)
        pts = np.vstack([rng.normal(size=(5, 2)) + [50.0, 0.0], rng.normal(size=(5, 2)) - [50.0, 0.0]])
        truth = np.repeat([0, 1], 5)
        assign = kmeans(pts, 2, seed=0)
        # equality up to relabeling, checked exhaustively on this 10-point instance
        direct = np.array_equal(assign, truth)
        flipped = np.array_equal(1 - assign, truth)
        assert direct or flipped

    def test_duplicates_land_together(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [9.0, 9.0], [9.0, 9.0]])
        assign = kmeans(pts, 2, seed=3)
        assert assign[0] == assign[1]
        assert assign[2] == assign[3]

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(30, 4))
        assert np.array_equal(kmeans(pts, 5, seed=7), kmeans(pts, 5, seed=7))

    def test_bad_k_rejected(self):
        with pytest.raises(InputError):
            kmeans(np.zeros((3, 2)), 0, seed=0)
        with pytest.raises(InputError):
            kmeans(np.zeros((3, 2)), 4, seed=0)


class TestNmi:
    def test_perfect_clustering(self):
        assert abs(nmi([0, 0, 1, 1, 2], [5, 5, 9, 9, 7]) - 1.0) < 1e-12

    def test_single_cluster_over_two_classes(self):
        assert nmi([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0

    def test_fixed_instance_matches_contingency_oracle(self):
        assignment = [1, 1, 1, 2]
        labels = [0, 0, 1, 1]
        expected = nmi_oracle(assignment, labels)
        assert abs(nmi(assignment, labels) - expected) < 1e-12
        # frozen from the oracle above
        assert abs(expected - 0.3437110184854507) < 1e-12

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(4, 30))
            assignment = rng.integers(0, 4, size=n).tolist()
            labels = rng.integers(0, 3, size=n).tolist()
            assert abs(nmi(assignment, labels) - nmi_oracle(assignment, labels)) < 1e-10

    def test_degenerate_both_constant(self):
        assert nmi([0, 0, 0], [4, 4, 4]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            nmi([0, 1], [0, 1, 2])

    def test_invariant_to_renaming(self):
        assignment = [0, 0, 1, 2, 2, 1]
        labels = [1, 1, 0, 0, 1, 0]
        renamed = [9, 9, 4, 7, 7, 4]
        assert abs(nmi(assignment, labels) - nmi(renamed, labels)) < 1e-12


class TestPairwiseF1:
    def test_perfect_clustering(self):
        assert pairwise_f1([0, 0, 1, 1], [7, 7, 3, 3]) == 1.0

    def test_everything_in_one_cluster(self):
        # precision 2/6, recall 1 -> F1 = 0.5, enumerated by the pair-loop oracle
        assignment = [0, 0, 0, 0]
        labels = [0, 0, 1, 1]
        assert abs(pairwise_f1(assignment, labels) - 0.5) < 1e-12
        assert abs(pairwise_f1(assignment, labels) - f1_oracle(assignment, labels)) < 1e-12

    def test_all_singletons_give_zero(self):
        assert pairwise_f1([0, 1, 2, 3], [0, 0, 1, 1]) == 0.0

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(3, 25))
            assignment = rng.integers(0, 4, size=n).tolist()
            labels = rng.integers(0, 3, size=n).tolist()
            assert abs(pairwise_f1(assignment, labels) - f1_oracle(assignment, labels)) < 1e-10

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        assignment = rng.integers(0, 3, size=15)
        labels = rng.integers(0, 3, size=15)
        perm = rng.permutation(15)
        assert pairwise_f1(assignment, labels) == pairwise_f1(assignment[perm], labels[perm])


class TestRecallAtK:
    def test_two_tight_pairs(self):
        z = np.array([[0.0], [0.1], [5.0], [5.1]])
        labels = [0, 0, 1, 1]
        assert recall_at_k(z, labels, [1])[1] == 1.0

    def test_interleaved_line(self):
        z = np.array([[0.0], [1.0], [2.0]])
        labels = [0, 1, 0]
        # hand audit: 0's NN is 1 (wrong class), 1's NN ties at distance 1 and
        # breaks to index 0 (wrong class), 2's NN is 1 (wrong class)
        assert recall_at_k(z, labels, [1])[1] == 0.0

    def test_k_covering_everything(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(10, 3))
        labels = np.repeat(np.arange(5), 2)
        assert recall_at_k(z, labels, [9])[9] == 1.0

    def test_nondecreasing_in_k(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(20, 4))
        labels = rng.integers(0, 4, size=20)
        rec = recall_at_k(z, labels, [1, 2, 4, 8])
        values = [rec[k] for k in (1, 2, 4, 8)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_duplicate_points_tie_break_by_index(self):
        z = np.array([[0.0], [0.0], [0.0]])
        labels = [0, 1, 0]
        rec = recall_at_k(z, labels, [1])
        # query 0 picks index 1 (distance ties, lowest index first): miss;
        # query 1 picks index 0: miss; query 2 picks index 0: hit
        assert abs(rec[1] - 1.0 / 3.0) < 1e-12

    def test_k_too_large_rejected(self):
        with pytest.raises(InputError):
            recall_at_k(np.zeros((3, 2)), [0, 1, 0], [3])

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(15, 4))
        labels = rng.integers(0, 3, size=15)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        moved = z @ q.T + rng.normal(size=4)
        assert recall_at_k(z, labels, [1, 3]) == recall_at_k(moved, labels, [1, 3])


class TestReportAndExport:
    def test_report_serialization_shape(self, tmp_path):
        rng = np.random.default_rng(9)
        z = np.vstack([rng.normal(size=(8, 3)) + 20.0, rng.normal(size=(8, 3)) - 20.0])
        labels = np.repeat([0, 1], 8)
        report = evaluate_embeddings(z, labels, ks=(1, 2), kmeans_seed=0)
        assert isinstance(report, EvalReport)
        assert 0.0 <= report.nmi <= 1.0 and 0.0 <= report.f1 <= 1.0
        path = tmp_path / "metrics.json"
        save_metrics_json(report, path, extra={"kmeans_seed": 0})
        import json

        payload = json.loads(path.read_text())
        assert set(payload) >= {"nmi", "f1", "recall"}
        assert list(payload["recall"]) == ["1", "2"]

    def test_embeddings_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        z = rng.normal(size=(5, 4))
        path = tmp_path / "emb.csv"
        export_embeddings_csv(path, np.arange(5), [0, 1, 0, 1, 1], z)
        lines = path.read_text().splitlines()
        assert lines[0] == "sample_id,label,z_0,z_1,z_2,z_3"
        parsed = np.array([[float(v) for v in line.split(",")[2:]] for line in lines[1:]])
        assert np.array_equal(parsed, z)
