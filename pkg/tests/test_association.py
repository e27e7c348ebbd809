"""Association graph rule, components, threshold selection, pair quality."""

import numpy as np
import pytest

from icsreid.association import (AssociationGraph, associate, association_quality,
                                 build_graph, centroid_distances,
                                 connected_components, cross_camera_pair_distances,
                                 labeling_from_truth, load_pseudo_labels,
                                 save_pseudo_labels, select_threshold,
                                 vertex_cameras)
from icsreid.dataset import DatasetLayout
from icsreid.memory import MemoryBank
from oracles import bfs_components, brute_force_edges


def unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_bank(vectors, id_counts):
    layout = DatasetLayout(tuple(id_counts), tuple(id_counts))
    return MemoryBank(np.asarray(vectors, dtype=float), layout)


class TestThreshold:
    def test_sth_smallest(self):
        dists = np.array([0.3, 0.1, 0.2])
        assert select_threshold(dists, 2) == pytest.approx(0.2)

    def test_strict_rule_blocks_the_threshold_pair(self):
        # T = 0.2; only the 0.1 pair passes dist < T
        dists = np.array([0.1, 0.2, 0.3])
        t = select_threshold(dists, 2)
        assert np.sum(dists < t) == 1

    def test_budget_one_passes_nothing(self):
        dists = np.array([0.5, 0.4, 0.9])
        t = select_threshold(dists, 1)
        assert np.sum(dists < t) == 0

    def test_all_ties_pass_nothing(self):
        dists = np.full(6, 0.7)
        t = select_threshold(dists, 4)
        assert np.sum(dists < t) == 0

    def test_budget_clamped_with_warning(self, caplog):
        dists = np.array([0.1, 0.2])
        with caplog.at_level("WARNING"):
            t = select_threshold(dists, 10)
        assert t == pytest.approx(0.2)
        assert "clamping" in caplog.text

    def test_budget_below_one_rejected(self):
        with pytest.raises(ValueError):
            select_threshold(np.array([0.1]), 0)


class TestBuildGraph:
    def test_single_camera_no_edges(self):
        rng = np.random.default_rng(0)
        bank = make_bank(unit_rows(rng, 4, 3), (4,))
        graph = build_graph(bank, threshold=10.0)
        assert graph.edges == set()

    def test_paired_duplicates_across_cameras(self):
        # camera 1 ids 1,2; camera 2 ids 3,4; 1~3 and 2~4 near-duplicates
        a = np.array([1.0, 0.0, 0.0])
        b = np.array([0.0, 1.0, 0.0])
        eps = 1e-3
        a2 = a + np.array([0.0, 0.0, eps])
        b2 = b + np.array([0.0, 0.0, eps])
        vectors = np.stack([a, b, a2 / np.linalg.norm(a2), b2 / np.linalg.norm(b2)])
        bank = make_bank(vectors, (2, 2))
        graph = build_graph(bank, threshold=0.5)
        assert graph.edges == {(1, 3), (2, 4)}

    def test_one_sided_nearest_neighbour_rejected(self):
        # j's nearest in camera 1 is k, not i: no edge (i, j)
        i = np.array([1.0, 0.0])
        k = np.array([0.9, np.sqrt(1 - 0.81)])   # closer to j than i is
        j = np.array([0.95, np.sqrt(1 - 0.9025)])
        bank = make_bank(np.stack([i, k, j]), (2, 1))
        dist = centroid_distances(bank.vectors)
        assert dist[2, 1] < dist[2, 0]  # mutuality broken for (i, j)
        graph = build_graph(bank, threshold=10.0)
        assert (1, 3) not in graph.edges
        assert (2, 3) in graph.edges

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            counts = tuple(int(rng.integers(2, 8)) for _ in range(int(rng.integers(2, 5))))
            bank = make_bank(unit_rows(rng, sum(counts), 6), counts)
            cams = vertex_cameras(bank.layout)
            pair_d = cross_camera_pair_distances(centroid_distances(bank.vectors), cams)
            budget = int(rng.integers(1, pair_d.size + 1))
            t = select_threshold(pair_d, budget)
            graph = build_graph(bank, t)
            assert graph.edges == brute_force_edges(bank, t)

    def test_per_camera_degree_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            counts = (5, 5, 5)
            bank = make_bank(unit_rows(rng, 15, 4), counts)
            graph = build_graph(bank, threshold=2.0)
            cams = graph.cameras
            for v in range(1, 16):
                neighbour_cams = [int(cams[u - 1]) for u in graph.neighbors(v)]
                assert len(neighbour_cams) == len(set(neighbour_cams))

    def test_edge_set_monotone_in_budget(self):
        rng = np.random.default_rng(3)
        bank = make_bank(unit_rows(rng, 12, 4), (4, 4, 4))
        cams = vertex_cameras(bank.layout)
        pair_d = cross_camera_pair_distances(centroid_distances(bank.vectors), cams)
        previous = set()
        for budget in range(1, pair_d.size + 1):
            graph = build_graph(bank, select_threshold(pair_d, budget))
            assert previous <= graph.edges
            previous = graph.edges


class TestComponents:
    def test_empty_edges_identity_partition(self):
        graph = AssociationGraph(num_vertices=5, cameras=np.array([1, 1, 2, 2, 3]),
                                 edges=set(), distances=np.zeros((5, 5)))
        labeling = connected_components(graph)
        assert labeling.num_classes == 5
        assert labeling.labels.tolist() == [1, 2, 3, 4, 5]
        assert labeling.same_camera_conflicts == 0

    def test_chain_merges_transitively(self):
        graph = AssociationGraph(num_vertices=4, cameras=np.array([1, 2, 3, 3]),
                                 edges={(1, 2), (2, 3)}, distances=np.zeros((4, 4)))
        labeling = connected_components(graph)
        assert labeling.labels.tolist() == [1, 1, 1, 2]
        assert labeling.num_classes == 2

    def test_two_disjoint_edges(self):
        graph = AssociationGraph(num_vertices=6, cameras=np.array([1, 1, 2, 2, 3, 3]),
                                 edges={(1, 3), (2, 5)}, distances=np.zeros((6, 6)))
        labeling = connected_components(graph)
        assert labeling.labels.tolist() == [1, 2, 1, 3, 2, 4]
        assert labeling.num_classes == 4

    def test_matches_bfs_reachability(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(3, 40))
            cams = rng.integers(1, 4, size=n)
            edges = set()
            for _ in range(int(rng.integers(0, n))):
                i, j = sorted(rng.choice(n, size=2, replace=False) + 1)
                if cams[i - 1] != cams[j - 1]:
                    edges.add((int(i), int(j)))
            graph = AssociationGraph(num_vertices=n, cameras=cams, edges=edges,
                                     distances=np.zeros((n, n)))
            ours = connected_components(graph).labels
            reference = bfs_components(graph)
            # same partition: co-membership must agree everywhere
            same_ours = ours[:, None] == ours[None, :]
            same_ref = reference[:, None] == reference[None, :]
            assert np.array_equal(same_ours, same_ref)

    def test_same_camera_conflicts_counted(self):
        # 1-3 and 2-3 merge two camera-1 ids through a camera-2 vertex
        graph = AssociationGraph(num_vertices=3, cameras=np.array([1, 1, 2]),
                                 edges={(1, 3), (2, 3)}, distances=np.zeros((3, 3)))
        labeling = connected_components(graph)
        assert labeling.num_classes == 1
        assert labeling.same_camera_conflicts == 1


class TestQuality:
    def test_perfect_labeling(self):
        layout = DatasetLayout((2, 2), (2, 2))
        truth = np.array([1, 2, 1, 2])
        labeling = labeling_from_truth(truth, layout)
        quality = association_quality(labeling, truth, vertex_cameras(layout))
        assert quality.precision == 1.0 and quality.recall == 1.0

    def test_no_association_flagged(self):
        layout = DatasetLayout((2, 2), (2, 2))
        labeling = connected_components(AssociationGraph(
            num_vertices=4, cameras=vertex_cameras(layout), edges=set(),
            distances=np.zeros((4, 4))))
        quality = association_quality(labeling, np.array([1, 2, 1, 2]),
                                      vertex_cameras(layout))
        assert quality.no_pairs_flag
        assert quality.precision == 1.0
        assert quality.recall == 0.0

    def test_counting_example(self):
        # 3 associated cross-camera pairs, 2 correct, 4 true pairs in total
        from icsreid.association import PseudoLabeling

        layout = DatasetLayout((2, 2, 2), (2, 2, 2))
        cams = vertex_cameras(layout)
        # person A = ids {1, 3, 5} (3 true pairs), B = {2, 4} (1), C = {6}
        truth = np.array([1, 2, 1, 2, 1, 3])
        # classes {3, 5} and {2, 4} correct; {1, 6} wrong
        labels = np.array([3, 2, 1, 2, 1, 3])
        labeling = PseudoLabeling(labels=labels, num_classes=3,
                                  same_camera_conflicts=0)
        quality = association_quality(labeling, truth, cams)
        assert quality.associated_pairs == 3
        assert quality.correct_pairs == 2
        assert quality.true_pairs == 4
        assert quality.precision == pytest.approx(2 / 3)
        assert quality.recall == pytest.approx(2 / 4)

    def test_missing_truth_rejected(self):
        layout = DatasetLayout((1, 1), (1, 1))
        labeling = labeling_from_truth(np.array([1, 1]), layout)
        with pytest.raises(ValueError, match="truth"):
            association_quality(labeling, np.array([1, -1]), vertex_cameras(layout))


class TestAssociatePipeline:
    def test_single_camera_bank_gives_singletons(self):
        rng = np.random.default_rng(5)
        bank = make_bank(unit_rows(rng, 5, 3), (5,))
        labeling, graph, threshold = associate(bank)
        assert graph.edges == set()
        assert labeling.num_classes == 5
        assert np.isinf(threshold)

    def test_default_budget_is_accumulated_id_count(self):
        rng = np.random.default_rng(6)
        counts = (6, 6)
        bank = make_bank(unit_rows(rng, 12, 4), counts)
        labeling_auto, _, t_auto = associate(bank)
        labeling_n, _, t_n = associate(bank, pair_budget=12)
        assert t_auto == t_n
        assert labeling_auto.labels.tolist() == labeling_n.labels.tolist()


class TestPseudoLabelIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        bank = make_bank(unit_rows(rng, 8, 4), (4, 4))
        labeling, _, _ = associate(bank)
        path = tmp_path / "pseudo.tsv"
        save_pseudo_labels(labeling, path)
        loaded = load_pseudo_labels(path)
        assert loaded.labels.tolist() == labeling.labels.tolist()
        assert loaded.num_classes == labeling.num_classes

    def test_incomplete_file_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("global_id\tpseudo_label\n1\t1\n3\t2\n")
        with pytest.raises(ValueError, match="cover"):
            load_pseudo_labels(path)
