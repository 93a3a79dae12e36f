import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ugg.core import (CannotLinkSelfLoop, DimensionMismatch, EmptyGraph, InvalidConfig, Labels,
                      NeighborhoodPolicy, NonBinaryCannotLink, NonFiniteEntry, NonSymmetric,
                      ProblemInstance, UggConfig, build_graph, validate_instance, PRESETS)

from conftest import random_instance


def raw(s_gt, s_tt, cl):
    return ProblemInstance(np.asarray(s_gt, float), np.asarray(s_tt, float), np.asarray(cl))


class TestValidateInstance:
    def test_all_zero_is_valid(self):
        inst = validate_instance(raw(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))))
        assert inst.num_galleries == 2 and inst.num_tracklets == 2

    def test_asymmetric_cannot_link(self):
        cl = np.array([[0, 1], [0, 0]])
        with pytest.raises(NonSymmetric):
            validate_instance(raw(np.zeros((2, 2)), np.zeros((2, 2)), cl))

    def test_asymmetric_tracklet_sim(self):
        s = np.array([[1, 0.5], [0.4, 1]])
        with pytest.raises(NonSymmetric):
            validate_instance(raw(np.zeros((2, 2)), s, np.zeros((2, 2))))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        s = np.zeros((2, 2))
        s[0, 1] = s[1, 0] = bad
        with pytest.raises(NonFiniteEntry):
            validate_instance(raw(np.zeros((2, 2)), s, np.zeros((2, 2))))
        g = np.zeros((3, 2))
        g[1, 1] = bad
        with pytest.raises(NonFiniteEntry):
            validate_instance(raw(g, np.zeros((2, 2)), np.zeros((2, 2))))

    def test_non_binary(self):
        cl = np.array([[0, 2], [2, 0]])
        with pytest.raises(NonBinaryCannotLink):
            validate_instance(raw(np.zeros((2, 2)), np.zeros((2, 2)), cl))

    def test_self_loop(self):
        with pytest.raises(CannotLinkSelfLoop):
            validate_instance(raw(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)))

    @pytest.mark.parametrize("shapes", [((2, 3), (2, 2), (3, 3)), ((2, 3), (3, 3), (2, 2)),
                                        ((3,), (3, 3), (3, 3)), ((2, 0), (0, 0), (0, 0))])
    def test_dimension_mismatch(self, shapes):
        g, t, c = (np.zeros(s) for s in shapes)
        with pytest.raises(DimensionMismatch):
            validate_instance(raw(g, t, c))

    def test_idempotent_and_read_only(self, rng):
        inst = random_instance(rng, 4, 3)
        again = validate_instance(inst)
        for a, b in [(inst.gallery_tracklet_sim, again.gallery_tracklet_sim),
                     (inst.tracklet_tracklet_sim, again.tracklet_tracklet_sim),
                     (inst.cannot_link, again.cannot_link)]:
            assert np.array_equal(a, b)
        with pytest.raises(ValueError):
            again.gallery_tracklet_sim[0, 0] = 1.0


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(temp_gallery=0), dict(temp_tracklet=-1),
                                    dict(alpha_positive=-0.1), dict(alpha_negative=np.inf),
                                    dict(iterations=-1), dict(iterations=1.5)])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(InvalidConfig):
            UggConfig(**kw)

    def test_dict_round_trip(self):
        cfg = UggConfig(3.0, 4.0, 1.0, 0.5, 3, NeighborhoodPolicy.top_k(2),
                        "fixed_gates", True, "derivation_exact")
        assert UggConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(InvalidConfig):
            UggConfig.from_dict({"temp_galery": 1.0})

    def test_presets(self):
        assert PRESETS["csm-in"].temp_gallery == 10 and PRESETS["csm-in"].temp_tracklet == 15
        assert PRESETS["csm-in"].alpha_positive == 5 and PRESETS["csm-in"].iterations == 2
        assert PRESETS["csm-across"].temp_tracklet == 30 and PRESETS["csm-across"].alpha_positive == 15
        ij = PRESETS["ijbs"]
        assert (ij.temp_gallery, ij.temp_tracklet, ij.alpha_positive, ij.alpha_negative,
                ij.iterations) == (15, 15, 10, 2, 4)


class TestBuildGraph:
    def test_full(self):
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), np.zeros((3, 3)))
        g = build_graph(inst, UggConfig())
        assert g.neighbors == ((1, 2), (0, 2), (0, 1))
        assert g.is_symmetric()

    def test_top_k_single_max(self):
        s = np.array([[1, 0.9, 0.1], [0.9, 1, 0.3], [0.1, 0.3, 1]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), s)
        g = build_graph(inst, UggConfig(neighborhood_policy=NeighborhoodPolicy.top_k(1)))
        assert g.neighbors[0] == (1,)

    def test_top_k_tie_goes_to_lower_index(self):
        s = np.array([[1, 0.5, 0.5], [0.5, 1, 0.2], [0.5, 0.2, 1]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), s)
        g = build_graph(inst, UggConfig(neighborhood_policy=NeighborhoodPolicy.top_k(1)))
        assert g.neighbors[0] == (1,)
        # node 2's best is node 0 (0.5 > 0.2)
        assert g.neighbors[2] == (0,)

    def test_top_k_may_be_asymmetric(self):
        s = np.array([[1, 0.9, 0.8], [0.9, 1, 0.1], [0.8, 0.1, 1]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), s)
        g = build_graph(inst, UggConfig(neighborhood_policy=NeighborhoodPolicy.top_k(1)))
        assert g.neighbors == ((1,), (0,), (0,))
        assert not g.is_symmetric()

    def test_threshold(self):
        s = np.array([[1, 0.5, 0.2], [0.5, 1, 0.3], [0.2, 0.3, 1]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), s)
        g = build_graph(inst, UggConfig(neighborhood_policy=NeighborhoodPolicy.threshold(0.3)))
        assert g.neighbors == ((1,), (0, 2), (1,))
        assert g.is_symmetric()

    def test_empty(self):
        inst = ProblemInstance(np.zeros((2, 0)), np.zeros((0, 0)), np.zeros((0, 0)))
        with pytest.raises(EmptyGraph):
            build_graph(inst, UggConfig())

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 7), k=st.integers(1, 7), seed=st.integers(0, 2 ** 32 - 1))
    def test_properties(self, n, k, seed):
        inst = random_instance(np.random.default_rng(seed), n, 2)
        full = build_graph(inst, UggConfig())
        assert all(len(nb) == n - 1 for nb in full.neighbors)
        for policy in (NeighborhoodPolicy.full(), NeighborhoodPolicy.top_k(k),
                       NeighborhoodPolicy.threshold(0.0)):
            cfg = UggConfig(neighborhood_policy=policy)
            g1, g2 = build_graph(inst, cfg), build_graph(inst, cfg)
            assert g1.neighbors == g2.neighbors
            for i, nb in enumerate(g1.neighbors):
                assert i not in nb and len(set(nb)) == len(nb)
            if policy.kind != "top_k":
                assert g1.is_symmetric()


class TestLabels:
    def test_labeled_set_and_pairs(self):
        lab = Labels.from_identities([0, 1, 0, 2], labeled=[0, 2, 3])
        assert lab.labeled_set == (0, 2, 3)
        assert lab.class_label[1] is None
        z = lab.pair_matrix()
        assert z[0, 2] == 1 and z[0, 3] == 0 and z[1, 0] == 0
