import math
import warnings

import numpy as np
import pytest

from ugg.autodiff import (GradientBundle, LabelOutOfRange, LossConfig, UnsupervisedNoLoss,
                          backward, finite_difference_check, forward_refined, loss)
from ugg.core import InvalidConfig, Labels, ProblemInstance, UggConfig
from ugg.inference import run_inference

from conftest import random_instance
from test_inference import random_config


class TestLoss:
    def test_perfect_prediction(self):
        inst = ProblemInstance.from_arrays(np.zeros((2, 2)), np.eye(2))
        refined = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert loss(refined, inst, Labels.from_identities([0, 1]), LossConfig(pair_weight=0)) == 0.0

    def test_single_half(self):
        inst = ProblemInstance.from_arrays(np.zeros((2, 1)), [[1.0]])
        value = loss(np.array([[0.5], [0.5]]), inst, Labels.from_identities([1]),
                     LossConfig(pair_weight=0))
        assert value == pytest.approx(math.log(2), abs=1e-15)
        assert value == pytest.approx(0.6931, abs=1e-4)

    def test_default_pair_weight(self):
        assert LossConfig().pair_weight == 0.1
        assert LossConfig().feature_weight == 0.1

    def test_pair_term_by_hand(self):
        s = np.array([[1.0, 0.3, -0.4], [0.3, 1.0, 0.2], [-0.4, 0.2, 1.0]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 3)), s)
        unif = np.full((2, 3), 0.5)
        lab = Labels.from_identities([0, 0, 1], labeled=[0, 1, 2])
        value = loss(unif, inst, lab, LossConfig(pair_weight=0.5))

        def bce(x, z):
            p = 1 / (1 + math.exp(-x))
            return -(z * math.log(p) + (1 - z) * math.log(1 - p))

        pairs = sum(bce(s[i, j], float([0, 0, 1][i] == [0, 0, 1][j]))
                    for i in range(3) for j in range(3) if i != j)
        assert value == pytest.approx(3 * math.log(2) / 3 + 0.5 / 9 * pairs, abs=1e-14)

    def test_affine_clamp_link(self):
        s = np.array([[1.0, 0.2], [0.2, 1.0]])
        inst = ProblemInstance.from_arrays(np.zeros((2, 2)), s)
        lab = Labels.from_identities([0, 0])
        value = loss(np.full((2, 2), 0.5), inst, lab, LossConfig(1.0, "affine_clamp"))
        assert value == pytest.approx(math.log(2) + 2 * -math.log(0.6) / 4, abs=1e-14)

    def test_empty_labeled_set(self):
        inst = ProblemInstance.from_arrays(np.zeros((2, 2)), np.eye(2))
        with pytest.warns(UnsupervisedNoLoss):
            assert loss(np.full((2, 2), 0.5), inst, Labels((None, None))) == 0.0

    def test_label_out_of_range(self):
        inst = ProblemInstance.from_arrays(np.zeros((2, 2)), np.eye(2))
        with pytest.raises(LabelOutOfRange):
            loss(np.full((2, 2), 0.5), inst, Labels.from_identities([0, 2]))

    def test_bad_loss_config(self):
        with pytest.raises(InvalidConfig):
            LossConfig(pair_weight=-1)
        with pytest.raises(InvalidConfig):
            LossConfig(pair_link="probit")

    def test_permutation_invariance(self, rng):
        inst = random_instance(rng, 5, 3)
        ids = rng.integers(0, 3, 5)
        q = rng.dirichlet(np.ones(3), 5).T
        lab = Labels.from_identities(ids, labeled=[0, 2, 3])
        perm = rng.permutation(5)
        inv = np.argsort(perm)
        lab_p = Labels.from_identities(ids[perm], labeled=[int(inv[i]) for i in (0, 2, 3)])
        a = loss(q, inst, lab)
        b = loss(q[:, perm], inst.permuted(perm), lab_p)
        assert a == pytest.approx(b, abs=1e-14)


class TestBackward:
    def test_k0_closed_form(self, rng):
        inst = random_instance(rng, 4, 3)
        cfg = UggConfig(temp_gallery=2.0, iterations=0)
        lab = Labels.from_identities([0, 2, 1, 1], labeled=[0, 1, 3])
        _, grads = backward(inst, cfg, LossConfig(pair_weight=0.0), lab)
        q, _, _ = run_inference(inst, cfg)
        expected = np.zeros_like(q)
        for i in (0, 1, 3):
            onehot = np.eye(3)[lab.class_label[i]]
            expected[:, i] = 2.0 * (q[:, i] - onehot) / 4
        np.testing.assert_allclose(grads.d_gallery_sim, expected, atol=1e-15)

    def test_no_message_path_to_temp_tracklet(self, rng):
        inst = random_instance(rng, 4, 3)
        cfg = UggConfig(alpha_positive=0, alpha_negative=0, iterations=3)
        lab = Labels.from_identities([0, 2, 1, 1])
        _, grads = backward(inst, cfg, LossConfig(pair_weight=0.0), lab)
        assert grads.d_temp_tracklet == 0.0
        assert not grads.d_tracklet_sim.any()

    def test_locality_unlabeled(self, rng):
        for k in range(4):
            inst = random_instance(rng, 5, 3)
            cfg = UggConfig(2.0, 1.5, 0.0, 0.0, k)
            lab = Labels.from_identities([0, 1, 2, 0, 1], labeled=[0, 1, 3])
            _, grads = backward(inst, cfg, LossConfig(), lab)
            assert not grads.d_gallery_sim[:, [2, 4]].any()

    def test_forward_matches_run_inference(self, rng):
        for _ in range(20):
            inst = random_instance(rng, 5, 3)
            cfg = random_config(rng)
            a, _, _ = run_inference(inst, cfg)
            assert a.tobytes() == forward_refined(inst, cfg).tobytes()

    def test_unsupervised_zero(self, rng):
        inst = random_instance(rng, 4, 3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnsupervisedNoLoss)
            value, grads = backward(inst, UggConfig(), LossConfig(pair_weight=0.0),
                                    Labels((None,) * 4))
            report = finite_difference_check(inst, UggConfig(), LossConfig(pair_weight=0.0),
                                             Labels((None,) * 4))
        assert value == 0.0 and not grads.d_gallery_sim.any()
        assert report["max_rel_error"] == 0.0
        assert isinstance(grads, GradientBundle)


def _random_case(rng, k, gate_mode, semantics="paper_faithful"):
    n, c = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    inst = random_instance(rng, n, c)
    cfg = random_config(rng, iterations=k, gate_mode=gate_mode, update_semantics=semantics)
    labeled = [i for i in range(n) if rng.random() < 0.7] or [0]
    lab = Labels.from_identities(rng.integers(0, c, n), labeled=labeled)
    return inst, cfg, lab


class TestFiniteDifferences:
    def test_k1_fixed(self, rng):
        for _ in range(5):
            inst, cfg, lab = _random_case(rng, 1, "fixed_gates")
            assert finite_difference_check(inst, cfg, LossConfig(), lab)["max_rel_error"] < 1e-5

    def test_k4_adaptive(self, rng):
        for _ in range(5):
            inst, cfg, lab = _random_case(rng, 4, "adaptive_gates")
            assert finite_difference_check(inst, cfg, LossConfig(), lab)["max_rel_error"] < 1e-4

    @pytest.mark.parametrize("semantics", ["paper_faithful", "derivation_exact"])
    @pytest.mark.parametrize("link", ["logistic", "affine_clamp"])
    def test_modes(self, rng, semantics, link):
        for gate_mode in ("fixed_gates", "adaptive_gates"):
            inst, cfg, lab = _random_case(rng, 2, gate_mode, semantics)
            r = finite_difference_check(inst, cfg, LossConfig(0.3, link), lab)
            assert r["max_rel_error"] < 1e-4
            assert r["gallery_sim"]["n_checked"] > 0
