import numpy as np
import pytest

import hierspx as hx
from hierspx import _kernels
from hierspx.gradients import finite_diff_check


def make_instance(rng, h=6, w=6, similarity="cosine", tau=0.2):
    fine = hx.FeatureMap(rng.standard_normal((h, w, 3)))
    seeds = hx.SeedGrid(hx.FeatureMap(rng.standard_normal(((h + 1) // 2, (w + 1) // 2, 4))))
    proj = hx.ProjectionPair(rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
    cfg = hx.ClusteringConfig(tau=tau, k_dim=5, similarity=similarity)
    return fine, seeds, proj, cfg


class TestBackwardDecode:
    def test_zero_upstream_gives_zero_adjoints(self):
        rng = np.random.default_rng(40)
        fine, seeds, proj, cfg = make_instance(rng)
        fld = hx.soft_assign(fine, seeds, proj, cfg)
        coarse = hx.FeatureMap(rng.standard_normal((3, 3, 2)))
        adj = hx.backward_decode(fld, coarse, np.zeros((6, 6, 2)))
        assert (adj.d_coarse == 0).all() and (adj.d_weights == 0).all()

    def test_hard_field_segment_sums_upstream(self):
        rng = np.random.default_rng(41)
        fine, seeds, proj, cfg = make_instance(rng)
        hard, labels = hx.hard_assign(hx.soft_assign(fine, seeds, proj, cfg))
        coarse = hx.FeatureMap(rng.standard_normal((3, 3, 2)))
        upstream = rng.standard_normal((6, 6, 2))
        adj = hx.backward_decode(hard, coarse, upstream)
        expect = np.zeros((9, 2))
        for i in range(6):
            for j in range(6):
                expect[labels.labels[i, j]] += upstream[i, j]
        np.testing.assert_allclose(adj.d_coarse.reshape(9, 2), expect, rtol=1e-12)

    def test_constant_upstream_column_sums(self):
        # gradient of decode wrt coarse values under all-ones upstream is
        # each seed's soft pixel count (column sums of the assignment)
        rng = np.random.default_rng(42)
        fine, seeds, proj, cfg = make_instance(rng)
        fld = hx.soft_assign(fine, seeds, proj, cfg)
        coarse = hx.FeatureMap(rng.standard_normal((3, 3, 1)))
        adj = hx.backward_decode(fld, coarse, np.ones((6, 6, 1)))
        colsum = np.zeros(9)
        mask = _kernels.slot_mask(fld.counts)
        np.add.at(colsum, fld.indices[mask], fld.weights[mask])
        np.testing.assert_allclose(adj.d_coarse.reshape(-1), colsum, rtol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(43)
        fine, seeds, proj, cfg = make_instance(rng)
        fld = hx.soft_assign(fine, seeds, proj, cfg)
        coarse = rng.standard_normal((3, 3, 2))
        probe = rng.standard_normal((6, 6, 2))
        adj = hx.backward_decode(fld, hx.FeatureMap(coarse), probe)

        def f(v):
            return float((hx.decode_once(fld, hx.FeatureMap(v.reshape(3, 3, 2))).data * probe).sum())

        assert finite_diff_check(f, coarse, adj.d_coarse) < 1e-5


class TestBackwardSoftAssign:
    def test_uniform_upstream_annihilated(self):
        # constant upstream over a pixel's candidates lies in the softmax
        # jacobian's null space
        rng = np.random.default_rng(44)
        fine, seeds, proj, cfg = make_instance(rng)
        adj = hx.backward_soft_assign(fine, seeds, proj, cfg, np.ones((6, 6, 9)))
        assert np.abs(adj.d_fine).max() < 1e-12
        assert np.abs(adj.d_seeds).max() < 1e-12
        assert np.abs(adj.d_w_fine).max() < 1e-12
        assert np.abs(adj.d_w_seed).max() < 1e-12

    def test_tau_scales_similarity_gradient(self):
        # at a symmetric point (all similarities equal) the weights are
        # unchanged by tau, so gradients scale exactly by 1/tau
        rng = np.random.default_rng(45)
        fine = hx.FeatureMap(np.ones((4, 4, 3)))
        seeds = hx.SeedGrid(hx.FeatureMap(np.ones((2, 2, 3))))
        proj = hx.ProjectionPair.identity(3)
        upstream = rng.standard_normal((4, 4, 9))
        a1 = hx.backward_soft_assign(fine, seeds, proj, hx.ClusteringConfig(tau=0.1, k_dim=3), upstream)
        a2 = hx.backward_soft_assign(fine, seeds, proj, hx.ClusteringConfig(tau=0.2, k_dim=3), upstream)
        np.testing.assert_allclose(a1.d_w_seed, 2.0 * a2.d_w_seed, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("similarity", ["cosine", "nse"])
    def test_all_four_adjoints_match_finite_differences(self, similarity):
        rng = np.random.default_rng(46)
        fine, seeds, proj, cfg = make_instance(rng, similarity=similarity)
        fld = hx.soft_assign(fine, seeds, proj, cfg)
        probe = rng.standard_normal((6, 6, 9)) * _kernels.slot_mask(fld.counts)
        adj = hx.backward_soft_assign(fine, seeds, proj, cfg, probe)

        def objective(f=None, s=None, wf=None, ws=None):
            field = hx.soft_assign(
                hx.FeatureMap(fine.data if f is None else f.reshape(6, 6, 3)),
                hx.SeedGrid(hx.FeatureMap(seeds.features.data if s is None else s.reshape(3, 3, 4))),
                hx.ProjectionPair(
                    proj.w_fine if wf is None else wf.reshape(5, 3),
                    proj.w_seed if ws is None else ws.reshape(5, 4),
                ),
                cfg,
            )
            return float((field.weights * probe).sum())

        assert finite_diff_check(lambda v: objective(f=v), fine.data, adj.d_fine) < 1e-5
        assert finite_diff_check(lambda v: objective(s=v), seeds.features.data, adj.d_seeds) < 1e-5
        assert finite_diff_check(lambda v: objective(wf=v), proj.w_fine, adj.d_w_fine) < 1e-5
        assert finite_diff_check(lambda v: objective(ws=v), proj.w_seed, adj.d_w_seed) < 1e-5

    def test_entropy_objective_wrt_projections(self):
        rng = np.random.default_rng(47)
        fine, seeds, proj, cfg = make_instance(rng)
        fld = hx.soft_assign(fine, seeds, proj, cfg)
        mask = _kernels.slot_mask(fld.counts)

        def entropy_of(field):
            w = field.weights[mask]
            return float(-(w * np.log(w)).sum())

        upstream = np.where(mask, -(np.log(np.where(mask, fld.weights, 1.0)) + 1.0), 0.0)
        adj = hx.backward_soft_assign(fine, seeds, proj, cfg, upstream, fld=fld)

        def f_wf(v):
            return entropy_of(
                hx.soft_assign(fine, seeds, hx.ProjectionPair(v.reshape(5, 3), proj.w_seed), cfg)
            )

        def f_ws(v):
            return entropy_of(
                hx.soft_assign(fine, seeds, hx.ProjectionPair(proj.w_fine, v.reshape(5, 4)), cfg)
            )

        assert finite_diff_check(f_wf, proj.w_fine, adj.d_w_fine) < 1e-5
        assert finite_diff_check(f_ws, proj.w_seed, adj.d_w_seed) < 1e-5

    def test_fifty_random_instances(self):
        # decode-then-sum objective across sizes, both similarities
        rng = np.random.default_rng(48)
        worst = 0.0
        for trial in range(50):
            h = int(rng.integers(3, 8))
            w = int(rng.integers(3, 8))
            sim = "cosine" if trial % 2 else "nse"
            fine, seeds, proj, cfg = make_instance(rng, h, w, similarity=sim)
            fld = hx.soft_assign(fine, seeds, proj, cfg)
            probe = rng.standard_normal(fld.weights.shape) * _kernels.slot_mask(fld.counts)
            adj = hx.backward_soft_assign(fine, seeds, proj, cfg, probe, fld=fld)

            def f(v):
                field = hx.soft_assign(hx.FeatureMap(v.reshape(fine.data.shape)), seeds, proj, cfg)
                return float((field.weights * probe).sum())

            worst = max(worst, finite_diff_check(f, fine.data, adj.d_fine))
        assert worst < 1e-5


class TestFiniteDiffCheck:
    def test_quadratic_is_nearly_exact(self):
        rng = np.random.default_rng(49)
        a = rng.standard_normal((6, 6))
        a = a + a.T
        x = rng.standard_normal(6)

        def f(v):
            return float(0.5 * v @ a @ v)

        assert finite_diff_check(f, x, a @ x, eps=1e-4) < 1e-10

    def test_eps_out_of_range_rejected(self):
        with pytest.raises(hx.InvalidInputError):
            finite_diff_check(lambda v: float(v.sum()), np.ones(2), np.ones(2), eps=1e-2)

    def test_nonfinite_names_coordinate(self):
        def f(v):
            with np.errstate(invalid="ignore"):
                return float(np.sqrt(v[1]))

        with pytest.raises(hx.NumericalError, match="coordinate 1"):
            finite_diff_check(f, np.array([1.0, 0.0]), np.zeros(2))
