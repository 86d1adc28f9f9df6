import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import chi2_pooled
from midx import samplers as smp
from midx.quantizer import build_index


def instance(seed, m=50, dim=8, k=4):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(m, dim))
    z = rng.normal(size=dim)
    return emb, z, build_index(emb, k, seed=seed)


class TestOracle:
    def test_zero_query_uniform(self, rng):
        np.testing.assert_allclose(smp.softmax_oracle(np.zeros(3), rng.normal(size=(7, 3))), 1 / 7)

    def test_single_item(self):
        assert smp.softmax_oracle([0.3, -2.0], [[5.0, 1.0]]).tolist() == [1.0]

    def test_analytic(self):
        p = smp.softmax_oracle([1.0, 0.0], [[np.log(2), 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(p, [2 / 3, 1 / 3], atol=1e-15)

    def test_huge_logits(self):
        p = smp.softmax_oracle([1.0], [[1000.0], [999.0]])
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


class TestExact:
    def test_matches_oracle(self):
        emb, z, idx = instance(0)
        ctx = smp.prepare_exact(z, idx)
        assert np.max(np.abs(ctx.distribution() - smp.softmax_oracle(z, emb))) < 1e-10

    def test_psi_is_sum_of_omega(self):
        emb, z, idx = instance(1)
        ctx = smp.prepare_exact(z, idx)
        z2 = z[4:]
        log_terms = ctx.log_omega + (idx.codebooks[1] @ z2)[None, :]
        with np.errstate(divide="ignore"):
            psi = np.exp(ctx.log_psi)
        np.testing.assert_allclose(psi, np.exp(log_terms).sum(axis=1), rtol=1e-10)

    def test_single_cell(self, rng):
        emb = rng.normal(size=(15, 4))
        z = rng.normal(size=4)
        ctx = smp.prepare_exact(z, build_index(emb, 1))
        assert ctx.log_p1.tolist() == [0.0] and ctx.log_p2.tolist() == [[0.0]]
        np.testing.assert_allclose(np.exp(ctx.cells.log_p_items(ctx.index)), smp.softmax_oracle(z, emb), atol=1e-12)

    def test_stage_three_support_is_the_drawn_cell(self, rng):
        emb, z, idx = instance(2, k=4)
        ctx = smp.prepare_exact(z, idx)
        items = smp.sample_batch(ctx, 2000, rng).items
        for i in items[:200]:
            k1, k2 = idx.assignments[i]
            assert i in idx.bucket(k1, k2)

    def test_dimension_mismatch(self):
        _, _, idx = instance(0)
        with pytest.raises(ValueError):
            smp.prepare_exact(np.zeros(6), idx)

    def test_non_finite_query(self):
        _, _, idx = instance(0)
        with pytest.raises(ValueError):
            smp.prepare_uni(np.full(8, np.nan), idx)

    def test_large_logits_stay_finite(self):
        emb, z, idx = instance(3)
        ctx = smp.prepare_exact(400 * z, idx)
        np.testing.assert_allclose(ctx.distribution(), smp.softmax_oracle(400 * z, emb), atol=1e-10)


class TestUni:
    def test_zero_query(self):
        _, _, idx = instance(0)
        np.testing.assert_allclose(smp.prepare_uni(np.zeros(8), idx).distribution(), 1 / 50, atol=1e-14)

    def test_zero_residuals_equals_softmax(self, rng):
        c1, c2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        a = rng.integers(0, 3, size=(30, 2))
        emb = np.concatenate([c1[a[:, 0]], c2[a[:, 1]]], axis=1)
        idx = build_index(emb, 3)
        assert idx.max_residual_norm < 1e-12
        z = rng.normal(size=4)
        np.testing.assert_allclose(smp.prepare_uni(z, idx).distribution(), smp.softmax_oracle(z, emb), atol=1e-12)

    def test_closed_form(self):
        _, z, idx = instance(4)
        np.testing.assert_allclose(smp.prepare_uni(z, idx).distribution(), smp.uni_distribution(z, idx), atol=1e-10)

    def test_empty_cells_get_no_mass(self):
        emb, z, idx = instance(5, m=12, k=4)
        assert np.any(idx.bucket_sizes == 0)
        ctx = smp.prepare_uni(z, idx)
        empty = (idx.bucket_sizes == 0).reshape(4, 4)
        assert np.all(np.exp(ctx.log_p2[empty]) == 0)


class TestPop:
    def test_constant_pop_is_uni(self):
        _, z, idx = instance(6)
        np.testing.assert_allclose(smp.prepare_pop(z, idx, np.ones(50)).distribution(),
                                   smp.prepare_uni(z, idx).distribution(), atol=1e-14)

    def test_zero_query(self, rng):
        _, _, idx = instance(7)
        pop = rng.random(50) + 0.1
        np.testing.assert_allclose(smp.prepare_pop(np.zeros(8), idx, pop).distribution(), pop / pop.sum(), atol=1e-14)

    def test_closed_form_log1p(self, rng):
        _, z, idx = instance(8)
        pop = np.log1p(rng.zipf(1.7, size=50))
        np.testing.assert_allclose(smp.prepare_pop(z, idx, pop).distribution(),
                                   smp.pop_distribution(z, idx, pop), atol=1e-10)

    def test_zero_pop_cell_gets_no_mass(self):
        _, z, idx = instance(9, k=2)
        pop = np.ones(50)
        pop[idx.bucket(0, 0)] = 0.0
        p = smp.prepare_pop(z, idx, pop).distribution()
        assert np.all(p[idx.bucket(0, 0)] == 0) and abs(p.sum() - 1) < 1e-12

    def test_all_zero_pop(self):
        _, z, idx = instance(0)
        with pytest.raises(ValueError):
            smp.prepare_pop(z, idx, np.zeros(50))


class TestStatic:
    def test_uniform(self):
        ctx = smp.static_sampler("uniform", 4)
        np.testing.assert_allclose(ctx.log_prob(np.arange(4)), -np.log(4))

    def test_popularity_raw(self):
        np.testing.assert_allclose(smp.static_sampler("popularity", 2, [1.0, 3.0]).distribution(), [0.25, 0.75])

    def test_popularity_log1p_zero(self):
        w = np.log1p([0.0, np.e - 1])
        np.testing.assert_allclose(smp.static_sampler("popularity", 2, w).distribution(), [0.0, 1.0], atol=1e-15)

    def test_popularity_needs_pop(self):
        with pytest.raises(ValueError):
            smp.static_sampler("popularity", 3)


@given(st.integers(0, 2**31), st.integers(1, 200), st.sampled_from([4, 8, 16]), st.sampled_from([2, 4, 8]))
def test_decomposition_exact(seed, m, dim, k):
    emb, z, idx = instance(seed, m, dim, k)
    pop = np.log1p(np.random.default_rng(seed).integers(0, 20, m)) + 0.01
    p = smp.prepare_exact(z, idx).distribution()
    assert np.max(np.abs(p - smp.softmax_oracle(z, emb))) < 1e-10
    assert abs(p.sum() - 1) < 1e-8
    assert np.max(np.abs(smp.prepare_uni(z, idx).distribution() - smp.uni_distribution(z, idx))) < 1e-10
    assert np.max(np.abs(smp.prepare_pop(z, idx, pop).distribution() - smp.pop_distribution(z, idx, pop))) < 1e-10


@given(st.integers(0, 2**31), st.sampled_from(["exact", "uni", "pop", "uniform", "popularity"]))
def test_log_q_matches_closed_form(seed, kind):
    emb, z, idx = instance(seed, 40, 4, 3)
    rng = np.random.default_rng(seed)
    pop = rng.random(40) + 0.05
    ctx = smp.prepare(kind, z, idx, pop=pop, num_items=40)
    draws = smp.sample_batch(ctx, 64, rng)
    assert np.all(np.isfinite(draws.log_q)) and np.all(draws.log_q <= 0)
    np.testing.assert_allclose(draws.log_q, np.log(ctx.distribution()[draws.items]), atol=1e-12)
    np.testing.assert_allclose(draws.log_q, ctx.log_prob(draws.items), atol=1e-12)


class TestSampleBatch:
    def test_zero_draws(self, rng):
        _, z, idx = instance(0)
        out = smp.sample_batch(smp.prepare_uni(z, idx), 0, rng)
        assert len(out) == 0 and list(out) == []

    def test_sample_records(self, rng):
        _, z, idx = instance(0)
        out = smp.sample_batch(smp.prepare_exact(z, idx), 5, rng)
        assert len(list(out)) == 5 and out[0].item == int(out.items[0])

    def test_seeded_reproducible(self):
        _, z, idx = instance(0)
        ctx = smp.prepare_exact(z, idx)
        a = smp.sample_batch(ctx, 100, np.random.default_rng(1)).items
        b = smp.sample_batch(ctx, 100, np.random.default_rng(1)).items
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("kind", ["exact", "uni", "pop"])
    def test_chi_square_m20(self, kind):
        rng = np.random.default_rng(11)
        emb, z, idx = instance(11, 20, 4, 3)
        pop = rng.random(20) + 0.1
        ctx = smp.prepare(kind, z, idx, pop=pop)
        target = smp.softmax_oracle(z, emb) if kind == "exact" else ctx.distribution()
        counts = np.bincount(smp.sample_batch(ctx, 200_000, rng).items, minlength=20)
        stat, dof = chi2_pooled(counts, target)
        assert stat < stats.chi2.ppf(0.99, dof)
