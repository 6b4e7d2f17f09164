import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from agcabc.core import InsufficientBudgetError, UniformBoxPrior
from agcabc.evaluation import (
    analytic_posterior,
    build_grid,
    compare,
    contour_slice,
    jsd,
    read_grid_csv,
    reference_posterior,
    residual_heterogeneity,
    simulate_pool,
    write_grid_csv,
    write_meta_json,
    write_table_csv,
)
from agcabc.grid import DensityGrid, GridSpec
from agcabc.simulators import get_model, linear_gaussian, observe


# ---------------------------------------------------------------------------
# grids


def test_build_grid_joint_bounds():
    g = build_grid(np.array([[0.0], [1.0]]), np.array([[0.5], [2.0]]))
    np.testing.assert_array_equal(g.bounds, [[0.0, 2.0]])
    assert not g.widened
    np.testing.assert_allclose(g.axes()[0][:2], [1 / 30, 3 / 30])


def test_build_grid_degenerate_point_is_widened():
    g = build_grid(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]))
    assert g.widened
    np.testing.assert_allclose(g.bounds, [[1 - 1e-6, 1 + 1e-6], [2 - 1e-6, 2 + 1e-6]])


def test_build_grid_three_dimensions_size():
    rng = np.random.default_rng(0)
    g = build_grid(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    assert g.size == 27_000 and g.points().shape == (27_000, 3)


def test_build_grid_rejects_empty():
    with pytest.raises(ValueError):
        build_grid(np.empty((0, 2)), np.ones((3, 2)))


# ---------------------------------------------------------------------------
# jsd


def _grid1d(lo=-6.0, hi=7.0, n=30):
    return GridSpec([[lo, hi]], n)


def test_jsd_self_is_zero():
    g = _grid1d()
    p = DensityGrid(g, stats.norm.pdf(g.axes()[0]))
    assert jsd(p, p) == 0.0


def test_jsd_disjoint_is_ln2():
    g = _grid1d(n=10)
    a = np.zeros(10)
    b = np.zeros(10)
    a[:5], b[5:] = 1.0, 1.0
    assert abs(jsd(DensityGrid(g, a), DensityGrid(g, b)) - math.log(2)) <= 1e-12


def test_jsd_normals_match_quadrature():
    # independent oracle: the continuous JSD by adaptive quadrature, compared
    # with the discretized value on a fine grid
    p, q = stats.norm(0, 1), stats.norm(1, 1)

    def integrand(x):
        a, b = p.pdf(x), q.pdf(x)
        m = 0.5 * (a + b)
        return 0.5 * a * math.log(a / m) + 0.5 * b * math.log(b / m)

    exact, _ = integrate.quad(integrand, -12, 13, limit=200)
    g = _grid1d(-12, 13, 3000)
    x = g.axes()[0]
    val = jsd(DensityGrid(g, p.pdf(x)), DensityGrid(g, q.pdf(x)))
    assert abs(val - exact) <= 1e-3
    # the 30-point protocol grid should not be far off either
    g30 = _grid1d()
    x30 = g30.axes()[0]
    assert abs(jsd(DensityGrid(g30, p.pdf(x30)), DensityGrid(g30, q.pdf(x30))) - exact) <= 0.01


def test_jsd_survives_subnormal_cells():
    g = _grid1d(n=4)
    a = np.array([0.5, 0.5, 5e-324, 0.0])
    b = np.array([0.4, 0.6, 0.0, 0.0])
    val = jsd(DensityGrid(g, a), DensityGrid(g, b))
    assert 0 < val < 0.01


def test_jsd_mismatched_grids():
    a = DensityGrid(_grid1d(), np.ones(30))
    b = DensityGrid(_grid1d(n=31), np.ones(31))
    with pytest.raises(ValueError):
        jsd(a, b)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, 16, elements=st.floats(0, 1e3)),
    arrays(np.float64, 16, elements=st.floats(0, 1e3)),
)
def test_jsd_symmetric_and_bounded(a, b):
    if a.sum() <= 0 or b.sum() <= 0:
        return
    g = GridSpec([[0, 1], [0, 1]], 4)
    p, q = DensityGrid(g, a.reshape(4, 4)), DensityGrid(g, b.reshape(4, 4))
    assert abs(p.values.sum() - 1) <= 1e-10
    d1, d2 = jsd(p, q), jsd(q, p)
    assert abs(d1 - d2) <= 1e-12
    assert 0.0 <= d1 <= math.log(2) + 1e-12


# ---------------------------------------------------------------------------
# reference posteriors


@pytest.fixture(scope="module")
def lg_case():
    m = linear_gaussian()
    _, s = observe(m, 0)
    return m, s


def test_reference_quantile_one_is_flat(lg_case):
    m, s = lg_case
    ref = reference_posterior(m, m.prior, s, 20_000, 1.0, 0)
    grid = GridSpec(m.prior.bounds, 30)
    flat = DensityGrid(grid, np.ones(grid.shape))
    assert jsd(ref.on_grid(grid), flat) <= 0.05


def test_reference_deterministic(lg_case):
    m, s = lg_case
    a = reference_posterior(m, m.prior, s, 50_000, 0.01, 3)
    b = reference_posterior(m, m.prior, s, 50_000, 0.01, 3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_reference_shared_pool_equals_fresh(lg_case):
    m, s = lg_case
    pool = simulate_pool(m, 80_000, 4)
    a = reference_posterior(m, m.prior, s, 50_000, 0.01, 4, pool=pool)
    b = reference_posterior(m, m.prior, s, 50_000, 0.01, 4)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_reference_needs_200_acceptances(lg_case):
    m, s = lg_case
    with pytest.raises(InsufficientBudgetError):
        reference_posterior(m, m.prior, s, 10_000, 0.01, 0)


def test_reference_conjugate_close_to_truth(lg_case):
    m, s = lg_case
    ref = reference_posterior(m, m.prior, s, 200_000, 0.005, 1)
    assert compare(ref, analytic_posterior(m, s)).jsd <= 0.05


def test_analytic_posterior_samples_match_density(lg_case):
    m, s = lg_case
    post = analytic_posterior(m, s)
    x = post.sample(20_000, 0)
    from agcabc.simulators import linear_gaussian_posterior

    mean, cov = linear_gaussian_posterior(m, s)
    np.testing.assert_allclose(x.mean(axis=0), mean, atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.01)


# ---------------------------------------------------------------------------
# residual heterogeneity


def test_heterogeneity_homoscedastic_model_is_flat(lg_case):
    m, s = lg_case
    rows = residual_heterogeneity(m, m.prior, s, budget=200_000, seed=0, regression="linear")
    assert [r.quantile for r in rows] == [0.001, 0.01, 0.1, 0.25]
    assert rows[0].jsd == 0.0
    assert all(r.jsd <= 0.03 for r in rows)
    assert [r.n_rows for r in rows] == [200, 2000, 20_000, 50_000]


def test_heterogeneity_budget_check(lg_case):
    m, s = lg_case
    with pytest.raises(InsufficientBudgetError):
        residual_heterogeneity(m, m.prior, s, budget=100_000, regression="linear")


# ---------------------------------------------------------------------------
# contour slices


def _gauss3():
    g = GridSpec([[-4, 4], [-4, 4], [-4, 4]], 30)
    cov = np.array([[1.0, 0.5, 0.2], [0.5, 1.5, -0.3], [0.2, -0.3, 0.8]])
    vals = stats.multivariate_normal(np.zeros(3), cov).pdf(g.points()).reshape(g.shape)
    return DensityGrid(g, vals), cov


def test_contour_two_dimensions_is_identity():
    g = GridSpec([[0, 1], [0, 2]], 5)
    vals = np.random.default_rng(0).random((5, 5))
    sl = contour_slice(DensityGrid(g, vals), (0, 1))
    np.testing.assert_allclose(sl.values, vals / vals.sum(), atol=1e-15)
    sw = contour_slice(DensityGrid(g, vals), (1, 0))
    np.testing.assert_allclose(sw.values, sl.values.T, atol=1e-15)


def test_contour_product_density_separates():
    g = GridSpec([[0, 1]] * 3, 10)
    rng = np.random.default_rng(1)
    a, b, c = rng.random(10), rng.random(10), rng.random(10)
    vals = np.einsum("i,j,k->ijk", a, b, c)
    sl = contour_slice(DensityGrid(g, vals), (0, 1))
    expected = np.outer(a, b) / (a.sum() * b.sum())
    np.testing.assert_allclose(sl.values, expected, atol=1e-10)
    assert abs(sl.values.sum() - 1.0) <= 1e-10


def test_contour_matches_gaussian_marginal():
    dg, cov = _gauss3()
    sl = contour_slice(dg, (0, 2))
    xx, yy = np.meshgrid(sl.x, sl.y, indexing="ij")
    marg = stats.multivariate_normal(np.zeros(2), cov[np.ix_([0, 2], [0, 2])]).pdf(np.dstack([xx, yy]))
    marg /= marg.sum()
    assert np.max(np.abs(sl.values - marg)) <= 0.02 * marg.max()


def test_contour_triples_layout():
    dg, _ = _gauss3()
    t = contour_slice(dg, (0, 1)).triples()
    assert t.shape == (900, 3)
    assert t[0, 0] == t[29, 0] and t[0, 1] != t[1, 1]


def test_contour_bad_dims():
    dg, _ = _gauss3()
    with pytest.raises(ValueError):
        contour_slice(dg, (1, 1))
    with pytest.raises(ValueError):
        contour_slice(DensityGrid(_grid1d(), np.ones(30)), (0, 1))


# ---------------------------------------------------------------------------
# files


def test_grid_csv_roundtrip(tmp_path):
    dg, _ = _gauss3()
    path = tmp_path / "p.grid.csv"
    write_grid_csv(dg, path)
    back = read_grid_csv(path)
    assert back.grid.same_as(dg.grid)
    np.testing.assert_allclose(back.values, dg.values, rtol=1e-12, atol=0)


def test_table_and_meta_files(tmp_path):
    rows = [{"quantile": 0.1, "jsd": 0.25}, {"quantile": 0.25, "jsd": 1 / 3}]
    write_table_csv(rows, tmp_path / "t.csv", ["quantile", "jsd"])
    assert (tmp_path / "t.csv").read_text().splitlines() == ["quantile,jsd", "0.1,0.25", f"0.25,{1 / 3!r}"]
    write_meta_json(tmp_path / "t.meta.json", {"seed": np.int64(3), "model": "ma2", "bounds": np.eye(2)})
    meta = json.loads((tmp_path / "t.meta.json").read_text())
    assert "PCG64" in meta["rng"] and meta["seed"] == 3


def test_compare_on_uniform_prior():
    prior = UniformBoxPrior([0, 0], [1, 1])
    from agcabc.pipeline import KdePosterior

    a = KdePosterior(prior.sample(3000, np.random.default_rng(0)))
    b = KdePosterior(prior.sample(3000, np.random.default_rng(1)))
    res = compare(a, b)
    assert res.grid.size == 900
    assert res.jsd < 0.01


def test_gc_toy_analytic_posterior_requires_data():
    with pytest.raises(ValueError):
        analytic_posterior(get_model("gc_toy"), s_obs=np.zeros(3))
