import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import raw_samples as _raw
from oracles import spectrum_dataset, weighted_pca_eigenvalues
from pme.dataset import ElementMeasures, RawSample, assemble
from pme.embedding import (
    EmbeddingConfig,
    backmap,
    bounds,
    build_gw,
    fit,
    load_model,
    normalized_components,
    participation,
    project_sample,
    save_model,
    truncate,
    variance_convergence,
)
from pme.errors import ValidationError
from pme.gpca import gw_gram


def random_raw(seed, M=6, rows=10, S=12, n_c=0):
    r = np.random.default_rng(seed)
    U = r.uniform(-1, 1, (M, S))
    D = r.normal(size=(rows, M)) @ U + 0.1 * r.normal(size=(rows, S))
    C = r.normal(size=(n_c, M)) @ U if n_c else None
    return _raw(D, U, C=C)


# -- build_gw -------------------------------------------------------------


def test_gw_pme_uniform():
    r = np.random.default_rng(0)
    U = r.normal(size=(2, 5))
    D = r.normal(size=(3, 5))
    snaps = assemble(_raw(D, U), ElementMeasures(geometry=np.ones(3)), "pme")
    np.testing.assert_array_equal(build_gw(snaps, EmbeddingConfig()), [1, 1, 1, 0, 0])


def test_gw_lumped_inverse_variance():
    U = np.array([[0.0, 1.0]])
    C = np.array([[1.0, 3.0]])
    snaps = assemble(_raw(None, U, C=C), mode="pd-pme")
    np.testing.assert_allclose(build_gw(snaps, EmbeddingConfig(mode="pd-pme")), [0.0, 1.0])


def test_gw_constant_lumped_row_zero_with_warning():
    U = np.array([[0.0, 1.0, 2.0]])
    C = np.array([[1.0, 3.0, 2.0], [7.0, 7.0, 7.0]])
    snaps = assemble(_raw(None, U, C=C), mode="pd-pme")
    with pytest.warns(RuntimeWarning, match="zero variance"):
        gw = build_gw(snaps, EmbeddingConfig(mode="pd-pme"))
    assert gw[2] == 0.0 and gw[1] > 0


def test_gw_distributed_uses_measures():
    r = np.random.default_rng(1)
    U = r.normal(size=(2, 6))
    F = r.normal(size=(3, 6)) * [[1.0], [2.0], [4.0]]
    meas = ElementMeasures(physics=[0.5, 1.0, 2.0])
    snaps = assemble(_raw(None, U, F=F), meas, "pd-pme", iqr_k=None)
    gw = build_gw(snaps, EmbeddingConfig(mode="pd-pme"))
    var = np.var(F, axis=1)
    np.testing.assert_allclose(gw, [0, 0, *(np.array([0.5, 1.0, 2.0]) / var)], rtol=1e-12)


def test_gw_pd_has_no_geometry_rows():
    snaps = assemble(random_raw(0, n_c=2), mode="pd-pme")
    gw = build_gw(snaps, EmbeddingConfig(mode="pd-pme"))
    assert gw.size == 6 + 2
    assert np.all(gw[:6] == 0)


def test_gw_pi_geometry_block_normalized():
    snaps = assemble(random_raw(2, n_c=2), mode="pi-pme")
    gw = build_gw(snaps, EmbeddingConfig(mode="pi-pme"))
    geo_var = np.sum(gw[:10] * np.mean(snaps.D**2, axis=1))
    assert geo_var == pytest.approx(1.0, rel=1e-12)
    plain = build_gw(snaps, EmbeddingConfig(mode="pi-pme", geometry_scaling="none"))
    np.testing.assert_array_equal(plain[:10], np.ones(10))


def test_gw_explicit_overrides():
    snaps = assemble(random_raw(3, n_c=2), mode="pi-pme")
    gw = build_gw(snaps, EmbeddingConfig(mode="pi-pme", c_weights=(2.0, 0.0)))
    np.testing.assert_array_equal(gw[-2:], [2.0, 0.0])
    with pytest.raises(ValidationError):
        build_gw(snaps, EmbeddingConfig(mode="pi-pme", c_weights=(1.0,)))


def test_gw_mode_mismatch():
    snaps = assemble(random_raw(0, n_c=1), mode="pme")
    with pytest.raises(ValidationError, match="mode/block mismatch"):
        build_gw(snaps, EmbeddingConfig(mode="pi-pme"))


def test_config_validation():
    with pytest.raises(ValidationError):
        EmbeddingConfig(confidence=0.0)
    with pytest.raises(ValidationError):
        EmbeddingConfig(confidence=1.5)
    with pytest.raises(ValidationError):
        EmbeddingConfig(geometry_weights=(-1.0,))
    assert EmbeddingConfig().physics_policy == "inverse-variance"
    assert EmbeddingConfig(f_weights=(1.0,)).physics_policy == "explicit"


# -- fit ------------------------------------------------------------------


def test_fit_rank_one_pattern():
    r = np.random.default_rng(4)
    U = r.uniform(-1, 1, (3, 10))
    direction = np.array([1.0, -2.0, 0.5])
    pattern = r.normal(size=7)
    D = np.outer(pattern, direction @ U)
    model = fit(assemble(_raw(D, U), mode="pme"), EmbeddingConfig())
    assert model.rank == 1
    v = model.v[:, 0]
    # v is the least-squares regression of u on the single reduced coordinate
    theta = model.theta[:, 0]
    Uc = U - U.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(v, Uc @ theta / (theta @ theta), rtol=1e-10)


def test_fit_pd_rank_limited_by_lumped_count():
    snaps = assemble(random_raw(5, M=5, n_c=2), mode="pd-pme")
    model = fit(snaps, EmbeddingConfig(mode="pd-pme"))
    assert model.rank <= 2


def test_fit_pme_matches_weighted_pca_of_geometry():
    raw = random_raw(6, M=5, rows=5, S=6)
    snaps = assemble(raw, mode="pme")
    model = fit(snaps, EmbeddingConfig())
    ref = weighted_pca_eigenvalues(snaps.D, snaps.measures.geometry)
    np.testing.assert_allclose(model.eigenvalues, ref, rtol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_spectrum_equals_weighted_pca(seed):
    snaps = assemble(random_raw(100 + seed, M=6, rows=10, S=12), mode="pme")
    model = fit(snaps, EmbeddingConfig())
    np.testing.assert_allclose(
        model.eigenvalues, weighted_pca_eigenvalues(snaps.D, snaps.measures.geometry), rtol=1e-8
    )


def test_fit_block_partition(fitted):
    for mode, (snaps, model) in fitted.items():
        lay = model.layout
        assert model.q.shape[0] == lay.n_geometry == (0 if mode == "pd-pme" else 129)
        assert model.v.shape[0] == 12
        assert model.phi.shape[0] == (0 if mode == "pme" else 129)
        assert model.pi.shape[0] == (0 if mode == "pme" else 2)
        assert np.all(np.diff(model.eigenvalues) <= 0)


def test_full_rank_round_trip(fitted):
    snaps, model = fitted["pme"]
    U = snaps.U + snaps.mean_u[:, None]
    for j in range(snaps.n_samples):
        u = backmap(model, model.theta[j])
        np.testing.assert_allclose(u, U[:, j], rtol=1e-6, atol=1e-6 * np.abs(U).max())


def test_theta_columns_centered(fitted):
    for _, model in fitted.values():
        means = model.theta.mean(axis=0)
        assert np.all(np.abs(means) <= 1e-9 * np.sqrt(model.eigenvalues))


def test_projection_variance_identity_on_fit(fitted):
    for _, model in fitted.values():
        np.testing.assert_allclose(np.mean(model.theta**2, axis=0), model.eigenvalues, rtol=1e-6)


def test_gw_orthonormal_on_fit(fitted):
    for _, model in fitted.values():
        np.testing.assert_allclose(gw_gram(model.vectors, model.gw), np.eye(model.rank), atol=1e-8)


def test_fit_records_provenance(fitted):
    _, model = fitted["pd-pme"]
    assert model.provenance["n_samples"] == 1024
    assert model.provenance["config_hash"] == EmbeddingConfig(mode="pd-pme").digest()
    assert any("zero variance" in w for w in model.provenance["warnings"])


# -- truncate -------------------------------------------------------------


@pytest.fixture(scope="module")
def spectrum_model():
    return fit(assemble(spectrum_dataset([4, 3, 2, 1]), mode="pme"), EmbeddingConfig())


def test_spectrum_dataset_eigenvalues(spectrum_model):
    np.testing.assert_allclose(spectrum_model.eigenvalues, [4, 3, 2, 1], rtol=1e-12)


@pytest.mark.parametrize("level,expected", [(0.7, 2), (0.9, 3), (0.4, 1), (0.41, 2), (1.0, 4)])
def test_truncate(spectrum_model, level, expected):
    assert truncate(spectrum_model, level) == expected


def test_truncate_single_mode():
    D = np.array([[np.sqrt(10.0), -np.sqrt(10.0)]])
    model = fit(assemble(_raw(D, D.copy()), mode="pme"), EmbeddingConfig())
    assert truncate(model, 0.5) == 1


def test_truncate_full_variance_is_rank(fitted):
    for _, model in fitted.values():
        assert truncate(model, 1.0) == model.rank


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_truncate_monotone(l1, l2):
    model = fit(assemble(random_raw(9), mode="pme"), EmbeddingConfig())
    l1, l2 = sorted((l1, l2))
    assert truncate(model, l1) <= truncate(model, l2)


def test_truncate_rejects_bad_level(spectrum_model):
    with pytest.raises(ValidationError):
        truncate(spectrum_model, 0.0)


# -- backmap / project_sample / bounds ------------------------------------


def test_backmap_origin_is_mean(fitted):
    _, model = fitted["pi-pme"]
    np.testing.assert_array_equal(backmap(model, np.zeros(3)), model.mean_u)
    np.testing.assert_array_equal(backmap(model, []), model.mean_u)


def test_backmap_affine(fitted, rng):
    _, model = fitted["pme"]
    x1, x2 = rng.normal(size=(2, 5))
    np.testing.assert_allclose(
        backmap(model, x1 + x2), backmap(model, x1) + backmap(model, x2) - model.mean_u, atol=1e-15
    )


def test_backmap_too_many_coordinates(fitted):
    _, model = fitted["pd-pme"]
    with pytest.raises(ValidationError):
        backmap(model, np.zeros(model.rank + 1))


def test_project_sample(fitted):
    snaps, model = fitted["pi-pme"]
    j = 17
    x = project_sample(
        model,
        d=snaps.D[:, j] + snaps.mean_d,
        f=snaps.F[:, j] + snaps.mean_f,
        c=snaps.C[:, j] + snaps.mean_c,
    )
    np.testing.assert_allclose(x, model.theta[j], atol=1e-10 * np.abs(model.theta).max())
    zero = project_sample(model, d=model.mean_d, f=model.mean_f, c=model.mean_c)
    np.testing.assert_array_equal(zero, np.zeros(model.rank))
    doubled = project_sample(
        model,
        d=2 * snaps.D[:, j] + snaps.mean_d,
        f=2 * snaps.F[:, j] + snaps.mean_f,
        c=2 * snaps.C[:, j] + snaps.mean_c,
        n_modes=4,
    )
    np.testing.assert_allclose(doubled, 2 * x[:4], rtol=1e-9, atol=1e-12)


def test_project_sample_missing_block(fitted):
    _, model = fitted["pi-pme"]
    with pytest.raises(ValidationError, match="missing weighted block"):
        project_sample(model, d=model.mean_d, c=model.mean_c)


def test_bounds(fitted):
    _, model = fitted["pme"]
    b = bounds(model)
    assert b.shape == (model.rank, 2)
    assert np.all(b[:, 0] <= b[:, 1])
    assert np.all((model.theta >= b[:, 0]) & (model.theta <= b[:, 1]))


def test_bounds_symmetric_data():
    r = np.random.default_rng(2)
    half = r.normal(size=(4, 5))
    D = np.hstack([half, -half])
    U = np.hstack([half[:2], -half[:2]])
    model = fit(assemble(_raw(D, U), mode="pme"), EmbeddingConfig())
    np.testing.assert_allclose(model.lower, -model.upper, atol=1e-9)


# -- participation / components ------------------------------------------


def test_participation_pme_all_geometry(fitted):
    _, model = fitted["pme"]
    for k in range(model.rank):
        p = participation(model, k)
        assert p["geometry"] == pytest.approx(1.0, abs=1e-12)
        assert p["distributed"] == 0.0 and p["lumped"] == 0.0


def test_participation_sums_to_one(fitted):
    for _, model in fitted.values():
        for k in range(model.rank):
            p = participation(model, k)
            parts = [p["geometry"], p["distributed"], p["lumped"]]
            assert min(parts) >= 0
            assert sum(parts) == pytest.approx(1.0, abs=1e-9)
            assert p["lumped_split"].sum() == pytest.approx(p["lumped"], abs=1e-12)


def test_participation_lumped_only_mode():
    r = np.random.default_rng(8)
    U = r.normal(size=(3, 10))
    C = U[:2] * [[2.0], [5.0]]
    model = fit(assemble(_raw(None, U, C=C), mode="pd-pme", iqr_k=None), EmbeddingConfig(mode="pd-pme"))
    for k in range(model.rank):
        assert participation(model, k)["lumped"] == pytest.approx(1.0)


def test_pi_with_zero_physics_weights_degenerates_to_pme(case, sobol_raw):
    snaps = assemble(sobol_raw[:256], case.measures(), "pi-pme")
    cfg = EmbeddingConfig(
        mode="pi-pme", f_weights=(0.0,) * case.n_stations, c_weights=(0.0, 0.0), geometry_scaling="none"
    )
    model = fit(snaps, cfg)
    for k in range(model.rank):
        assert participation(model, k)["geometry"] == pytest.approx(1.0, abs=1e-12)
    pme = fit(assemble(sobol_raw[:256], case.measures(), "pme"), EmbeddingConfig())
    np.testing.assert_allclose(model.eigenvalues, pme.eigenvalues, rtol=1e-10)


def test_normalized_components_example():
    class Stub:
        rank = 1
        v = np.array([[3.0], [-6.0], [0.0]])

    np.testing.assert_allclose(normalized_components(Stub, 0), [0.5, 1.0, 0.0])


def test_normalized_components_properties(fitted):
    _, model = fitted["pme"]
    for k in range(model.rank):
        c = normalized_components(model, k)
        assert c.max() == 1.0 and c.min() >= 0.0


def test_normalized_components_zero_vector_warns():
    class Stub:
        rank = 1
        v = np.zeros((3, 1))

    with pytest.warns(RuntimeWarning):
        np.testing.assert_array_equal(normalized_components(Stub, 0), np.zeros(3))


def test_normalized_components_permutation_equivariant(rng):
    raw = random_raw(12)
    perm = rng.permutation(6)
    permuted = [RawSample(u=s.u[perm], d=s.d, id=s.id) for s in raw]
    a = fit(assemble(raw, mode="pme"), EmbeddingConfig())
    b = fit(assemble(permuted, mode="pme"), EmbeddingConfig())
    for k in range(a.rank):
        np.testing.assert_allclose(
            normalized_components(b, k), normalized_components(a, k)[perm], atol=1e-9
        )


# -- variance_convergence -------------------------------------------------


def test_variance_convergence(case, sobol_raw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = variance_convergence(
            sobol_raw, case.measures(), EmbeddingConfig(mode="pi-pme"), [16, 64, 256, 1024, 4096]
        )
    assert rows[-1]["rel_error_total"] == 0.0
    errors = [r["rel_error_total"] for r in rows]
    # early sizes are noisier than late ones
    assert max(errors[:2]) >= max(errors[2:])
    assert all(r["geometric"] > 0 and r["physical"] > 0 for r in rows)


def test_variance_convergence_pme_no_physics(case, sobol_raw):
    rows = variance_convergence(sobol_raw, case.measures(), EmbeddingConfig(), [32, 128])
    assert all(r["physical"] == 0.0 for r in rows)
    assert rows[-1]["rel_error_geometric"] == 0.0


def test_variance_convergence_validates_sizes(case, sobol_raw):
    cfg = EmbeddingConfig()
    for sizes in ([], [64, 32], [1, 8], [10**6]):
        with pytest.raises(ValidationError):
            variance_convergence(sobol_raw, case.measures(), cfg, sizes)


# -- persistence ----------------------------------------------------------


def test_model_json_round_trip(fitted, tmp_path, rng):
    for mode, (_, model) in fitted.items():
        path = tmp_path / f"{mode}.json"
        save_model(model, path)
        back = load_model(path)
        assert back.mode is model.mode and back.layout == model.layout
        np.testing.assert_array_equal(back.vectors, model.vectors)
        np.testing.assert_array_equal(back.theta, model.theta)
        np.testing.assert_array_equal(back.gw, model.gw)
        assert back.total_variance == model.total_variance
        assert back.n_modes == model.n_modes
        for x in rng.normal(size=(5, model.rank)):
            assert np.array_equal(backmap(back, x), backmap(model, x))


def test_load_model_errors(tmp_path):
    with pytest.raises(ValidationError):
        load_model(tmp_path / "none.json")
    p = tmp_path / "bad.json"
    p.write_text('{"schema_version": 99}')
    with pytest.raises(ValidationError, match="schema"):
        load_model(p)
