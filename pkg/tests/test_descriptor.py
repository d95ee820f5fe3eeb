"""Two-body descriptor: grid accumulation, invariances, distance, caching."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from alcurator.descriptor import (
    ConfigMismatchError,
    DescriptorMatrix,
    DescriptorVector,
    GeometryError,
    MbtrConfig,
    VocabularyError,
    dataset_descriptors,
    descriptor_distance,
    format_feature_table,
    infer_vocabulary,
    mbtr_k2,
    mbtr_matrix,
    parse_feature_table,
    read_feature_table,
)
from alcurator.moldata import Dataset, Molecule


def _mol(species, positions, mol_id="m"):
    return Molecule(
        id=mol_id,
        species=tuple(species),
        positions=np.asarray(positions, dtype=float),
    )


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class TestMbtrConfig:
    def test_pair_blocks_follow_vocabulary_order(self):
        cfg = MbtrConfig(elements=("H", "C", "O"))
        assert cfg.pair_blocks == (
            ("H", "H"),
            ("H", "C"),
            ("H", "O"),
            ("C", "C"),
            ("C", "O"),
            ("O", "O"),
        )
        assert cfg.vector_length == 6 * cfg.grid_n

    def test_block_of_is_unordered(self):
        cfg = MbtrConfig(elements=("H", "O"))
        assert cfg.block_of("O", "H") == cfg.block_of("H", "O")

    def test_block_of_rejects_strangers(self):
        cfg = MbtrConfig(elements=("H",))
        with pytest.raises(VocabularyError, match="'O'"):
            cfg.block_of("H", "O")

    def test_validation(self):
        with pytest.raises(ValueError, match="vocabulary is empty"):
            MbtrConfig(elements=())
        with pytest.raises(ValueError, match="duplicate"):
            MbtrConfig(elements=("H", "H"))
        with pytest.raises(ValueError, match="grid_min"):
            MbtrConfig(elements=("H",), grid_min=1.0, grid_max=1.0)
        with pytest.raises(ValueError, match="grid_n"):
            MbtrConfig(elements=("H",), grid_n=1)
        with pytest.raises(ValueError, match="sigma"):
            MbtrConfig(elements=("H",), sigma=0.0)
        with pytest.raises(ValueError, match="unknown element"):
            MbtrConfig(elements=("Zz",))

    def test_hash_tracks_every_knob(self):
        base = MbtrConfig(elements=("H",))
        assert base.config_hash == MbtrConfig(elements=("H",)).config_hash
        tweaked = [
            MbtrConfig(elements=("H", "C")),
            MbtrConfig(elements=("H",), grid_n=50),
            MbtrConfig(elements=("H",), sigma=0.05),
            MbtrConfig(elements=("H",), weight_scale=0.7),
            MbtrConfig(elements=("H",), grid_max=2.0),
        ]
        for other in tweaked:
            assert other.config_hash != base.config_hash


class TestMbtrK2:
    def test_h2_peak_bin_contains_inverse_distance(self):
        cfg = MbtrConfig(elements=("H",), weight_scale=0.0)
        mol = _mol(["H", "H"], [[0, 0, 0], [0, 0, 1.0]], "h2")
        vec = mbtr_k2(mol, cfg)
        peak = int(np.argmax(vec.values))
        edges = cfg.bin_edges
        assert edges[peak] <= 1.0 <= edges[peak + 1]
        assert_allclose(vec.values.sum(), 1.0, atol=1e-9)

    def test_single_atom_is_zero(self):
        cfg = MbtrConfig(elements=("H",))
        vec = mbtr_k2(_mol(["H"], [[0, 0, 0]]), cfg)
        assert vec.values.shape == (cfg.vector_length,)
        assert np.all(vec.values == 0)

    def test_rigid_motion_invariance(self):
        cfg = MbtrConfig(elements=("H", "O"))
        rng = np.random.default_rng(23)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            species = rng.choice(["H", "O"], size=n)
            pos = rng.normal(size=(n, 3)) * 1.5
            rot = _random_rotation(rng)
            shift = rng.normal(size=3) * 5
            a = mbtr_k2(_mol(species, pos), cfg)
            b = mbtr_k2(_mol(species, pos @ rot.T + shift), cfg)
            assert_allclose(a.values, b.values, atol=1e-10)

    def test_atom_order_invariance(self):
        cfg = MbtrConfig(elements=("H", "C", "O"))
        rng = np.random.default_rng(7)
        species = np.array(["H", "H", "C", "O", "H"])
        pos = rng.normal(size=(5, 3)) * 2
        perm = rng.permutation(5)
        a = mbtr_k2(_mol(species, pos), cfg)
        b = mbtr_k2(_mol(species[perm], pos[perm]), cfg)
        assert_allclose(a.values, b.values, atol=0)

    def test_three_atom_blocks_match_quadrature(self):
        cfg = MbtrConfig(elements=("H", "O"), grid_n=40)
        pos = np.array([[0.0, 0.0, 0.0], [0.9, 0.1, -0.2], [0.1, 1.1, 0.4]])
        mol = _mol(["H", "H", "O"], pos)
        vec = mbtr_k2(mol, cfg)

        def dense_bin_masses(centers_weights):
            masses = np.zeros(cfg.grid_n)
            edges = cfg.bin_edges
            for lo, hi, i in zip(edges[:-1], edges[1:], range(cfg.grid_n)):
                xs = np.linspace(lo, hi, 4001)
                for center, weight in centers_weights:
                    pdf = np.exp(-0.5 * ((xs - center) / cfg.sigma) ** 2)
                    pdf /= cfg.sigma * np.sqrt(2 * np.pi)
                    masses[i] += weight * np.trapezoid(pdf, xs)
            return masses

        pairs = {("H", "H"): [], ("H", "O"): []}
        for i in range(3):
            for j in range(i + 1, 3):
                d = float(np.linalg.norm(pos[i] - pos[j]))
                key = tuple(sorted((mol.species[i], mol.species[j])))
                pairs[key].append((1.0 / d, np.exp(-cfg.weight_scale * d)))
        for pair, contributions in pairs.items():
            block = cfg.block_of(*pair)
            got = vec.values[block * cfg.grid_n : (block + 1) * cfg.grid_n]
            want = dense_bin_masses(contributions)
            assert_allclose(got.sum(), want.sum(), atol=1e-8)
            assert_allclose(got, want, atol=1e-8)

    def test_vocabulary_violation_names_element(self):
        cfg = MbtrConfig(elements=("H",))
        with pytest.raises(VocabularyError, match="'O'"):
            mbtr_k2(_mol(["H", "O"], [[0, 0, 0], [0, 0, 1]]), cfg)

    def test_coincident_atoms_rejected(self):
        cfg = MbtrConfig(elements=("H",))
        with pytest.raises(GeometryError):
            mbtr_k2(_mol(["H", "H"], [[0, 0, 0], [0, 0, 1e-9]]), cfg)

    def test_values_finite_and_nonnegative(self):
        cfg = MbtrConfig(elements=("H", "C"))
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            species = rng.choice(["H", "C"], size=n)
            pos = rng.normal(size=(n, 3)) * 2
            vec = mbtr_k2(_mol(species, pos), cfg)
            assert np.all(np.isfinite(vec.values))
            assert np.all(vec.values >= 0)


class TestDescriptorDistance:
    def test_identity(self):
        cfg = MbtrConfig(elements=("H",))
        vec = mbtr_k2(_mol(["H", "H"], [[0, 0, 0], [0, 0, 1]]), cfg)
        assert descriptor_distance(vec, vec) == 0.0

    def test_three_four_five(self):
        a = DescriptorVector(values=np.array([0.0, 0.0]), config_hash="x")
        b = DescriptorVector(values=np.array([3.0, 4.0]), config_hash="x")
        assert descriptor_distance(a, b) == 5.0

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            av = rng.normal(size=10)
            bv = rng.normal(size=10)
            a = DescriptorVector(values=av, config_hash="x")
            b = DescriptorVector(values=bv, config_hash="x")
            want = np.sqrt(sum((x - y) ** 2 for x, y in zip(av, bv)))
            assert_allclose(descriptor_distance(a, b), want, atol=1e-12)

    def test_config_mismatch(self):
        a = DescriptorVector(values=np.zeros(2), config_hash="x")
        b = DescriptorVector(values=np.zeros(2), config_hash="y")
        with pytest.raises(ConfigMismatchError):
            descriptor_distance(a, b)


def _water_box_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    mols = []
    for k in range(n):
        pos = rng.normal(size=(3, 3))
        pos[1] += [1.0, 0, 0]
        pos[2] += [0, 1.0, 0]
        mols.append(
            Molecule(
                id=f"w{k}",
                species=("O", "H", "H"),
                positions=pos,
                label=float(rng.normal(-9, 1)),
            )
        )
    return Dataset(name="water", molecules=tuple(mols))


class TestMatrixAndTables:
    def test_matrix_rows_match_single_calls(self):
        cfg = MbtrConfig(elements=("H", "O"), grid_n=30)
        ds = _water_box_dataset(5)
        matrix = mbtr_matrix(ds.molecules, cfg)
        assert matrix.values.shape == (5, cfg.vector_length)
        for k, mol in enumerate(ds.molecules):
            assert_allclose(matrix.values[k], mbtr_k2(mol, cfg).values, atol=0)

    def test_feature_table_roundtrip(self):
        cfg = MbtrConfig(elements=("H", "O"), grid_n=10)
        ds = _water_box_dataset(4)
        matrix = mbtr_matrix(ds.molecules, cfg)
        text = format_feature_table(ds.ids, matrix)
        ids, back = parse_feature_table(text)
        assert tuple(ids) == ds.ids
        assert back.config_hash == matrix.config_hash
        assert_allclose(back.values, matrix.values, atol=0)

    def test_infer_vocabulary(self):
        ds = _water_box_dataset(3)
        assert infer_vocabulary(ds) == ("H", "O")

    def test_cache_reuse_and_invalidation(self, tmp_path):
        cfg = MbtrConfig(elements=("H", "O"), grid_n=12)
        ds = _water_box_dataset(4)
        cache = str(tmp_path / "features.tsv")
        first = dataset_descriptors(ds, cfg, cache_path=cache)
        assert os.path.exists(cache)
        stamp = os.path.getmtime(cache)
        again = dataset_descriptors(ds, cfg, cache_path=cache)
        assert_allclose(again.values, first.values, atol=0)
        assert os.path.getmtime(cache) == stamp
        other = MbtrConfig(elements=("H", "O"), grid_n=13)
        rebuilt = dataset_descriptors(ds, other, cache_path=cache)
        assert rebuilt.config_hash == other.config_hash
        ids, reread = read_feature_table(cache)
        assert reread.config_hash == other.config_hash

    def test_dataset_features_bypass(self):
        rng = np.random.default_rng(2)
        mols = tuple(
            Molecule(
                id=f"s{k}",
                species=("H",),
                positions=np.zeros((1, 3)),
                label=0.0,
            )
            for k in range(3)
        )
        ds = Dataset(
            name="synth",
            molecules=mols,
            features=rng.normal(size=(3, 4)),
            feature_hash="synth-abc",
        )
        matrix = dataset_descriptors(ds, None)
        assert matrix.config_hash == "synth-abc"
        assert_allclose(matrix.values, ds.features, atol=0)

    def test_rows_selects_aligned_subsets(self):
        matrix = DescriptorMatrix(
            values=np.arange(12.0).reshape(4, 3), config_hash="x"
        )
        sub = matrix.rows(np.array([2, 0]))
        assert_allclose(sub, [[6, 7, 8], [0, 1, 2]], atol=0)
