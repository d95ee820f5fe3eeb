"""Two-body many-body tensor descriptors over inverse pair distances.

For every unordered element pair (A, B) in a fixed vocabulary, each A-B atom
pair in a molecule contributes a Gaussian of width `sigma` centered at the
inverse distance 1/d, weighted by exp(-weight_scale * d). The Gaussian is
accumulated onto a uniform grid over [grid_min, grid_max] as exact per-bin
mass, i.e. the difference of the Gaussian CDF at consecutive bin edges. The
per-pair blocks are concatenated in vocabulary order to give one fixed-length
vector per molecule, so geometrically similar molecules land close in
Euclidean distance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .moldata import ELEMENT_SYMBOLS, Dataset, Molecule


class VocabularyError(ValueError):
    """Raised when a molecule contains an element outside the vocabulary."""


class ConfigMismatchError(ValueError):
    """Raised when vectors produced under different configurations meet."""


class GeometryError(ValueError):
    """Raised for degenerate geometry (coincident atoms)."""


@dataclass(frozen=True)
class MbtrConfig:
    """Grid and weighting parameters plus the element vocabulary.

    The vocabulary fixes the block layout: unordered pairs (A, B) with
    A <= B in the given element order, each owning `grid_n` bins.
    """

    elements: tuple[str, ...]
    grid_min: float = 0.0
    grid_max: float = 1.2
    grid_n: int = 100
    sigma: float = 0.02
    weight_scale: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))
        if len(self.elements) == 0:
            raise ValueError("element vocabulary is empty")
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("duplicate element in vocabulary")
        for sym in self.elements:
            if sym not in ELEMENT_SYMBOLS:
                raise ValueError(f"unknown element {sym!r} in vocabulary")
        if not self.grid_min < self.grid_max:
            raise ValueError("grid_min must be below grid_max")
        if self.grid_n < 2:
            raise ValueError("grid_n must be at least 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.weight_scale < 0:
            raise ValueError("weight_scale must be non-negative")

    @cached_property
    def pair_blocks(self) -> tuple[tuple[str, str], ...]:
        pairs = []
        for i, a in enumerate(self.elements):
            for b in self.elements[i:]:
                pairs.append((a, b))
        return tuple(pairs)

    @cached_property
    def _block_index(self) -> dict[tuple[str, str], int]:
        return {pair: k for k, pair in enumerate(self.pair_blocks)}

    def block_of(self, a: str, b: str) -> int:
        """Block index of the unordered element pair {a, b}."""
        for sym in (a, b):
            if sym not in set(self.elements):
                raise VocabularyError(
                    f"element {sym!r} not in vocabulary {list(self.elements)}"
                )
        ia, ib = self.elements.index(a), self.elements.index(b)
        if ia > ib:
            a, b = b, a
        return self._block_index[(a, b)]

    @property
    def vector_length(self) -> int:
        return self.grid_n * len(self.pair_blocks)

    @cached_property
    def bin_edges(self) -> np.ndarray:
        edges = np.linspace(self.grid_min, self.grid_max, self.grid_n + 1)
        edges.setflags(write=False)
        return edges

    @cached_property
    def config_hash(self) -> str:
        payload = (
            "mbtr2|" + ",".join(self.elements)
            + f"|{self.grid_min:.17g}|{self.grid_max:.17g}|{self.grid_n}"
            + f"|{self.sigma:.17g}|{self.weight_scale:.17g}"
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class DescriptorVector:
    """One molecule's descriptor, tagged with its configuration hash."""

    values: np.ndarray
    config_hash: str

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError(f"descriptor vector must be 1-d, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DescriptorMatrix:
    """Stacked descriptor vectors sharing one configuration hash."""

    values: np.ndarray
    config_hash: str

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError(f"descriptor matrix must be 2-d, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    def rows(self, indices: Sequence[int]) -> np.ndarray:
        return self.values[np.asarray(indices, dtype=int)]


def check_same_config(a: str, b: str) -> None:
    if a != b:
        raise ConfigMismatchError(
            f"descriptor configurations differ: {a} vs {b}"
        )


def mbtr_k2(mol: Molecule, config: MbtrConfig) -> DescriptorVector:
    """Descriptor of one molecule; single-atom molecules map to zeros."""
    values = np.zeros(config.vector_length)
    edges = config.bin_edges
    n = mol.n_atoms
    if n > 1:
        deltas = mol.positions[:, None, :] - mol.positions[None, :, :]
        dists = np.sqrt(np.sum(deltas * deltas, axis=-1))
        iu, ju = np.triu_indices(n, k=1)
        for i, j in zip(iu, ju):
            d = float(dists[i, j])
            if d < 1e-6:
                raise GeometryError(
                    f"atoms {int(i)} and {int(j)} of {mol.id!r} are coincident "
                    f"(distance {d:.3g} A)"
                )
            block = config.block_of(mol.species[i], mol.species[j])
            weight = np.exp(-config.weight_scale * d)
            # Exact mass per bin: CDF difference across consecutive edges.
            cdf = ndtr((edges - 1.0 / d) / config.sigma)
            start = block * config.grid_n
            values[start:start + config.grid_n] += weight * np.diff(cdf)
    return DescriptorVector(values=values, config_hash=config.config_hash)


def mbtr_matrix(
    molecules: Sequence[Molecule], config: MbtrConfig
) -> DescriptorMatrix:
    rows = np.zeros((len(molecules), config.vector_length))
    for k, mol in enumerate(molecules):
        rows[k] = mbtr_k2(mol, config).values
    return DescriptorMatrix(values=rows, config_hash=config.config_hash)


def descriptor_distance(a: DescriptorVector, b: DescriptorVector) -> float:
    """Euclidean distance between two same-configuration descriptors."""
    check_same_config(a.config_hash, b.config_hash)
    if a.values.shape != b.values.shape:
        raise ValueError(
            f"descriptor lengths differ: {a.values.shape} vs {b.values.shape}"
        )
    return float(np.linalg.norm(a.values - b.values))


def infer_vocabulary(dataset: Dataset) -> tuple[str, ...]:
    """Alphabetical union of element symbols present in a dataset."""
    seen: set[str] = set()
    for mol in dataset.molecules:
        seen.update(mol.species)
    return tuple(sorted(seen))


def format_feature_table(
    ids: Sequence[str], matrix: DescriptorMatrix
) -> str:
    """Serialize descriptors as a tab-separated table with a hash header."""
    if len(ids) != len(matrix):
        raise ValueError("ids and matrix differ in length")
    rows = [f"# config_hash={matrix.config_hash}", "# id\tfeatures..."]
    for mol_id, vec in zip(ids, matrix.values):
        rows.append(mol_id + "\t" + "\t".join(f"{v:.17g}" for v in vec))
    return "\n".join(rows) + "\n"


def parse_feature_table(text: str) -> tuple[tuple[str, ...], DescriptorMatrix]:
    config_hash: Optional[str] = None
    ids: list[str] = []
    rows: list[list[float]] = []
    width: Optional[int] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if body.startswith("config_hash="):
                config_hash = body[len("config_hash="):]
            continue
        parts = stripped.split("\t")
        if len(parts) < 2:
            raise ValueError(
                f"expected 'id<TAB>values...', got {line!r}, line {lineno}"
            )
        try:
            vec = [float(v) for v in parts[1:]]
        except ValueError:
            raise ValueError(f"non-numeric feature value, line {lineno}") from None
        if width is None:
            width = len(vec)
        elif len(vec) != width:
            raise ValueError(
                f"inconsistent feature width ({len(vec)} vs {width}), "
                f"line {lineno}"
            )
        ids.append(parts[0])
        rows.append(vec)
    if config_hash is None:
        raise ValueError("feature table is missing its config_hash header")
    if not rows:
        raise ValueError("feature table has no rows")
    return tuple(ids), DescriptorMatrix(
        values=np.array(rows, dtype=float), config_hash=config_hash
    )


def read_feature_table(path: str) -> tuple[tuple[str, ...], DescriptorMatrix]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_feature_table(fh.read())


def dataset_descriptors(
    dataset: Dataset,
    config: Optional[MbtrConfig],
    cache_path: Optional[str] = None,
) -> DescriptorMatrix:
    """Descriptors for a whole dataset, honoring precomputed features.

    Datasets carrying a feature matrix (synthetic pools, feature tables)
    bypass geometry descriptors. Otherwise descriptors are computed from
    geometry, optionally through a cache file keyed by the configuration
    hash: a matching cache is reused, a stale one is recomputed.
    """
    if dataset.features is not None:
        assert dataset.feature_hash is not None
        return DescriptorMatrix(
            values=dataset.features, config_hash=dataset.feature_hash
        )
    if config is None:
        raise ValueError("geometry datasets need a descriptor configuration")
    if cache_path is not None:
        try:
            cached_ids, cached = read_feature_table(cache_path)
        except (OSError, ValueError):
            cached_ids, cached = None, None
        if (
            cached is not None
            and cached.config_hash == config.config_hash
            and cached_ids == dataset.ids
        ):
            return cached
    matrix = mbtr_matrix(dataset.molecules, config)
    if cache_path is not None:
        from .report import atomic_write_text

        atomic_write_text(cache_path, format_feature_table(dataset.ids, matrix))
    return matrix
