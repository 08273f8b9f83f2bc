import random
from dataclasses import replace

import pytest

from elasticnas.errors import (
    InvalidSpace,
    MalformedEncoding,
    SpaceTooLarge,
    UnknownLevel,
)
from elasticnas.space import (
    ArchSpec,
    BlockConfig,
    COMPOUND,
    DimensionLevels,
    INDEPENDENT,
    SearchSpaceDef,
    cardinality,
    couple_level,
    crossover,
    decode,
    encode,
    encoding_length,
    enumerate_space,
    get_space,
    max_arch,
    min_arch,
    mutate,
    sample_uniform,
    validate,
)

LEVELS = DimensionLevels((2, 3, 4), (3, 4, 6), (3, 5, 7))


def compound_fixed(m=5, resolutions=(24, 28, 32)):
    return SearchSpaceDef(m=m, levels=LEVELS, coupling=COMPOUND,
                          fixed_kernel=5, resolutions=resolutions)


def compound_elastic(m=5):
    return SearchSpaceDef(m=m, levels=LEVELS, coupling=COMPOUND,
                          fixed_kernel=None, resolutions=(24, 28, 32))


def independent_elastic(m=5):
    return SearchSpaceDef(m=m, levels=LEVELS, coupling=INDEPENDENT,
                          fixed_kernel=None, resolutions=(24, 28, 32))


class TestLevels:
    def test_rejects_unsorted(self):
        with pytest.raises(InvalidSpace):
            DimensionLevels((3, 2), (3, 4), (3, 5))

    def test_rejects_even_kernel(self):
        with pytest.raises(InvalidSpace):
            DimensionLevels((2,), (3,), (4,))

    def test_compound_requires_pairing(self):
        with pytest.raises(InvalidSpace):
            SearchSpaceDef(m=2, levels=DimensionLevels((2, 3), (3,), (3,)),
                           coupling=COMPOUND)

    def test_fixed_kernel_must_be_level(self):
        with pytest.raises(InvalidSpace):
            SearchSpaceDef(m=2, levels=LEVELS, fixed_kernel=9)


class TestCoupleLevel:
    def test_smallest_depth_pairs_smallest_width(self):
        assert couple_level(LEVELS, 2) == 3

    def test_largest_depth_pairs_largest_width(self):
        assert couple_level(LEVELS, 4) == 6

    def test_singleton(self):
        assert couple_level(DimensionLevels((5,), (2,), (3,)), 5) == 2

    def test_unknown_level(self):
        with pytest.raises(UnknownLevel):
            couple_level(LEVELS, 7)


class TestCardinality:
    def test_compound_fixed_is_243(self):
        assert cardinality(compound_fixed()) == 243

    def test_compound_elastic_big_integer(self):
        # independent oracle: repeated big-int multiplication of 3^2+3^3+3^4
        per_block = 3**2 + 3**3 + 3**4
        expected = 1
        for _ in range(5):
            expected *= per_block
        assert expected == 21_924_480_357
        assert cardinality(compound_elastic()) == expected

    def test_independent_elastic_big_integer(self):
        per_block = sum(9**d for d in (2, 3, 4))
        assert per_block == 7371
        expected = 1
        for _ in range(5):
            expected *= per_block
        assert cardinality(independent_elastic()) == expected
        assert 2.1e19 < cardinality(independent_elastic()) < 2.2e19

    def test_singleton_space(self):
        levels = DimensionLevels((2,), (3,), (3,))
        for coupling in (COMPOUND, INDEPENDENT):
            sp = SearchSpaceDef(m=1, levels=levels, coupling=coupling,
                                fixed_kernel=3)
            assert cardinality(sp) == 1

    def test_matches_enumeration_on_random_small_spaces(self):
        rng = random.Random(7)
        for _ in range(5):
            nd = rng.randint(1, 3)
            depths = tuple(sorted(rng.sample(range(1, 5), nd)))
            widths = tuple(sorted(rng.sample((2, 3, 4, 6), nd)))
            kernels = tuple(sorted(rng.sample((1, 3, 5), rng.randint(1, 2))))
            sp = SearchSpaceDef(m=rng.randint(1, 2), levels=DimensionLevels(
                depths, widths, kernels), coupling=COMPOUND,
                fixed_kernel=rng.choice([None, kernels[0]]))
            archs = list(enumerate_space(sp, 10**5))
            assert len(archs) == cardinality(sp)
            assert len(set(archs)) == len(archs)
            if sp.fixed_kernel is not None:
                assert cardinality(sp) == len(depths) ** sp.m


class TestEnumerate:
    def test_compound_fixed_yields_243_distinct(self):
        archs = list(enumerate_space(compound_fixed(), 10**4))
        assert len(archs) == 243
        assert len(set(archs)) == 243
        assert all(validate(compound_fixed(), a) for a in archs)

    def test_canonical_resolution_is_max(self):
        archs = list(enumerate_space(compound_fixed(), 10**4))
        assert all(a.resolution == 32 for a in archs)

    def test_singleton(self):
        sp = SearchSpaceDef(m=1, levels=DimensionLevels((2,), (3,), (3,)),
                            fixed_kernel=3, coupling=COMPOUND)
        assert len(list(enumerate_space(sp, 10))) == 1

    def test_too_large(self):
        with pytest.raises(SpaceTooLarge):
            list(enumerate_space(independent_elastic(), 10**6))

    def test_deterministic_order(self):
        a = list(enumerate_space(compound_fixed(), 10**4))
        b = list(enumerate_space(compound_fixed(), 10**4))
        assert a == b
        # block 0 varies slowest: first |configs| archs share block 0
        assert a[0].blocks[0] == a[1].blocks[0]


class TestSampling:
    def test_compound_samples_satisfy_coupling(self):
        sp = compound_fixed()
        for seed in range(50):
            assert validate(sp, sample_uniform(sp, seed))

    def test_singleton_space_unique_sample(self):
        sp = SearchSpaceDef(m=1, levels=DimensionLevels((2,), (3,), (3,)),
                            fixed_kernel=3, coupling=COMPOUND,
                            resolutions=(8,))
        assert sample_uniform(sp, 0) == next(iter(enumerate_space(sp, 10)))

    def test_per_block_level_frequencies_uniform(self):
        sp = compound_fixed()
        rng = random.Random(0)
        n = 100_000
        counts = [{d: 0 for d in LEVELS.depths} for _ in range(sp.m)]
        for _ in range(n):
            arch = sample_uniform(sp, rng)
            for b, block in enumerate(arch.blocks):
                counts[b][block.depth] += 1
        for per_block in counts:
            for d in LEVELS.depths:
                assert abs(per_block[d] / n - 1 / 3) < 0.01

    def test_stratified_sampling_valid(self):
        sp = independent_elastic()
        for seed in range(30):
            assert validate(sp, sample_uniform(sp, seed, stratify_depth=True))

    def test_deterministic_given_seed(self):
        sp = compound_elastic()
        assert sample_uniform(sp, 123) == sample_uniform(sp, 123)


class TestValidate:
    def test_coupled_block_ok(self):
        sp = compound_fixed()
        arch = ArchSpec((BlockConfig(2, (3, 3), (5, 5)),) * 5, 32)
        assert validate(sp, arch)

    def test_uncoupled_block_rejected(self):
        sp = compound_fixed()
        arch = ArchSpec((BlockConfig(2, (6, 6), (5, 5)),) * 5, 32)
        assert not validate(sp, arch)

    def test_same_block_ok_under_independent(self):
        sp = replace(compound_fixed(), coupling=INDEPENDENT)
        arch = ArchSpec((BlockConfig(2, (6, 6), (5, 5)),) * 5, 32)
        assert validate(sp, arch)

    def test_compound_subset_of_independent(self):
        comp = compound_elastic(m=1)
        indep = replace(comp, coupling=INDEPENDENT)
        comp_archs = set(enumerate_space(comp, 10**5))
        indep_archs = set(enumerate_space(indep, 10**5))
        assert comp_archs < indep_archs
        assert all(validate(indep, a) for a in comp_archs)


class TestEncoding:
    def test_length_compound_fixed(self):
        sp = compound_fixed(resolutions=(16, 24, 28, 32))
        assert encoding_length(sp) == 5 * 3 + 4

    def test_max_arch_last_index_hot(self):
        sp = compound_fixed()
        bits = encode(sp, max_arch(sp))
        # per block: one-hot over 3 depth levels, last hot
        for b in range(5):
            assert bits[3 * b:3 * b + 3] == (0, 0, 1)
        assert bits[-3:] == (0, 0, 1)

    def test_roundtrip_random(self):
        for sp in (compound_fixed(), compound_elastic(), independent_elastic()):
            rng = random.Random(11)
            for _ in range(100):
                arch = sample_uniform(sp, rng)
                assert decode(sp, encode(sp, arch)) == arch

    def test_roundtrip_all_243(self):
        sp = compound_fixed()
        for arch in enumerate_space(sp, 10**4):
            assert decode(sp, encode(sp, arch)) == arch

    def test_segments_sum_to_one(self):
        sp = independent_elastic()
        bits = encode(sp, sample_uniform(sp, 3))
        # every segment one-hot implies total ones == number of segments
        per_block = 1 + 4 + 4  # depth + per-layer width + per-layer kernel
        assert sum(bits) == 5 * per_block + 1

    def test_malformed_decode(self):
        sp = compound_fixed()
        bits = list(encode(sp, max_arch(sp)))
        bits[0] = 1 - bits[0]
        with pytest.raises(MalformedEncoding):
            decode(sp, tuple(bits))
        with pytest.raises(MalformedEncoding):
            decode(sp, (0,) * 3)


class TestGeneticOps:
    def test_mutate_zero_probability_is_identity(self):
        sp = compound_elastic()
        arch = sample_uniform(sp, 5)
        assert mutate(sp, arch, 0.0, 1) == arch

    def test_crossover_self_is_identity(self):
        sp = compound_elastic()
        arch = sample_uniform(sp, 5)
        assert crossover(sp, arch, arch, 1) == arch

    def test_mutate_preserves_coupling(self):
        sp = compound_fixed()
        rng = random.Random(2)
        arch = sample_uniform(sp, rng)
        for _ in range(1000):
            arch = mutate(sp, arch, 0.3, rng)
            assert validate(sp, arch)

    def test_crossover_valid(self):
        sp = independent_elastic()
        rng = random.Random(3)
        for _ in range(200):
            a, b = sample_uniform(sp, rng), sample_uniform(sp, rng)
            assert validate(sp, crossover(sp, a, b, rng))

    def test_deterministic_given_seed(self):
        sp = compound_fixed()
        arch = sample_uniform(sp, 9)
        assert mutate(sp, arch, 0.5, 42) == mutate(sp, arch, 0.5, 42)


class TestExtremes:
    def test_ofa_max_arch(self):
        arch = max_arch(get_space("ofa"))
        for block in arch.blocks:
            assert block.depth == 4
            assert block.widths == (6, 6, 6, 6)
            assert block.kernels == (7, 7, 7, 7)

    def test_compound_fixed_min_arch(self):
        arch = min_arch(compound_fixed())
        for block in arch.blocks:
            assert block.depth == 2
            assert block.widths == (3, 3)
            assert block.kernels == (5, 5)
        assert arch.resolution == 24

    def test_singleton_max_equals_min(self):
        sp = SearchSpaceDef(m=2, levels=DimensionLevels((2,), (3,), (3,)),
                            fixed_kernel=3, coupling=COMPOUND, resolutions=(8,))
        assert max_arch(sp) == min_arch(sp)


class TestJson:
    def test_arch_roundtrip(self):
        sp = independent_elastic()
        arch = sample_uniform(sp, 17)
        assert ArchSpec.from_json(arch.to_json()) == arch

    def test_schema_fields(self):
        import json

        arch = min_arch(compound_fixed())
        obj = json.loads(arch.to_json())
        assert obj["r"] == 24
        assert obj["blocks"][0] == {"d": 2, "w": [3, 3], "k": [5, 5]}
