import numpy as np
import pytest

from conftest import free_tool, rest_length_update_oracle

from amorph.errors import ConfigurationError
from amorph.materials import (SpringParams, SpringSet, elastic_spring_network,
                              is_cut_by_tool, rest_length_update, update_springs)
from amorph.sim.hashgrid import SpatialHash, brute_force_pairs
from amorph.sim.types import Material, ParticleSystem, ScraperGeometry, ToolState


def plastic_system(positions, radius=0.05):
    return ParticleSystem.from_positions(positions, radius, Material.VISCO_PLASTIC)


PARAMS = SpringParams(d_m=0.11, d_b=0.15, r_c=0.85, r_s=1.15)


class TestRestLengthUpdate:
    def test_elastic_band_returns_rest(self):
        assert rest_length_update(1.0, 1.0, 0.9, 1.1) == 1.0

    def test_plastic_stretch_returns_distance(self):
        assert rest_length_update(2.0, 1.0, 0.9, 1.1) == 2.0

    def test_plastic_compression_returns_distance(self):
        assert rest_length_update(0.5, 1.0, 0.9, 1.1) == 0.5

    def test_invalid_rest_raises(self):
        with pytest.raises(ConfigurationError):
            rest_length_update(1.0, 0.0, 0.9, 1.1)
        with pytest.raises(ConfigurationError):
            rest_length_update(1.0, -2.0, 0.9, 1.1)

    def test_fuzz_against_transliteration(self, rng):
        # boundary semantics (<= and >=) must match the yield rule exactly
        for _ in range(10_000):
            d_rest = rng.uniform(0.01, 2.0)
            kind = rng.integers(0, 4)
            if kind == 0:
                d = d_rest * 0.85            # exactly r_c
            elif kind == 1:
                d = d_rest * 1.15            # exactly r_s
            else:
                d = rng.uniform(0.0, 2.5)
            assert rest_length_update(d, d_rest, 0.85, 1.15) == \
                rest_length_update_oracle(d, d_rest, 0.85, 1.15)


class TestUpdateSprings:
    def test_overstretched_spring_deleted(self):
        ps = plastic_system([[0, 1, 0], [0.2, 1, 0]])
        springs = SpringSet(PARAMS)
        springs.add(0, 1, 0.1)
        out = update_springs(ps, springs, free_tool())
        assert not out.has(0, 1)

    def test_close_pair_gains_spring_at_current_distance(self):
        ps = plastic_system([[0, 1, 0], [0.1, 1, 0]])
        out = update_springs(ps, SpringSet(PARAMS), free_tool())
        assert out.has(0, 1)
        assert out.rest[(0, 1)] == pytest.approx(0.1, abs=1e-15)

    def test_empty_system(self):
        ps = plastic_system(np.zeros((0, 3)))
        out = update_springs(ps, SpringSet(PARAMS), free_tool())
        assert len(out) == 0

    def test_cut_pair_not_merged_and_existing_deleted(self):
        tool = ToolState.at_rest(ScraperGeometry(), q=np.zeros(6))
        # pair straddles the blade mid-plane, within the blade extent
        ps = plastic_system([[0.0, 0.2, -0.05], [0.0, 0.2, 0.05]])
        springs = SpringSet(PARAMS)
        springs.add(0, 1, 0.1)
        out = update_springs(ps, springs, tool)
        assert len(out) == 0

    def test_idempotent_on_static_particles(self, rng):
        pos = rng.uniform(-0.2, 0.2, (12, 3)) + [0, 1, 0]
        ps = plastic_system(pos)
        once = update_springs(ps, SpringSet(PARAMS), free_tool())
        twice = update_springs(ps, once, free_tool())
        assert once.rest == twice.rest

    def test_only_visco_plastic_pairs_merge(self):
        ps = ParticleSystem.from_positions([[0, 1, 0], [0.1, 1, 0]], 0.05,
                                           Material.GRANULAR)
        out = update_springs(ps, SpringSet(PARAMS), free_tool())
        assert len(out) == 0

    def test_invariants_under_fuzz(self, rng):
        # 500 random perturbation steps: the four structural invariants hold
        pos = rng.uniform(-0.25, 0.25, (16, 3)) + [0, 1, 0]
        ps = plastic_system(pos)
        springs = SpringSet(PARAMS)
        tool = free_tool()
        for step in range(500):
            ps.positions += rng.normal(0, 0.01, ps.positions.shape)
            before = {k: v for k, v in springs.rest.items()}
            springs = update_springs(ps, springs, tool)
            dist = {k: float(np.linalg.norm(ps.positions[k[0]] - ps.positions[k[1]]))
                    for k in springs.rest}
            for (i, j), rest in springs.rest.items():
                d = dist[(i, j)]
                if (i, j) in before:
                    assert d < PARAMS.d_b
                    # rest length changed only on plastic yield
                    ratio = d / before[(i, j)]
                    if PARAMS.r_c < ratio < PARAMS.r_s:
                        assert rest == before[(i, j)]
                    else:
                        assert rest == d
                else:
                    assert d < PARAMS.d_m
                    assert rest == d
            # every uncut close pair is connected
            pairs = brute_force_pairs(ps.positions, PARAMS.d_m)
            for i, j in pairs:
                if not is_cut_by_tool(ps.positions[i], ps.positions[j], tool):
                    assert springs.has(int(i), int(j))


class TestElasticNetwork:
    def test_single_particle_empty(self):
        ps = plastic_system([[0, 1, 0]])
        assert len(elastic_spring_network(ps, 0.5)) == 0

    def test_pair_within_radius(self):
        ps = plastic_system([[0, 1, 0], [0.5, 1, 0]])
        net = elastic_spring_network(ps, 0.6)
        assert net.rest[(0, 1)] == pytest.approx(0.5, abs=1e-15)

    def test_triangle_all_pairs(self):
        s = 0.3
        pts = [[0, 1, 0], [s, 1, 0], [s / 2, 1, s * np.sqrt(3) / 2]]
        net = elastic_spring_network(plastic_system(pts), 0.35)
        assert len(net) == 3
        for rest in net.rest.values():
            assert rest == pytest.approx(s, abs=1e-12)

    def test_limiting_params_left_untouched_by_updates(self, rng):
        pos = rng.uniform(-0.3, 0.3, (10, 3)) + [0, 1, 0]
        ps = plastic_system(pos)
        net = elastic_spring_network(ps, 0.25)
        rest0 = dict(net.rest)
        springs = net
        for _ in range(1000):
            ps.positions += rng.normal(0, 0.02, ps.positions.shape)
            springs = update_springs(ps, springs, free_tool())
            for key, rest in rest0.items():
                assert springs.rest[key] == rest


class TestMergeSearchEquivalence:
    def test_hash_equals_brute_force_merge(self, rng):
        # the accelerated pair search feeding the merge loop is exact
        for _ in range(10):
            n = int(rng.integers(200, 400))
            pos = rng.uniform(-1, 1, (n, 3))
            grid = SpatialHash(cell_size=0.1)
            grid.build(pos)
            assert np.array_equal(grid.query_pairs(pos, 0.11),
                                  brute_force_pairs(pos, 0.11))


class TestSpringSetValidation:
    def test_no_self_edges(self):
        s = SpringSet(PARAMS)
        with pytest.raises(ConfigurationError):
            s.add(3, 3, 0.1)

    def test_param_validation(self):
        with pytest.raises(ConfigurationError):
            SpringParams(d_m=0.2, d_b=0.1, r_c=0.85, r_s=1.15).validate()
        with pytest.raises(ConfigurationError):
            SpringParams(d_m=0.1, d_b=0.2, r_c=1.2, r_s=1.3).validate()
        SpringParams(d_m=0.1, d_b=0.2, r_c=0.0, r_s=np.inf).validate()  # elastic limit
