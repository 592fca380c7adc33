import numpy as np
import pytest

from hybridviz.mesh import validate_mesh
from hybridviz.minisim import (
    ENERGY_FLOOR,
    SimConfig,
    energy,
    generate_step,
    partition_bounds,
    shock_radius,
)


def test_total_cells_n220():
    cfg = SimConfig(n=220, partitions=8)
    total = 0
    for rank in range(8):
        ch = validate_mesh(generate_step(cfg, rank, 0.5))
        total += ch.cell_count
    assert total == 220 ** 3 == 10_648_000


def test_layer_counts_n220_p8():
    cfg = SimConfig(n=220, partitions=8)
    sizes = [b - a for a, b in (partition_bounds(cfg, r) for r in range(8))]
    # 220 = 8*27 + 4: four ranks get one extra layer
    assert sorted(sizes) == [27] * 4 + [28] * 4
    assert sum(sizes) == 220


def test_one_layer_each():
    cfg = SimConfig(n=8, partitions=8)
    assert [b - a for a, b in (partition_bounds(cfg, r) for r in range(8))] == [1] * 8


def test_empty_rank_n7_p8():
    cfg = SimConfig(n=7, partitions=8)
    counts = [validate_mesh(generate_step(cfg, r, 0.3)).cell_count for r in range(8)]
    assert counts.count(0) == 1
    assert sum(counts) == 7 ** 3
    empty = validate_mesh(generate_step(cfg, counts.index(0), 0.3))
    assert set(empty.fields) == {"energy", "density", "pressure"}


def test_partitions_tile_the_cube():
    cfg = SimConfig(n=10, partitions=3)
    ranges = [partition_bounds(cfg, r) for r in range(3)]
    assert ranges[0][0] == 0 and ranges[-1][1] == 10
    assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))


def test_shock_radius():
    assert shock_radius(1.0) == 1.0
    assert shock_radius(0.5) == 0.5 ** 0.4


def test_energy_peak_on_shell():
    t = 0.3
    assert energy(np.array([shock_radius(t)]), t, 0.05)[0] == 1.0


def test_field_bounds():
    cfg = SimConfig(n=12, partitions=2)
    for rank in range(2):
        ch = validate_mesh(generate_step(cfg, rank, 0.4))
        e = ch.fields["energy"].values
        rho = ch.fields["density"].values
        p = ch.fields["pressure"].values
        assert np.all((e >= ENERGY_FLOOR) & (e <= 1.0))
        assert np.all((rho > 1.0) & (rho <= 1.5))
        assert np.all(p > 0)
        assert np.allclose(rho, 1 + 0.5 * e)


def test_ranks_agree_with_single_domain():
    one = validate_mesh(generate_step(SimConfig(n=6, partitions=1), 0, 0.5))
    parts = [validate_mesh(generate_step(SimConfig(n=6, partitions=2), r, 0.5)) for r in range(2)]
    g = one.grid("energy")
    assert np.array_equal(parts[0].grid("energy"), g[:4])
    assert np.array_equal(parts[1].grid("energy"), g[3:])
    assert np.array_equal(np.concatenate([p.grid("pressure") for p in parts]), one.grid("pressure"))


def test_explicit_topology_matches_uniform():
    u = validate_mesh(generate_step(SimConfig(n=4, topology="uniform"), 0, 0.5))
    h = validate_mesh(generate_step(SimConfig(n=4, topology="explicit-hex"), 0, 0.5))
    assert h.kind == "hex"
    assert h.cell_count == u.cell_count
    assert np.array_equal(h.points(), u.points())
    assert np.array_equal(h.fields["energy"].values, u.fields["energy"].values)


def test_deterministic():
    cfg = SimConfig(n=5)
    assert generate_step(cfg, 0, 0.2) == generate_step(cfg, 0, 0.2)


def test_time_of_step():
    cfg = SimConfig(steps=4)
    assert cfg.time_of(3) == 1.0
    assert SimConfig(steps=4, dt=0.1).time_of(0) == 0.1


def test_fields_are_external():
    node = generate_step(SimConfig(n=3), 0, 0.5)
    assert node["fields/energy/values"].external


@pytest.mark.parametrize("kw", [dict(n=1), dict(steps=0), dict(partitions=0), dict(topology="tet"), dict(width=0)])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)
