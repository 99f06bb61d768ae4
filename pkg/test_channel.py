"""Tests for mobility, channel generation and the binary trace container."""

import numpy as np
import pytest

from app.channel import (
    SPEED_OF_LIGHT,
    ChannelTrace,
    PathCluster,
    PathTable,
    blockage_flags,
    generate_channel,
    generate_traces,
    large_scale_gain,
)
from app.errors import ConfigurationError, DomainError, TraceFormatError
from app.mobility import ManhattanGrid, generate_trajectory
from app.schemas import ChannelSection, GridSection, MmwaveSection
from app.storage import load_trace, save_trace


def static_trace(n_slots=5, aod=0.0, aoa=0.0):
    clusters = [PathCluster(1.0 + 0j, aod, aoa, 0.0, 0.0, True)]
    return ChannelTrace("mmwave", 4, 4, 3, n_slots, 1e8, np.ones(n_slots), np.ones(n_slots, dtype=bool),
                        paths=PathTable.static(clusters, n_slots))


def test_corridor_trajectory_is_collinear():
    """A single street without intersections keeps every position on one line."""
    traj = generate_trajectory(GridSection(n_rows=1, n_cols=0), 11.11, 100, seed=3)
    assert traj.n_slots == 100
    assert np.all(traj.positions[:, 1] == 0.0)


def test_trajectory_is_deterministic():
    a = generate_trajectory(GridSection(), 11.11, 500, seed=42)
    b = generate_trajectory(GridSection(), 11.11, 500, seed=42)
    assert np.array_equal(a.positions, b.positions)
    assert a.turn_events == b.turn_events


def test_trajectory_steps_and_stays_on_streets():
    grid_cfg = GridSection(n_rows=3, n_cols=3, block_m=20.0)
    traj = generate_trajectory(grid_cfg, 10.0, 2000, seed=1, slot_duration_s=0.1)
    grid = ManhattanGrid(grid_cfg)
    assert all(grid.contains(p) for p in traj.positions)
    steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    # slots without a node crossing move exactly speed * slot_duration
    turning = {e.slot for e in traj.turn_events}
    straight = [d for m, d in enumerate(steps, start=1) if m not in turning]
    assert np.allclose(straight, 1.0, rtol=1e-9)


def test_straight_fraction_at_intersections():
    grid_cfg = GridSection(n_rows=12, n_cols=12, block_m=10.0)
    traj = generate_trajectory(grid_cfg, 10.0, 11_000, seed=7, slot_duration_s=1.0)
    drawn = [e.drawn for e in traj.turn_events]
    assert len(drawn) >= 10_000
    assert abs(drawn.count("straight") / len(drawn) - 0.5) < 0.02


def test_invalid_mobility_inputs():
    with pytest.raises(ConfigurationError):
        generate_trajectory(GridSection(), 0.0, 10, seed=0)
    with pytest.raises(ConfigurationError):
        generate_trajectory(GridSection(), 11.11, 0, seed=0)


def test_large_scale_gain_law():
    fc = 28e9
    assert large_scale_gain(1.0, True, fc) == pytest.approx((SPEED_OF_LIGHT / (4 * np.pi * fc)) ** 2, rel=1e-12)
    assert large_scale_gain(20.0, True, fc) / large_scale_gain(10.0, True, fc) == pytest.approx(2.0 ** -2.0)
    assert large_scale_gain(50.0, False, fc) < large_scale_gain(50.0, True, fc)
    with pytest.raises(DomainError):
        large_scale_gain(0.0, True, fc)


def test_static_single_path_is_time_invariant():
    trace = static_trace()
    first = trace.frame(0)
    for m in range(1, trace.n_slots):
        assert np.array_equal(trace.frame(m), first)


def test_broadside_unit_path_has_unit_entries():
    h = static_trace().frame(0)
    assert np.allclose(np.abs(h), 1.0, atol=1e-12)


def test_no_blockers_keeps_los():
    assert not blockage_flags(1000, 0.0, 0.995, seed=3).any()
    cfg = MmwaveSection()
    traj = generate_trajectory(GridSection(), 11.11, 50, seed=2)
    trace = generate_channel(traj, cfg, 0.0, seed=2, channel_cfg=ChannelSection())
    assert trace.los_flag.all()


def test_blockage_is_monotone_in_density():
    densities = [0.0, 5.0, 10.0, 40.0, 100.0]
    for seed in range(10):
        fractions = [blockage_flags(2000, d, 0.995, seed).mean() for d in densities]
        assert all(b >= a for a, b in zip(fractions, fractions[1:]))


def test_doppler_phase_advance(tiny_cfg, tiny_traces):
    trace = tiny_traces.mmwave
    p = trace.paths
    dt = tiny_cfg.channel.slot_duration_s
    ratio = p.gains[1:, 1] / p.gains[:-1, 1]
    expected = 2 * np.pi * p.doppler[:-1, 1] * dt
    assert np.max(np.abs(np.angle(ratio * np.exp(-1j * expected)))) < 1e-9


def test_channel_energy_and_finiteness(tiny_traces):
    for trace in tiny_traces:
        h = trace.h
        assert np.all(np.isfinite(h))
        assert np.all(trace.large_scale_gain > 0)
        energy = np.mean(np.linalg.norm(h, axis=(-2, -1)) ** 2) / (trace.n_tx * trace.n_rx)
        assert 0.1 < energy < 10.0


def test_traces_are_deterministic(tiny_cfg):
    a = generate_traces(tiny_cfg, seed=5)
    b = generate_traces(tiny_cfg, seed=5)
    assert np.array_equal(a.mmwave.h, b.mmwave.h)
    assert np.array_equal(a.sub6.los_flag, b.sub6.los_flag)
    assert np.array_equal(a.mmwave.los_flag, a.sub6.los_flag)


def test_trace_file_round_trip(tmp_path, tiny_traces):
    path = tmp_path / "mm.bmtr"
    save_trace(tiny_traces.mmwave, path)
    loaded = load_trace(path)
    assert loaded.band == "mmwave"
    assert np.array_equal(loaded.h, tiny_traces.mmwave.h)
    assert np.array_equal(loaded.large_scale_gain, tiny_traces.mmwave.large_scale_gain)
    assert np.array_equal(loaded.los_flag, tiny_traces.mmwave.los_flag)
    assert loaded.bandwidth_hz == tiny_traces.mmwave.bandwidth_hz


def test_trace_file_errors(tmp_path):
    path = tmp_path / "t.bmtr"
    save_trace(static_trace(), path)
    raw = path.read_bytes()

    bad = tmp_path / "bad.bmtr"
    bad.write_bytes(raw[:-5])
    with pytest.raises(TraceFormatError) as e:
        load_trace(bad)
    assert e.value.field == "payload length"

    bad.write_bytes(raw[:10])
    with pytest.raises(TraceFormatError) as e:
        load_trace(bad)
    assert e.value.field == "header"

    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TraceFormatError) as e:
        load_trace(bad)
    assert e.value.field == "magic"

    # bump n_sc so the header no longer matches the payload
    bad.write_bytes(raw[:16] + (4).to_bytes(4, "little") + raw[20:])
    with pytest.raises(TraceFormatError) as e:
        load_trace(bad)
    assert e.value.field == "payload length"
