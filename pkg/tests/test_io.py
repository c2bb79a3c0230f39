import numpy as np
import pytest

from marscost import io as mio
from marscost.types import DenseCostmap, FormatError, GridSpec, Image


def test_pgm_ascii_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 65536, (9, 13))
    p = tmp_path / "a.pgm"
    mio.write_pgm(p, px, 65535)
    back, maxval = mio.read_pgm(p)
    assert maxval == 65535
    assert np.array_equal(back, px)


def test_pgm_binary_8_and_16_bit(tmp_path):
    # 8-bit P5
    p8 = tmp_path / "b8.pgm"
    data = np.arange(12, dtype=np.uint8).reshape(3, 4)
    p8.write_bytes(b"P5\n4 3\n255\n" + data.tobytes())
    back, maxval = mio.read_pgm(p8)
    assert maxval == 255 and np.array_equal(back, data)
    # 16-bit P5 is big-endian
    p16 = tmp_path / "b16.pgm"
    data16 = np.array([[0, 1], [256, 65535]], dtype=np.uint16)
    p16.write_bytes(b"P5\n2 2\n65535\n" + data16.astype(">u2").tobytes())
    back16, maxval16 = mio.read_pgm(p16)
    assert maxval16 == 65535 and np.array_equal(back16, data16)


def test_pgm_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_text("P2\n# a comment\n2 2\n9\n1 2\n3 4\n")
    back, maxval = mio.read_pgm(p)
    assert np.array_equal(back, [[1, 2], [3, 4]])
    bad = tmp_path / "bad.pgm"
    bad.write_text("P3\n2 2\n9\n")
    with pytest.raises(FormatError):
        mio.read_pgm(bad)
    trunc = tmp_path / "trunc.pgm"
    trunc.write_text("P2\n2 2\n9\n1 2 3\n")
    with pytest.raises(FormatError):
        mio.read_pgm(trunc)


def test_ppm_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(1)
    img = Image(rng.uniform(0, 1, (7, 5, 3)))
    p = tmp_path / "img.ppm"
    mio.write_ppm(p, img)
    back = mio.read_ppm(p)
    assert np.max(np.abs(back.pixels - img.pixels)) <= 0.5 / 255 + 1e-12
    # a second write of the decoded image is byte identical
    p2 = tmp_path / "img2.ppm"
    mio.write_ppm(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_pbm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    bits = rng.uniform(0, 1, (11, 17)) > 0.5
    p = tmp_path / "m.pbm"
    mio.write_pbm(p, bits)
    assert np.array_equal(mio.read_pbm(p), bits)


def _random_costmap(seed, rows=9, cols=7, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    grid = GridSpec((rng.uniform(-3, 3), rng.uniform(-3, 3)), 0.25, rows, cols)
    values = rng.uniform(lo, hi, (rows, cols))
    valid = rng.uniform(0, 1, (rows, cols)) > 0.3
    values[~valid] = 0.0
    return DenseCostmap(grid, values, valid)


def test_costmap_pgm_round_trip_quantization(tmp_path):
    cmap = _random_costmap(3)
    mio.write_costmap_pgm(cmap, tmp_path / "c.pgm")
    back = mio.read_costmap_pgm(tmp_path / "c.pgm")
    assert back.grid == cmap.grid
    assert np.array_equal(back.valid, cmap.valid)
    span = cmap.values[cmap.valid].max() - cmap.values[cmap.valid].min()
    bound = span / 65535 / 2 + 1e-12
    assert np.max(np.abs(back.values[back.valid] - cmap.values[cmap.valid])) <= bound


def test_costmap_csv_round_trip_exact(tmp_path):
    cmap = _random_costmap(4)
    mio.write_costmap_csv(cmap, tmp_path / "c.csv")
    back = mio.read_costmap_csv(tmp_path / "c.csv")
    assert back.grid == cmap.grid
    assert np.array_equal(back.values, cmap.values)
    assert np.array_equal(back.valid, cmap.valid)


def test_costmap_all_invalid_export(tmp_path):
    grid = GridSpec((0.0, 0.0), 0.5, 4, 4)
    cmap = DenseCostmap(grid, np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))
    mio.write_costmap_pgm(cmap, tmp_path / "e.pgm")
    back = mio.read_costmap_pgm(tmp_path / "e.pgm")
    assert not back.valid.any()
    assert np.all(back.values == 0.0)


def test_sparse_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    xy = rng.uniform(-5, 5, (12, 2))
    tc = rng.uniform(0, 30, 12)
    mio.write_sparse_csv(xy, tc, tmp_path / "s.csv")
    bxy, btc = mio.read_sparse_csv(tmp_path / "s.csv")
    assert np.array_equal(bxy, xy)
    assert np.array_equal(btc, tc)


def test_run_dir_round_trip(tmp_path, flat_field):
    from marscost.simulate import generate_trajectory, render_camera, simulate_lidar, synthesize_imu

    traj = generate_trajectory(flat_field, [(1.0, 1.0), (4.0, 4.0)], speed=1.0, dt=0.25)
    imu = synthesize_imu(traj, flat_field, seed=1)
    clouds = {0: simulate_lidar(flat_field, traj[0], 100, 8.0, seed=1)}
    images = {0: render_camera(flat_field, traj[0], 8, 12)}
    mio.write_run_dir(tmp_path / "run", traj, imu, clouds, images)
    t2, imu2, c2, i2 = mio.read_run_dir(tmp_path / "run")
    assert np.array_equal(t2.positions, traj.positions)
    assert np.array_equal(t2.quaternions, traj.quaternions)
    assert np.array_equal(t2.times, traj.times)
    assert len(imu2) == len(imu)
    assert all(np.array_equal(a.accel, b.accel) for a, b in zip(imu, imu2))
    assert np.array_equal(c2[0].xyz, clouds[0].xyz)
    assert i2[0].pixels.shape == images[0].pixels.shape


def test_no_temp_files_left(tmp_path):
    cmap = _random_costmap(6)
    mio.write_costmap_pgm(cmap, tmp_path / "x.pgm")
    mio.write_costmap_csv(cmap, tmp_path / "x.csv")
    assert not list(tmp_path.glob("*.tmp"))
