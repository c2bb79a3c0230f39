"""Assemble training samples from simulation runs and label rasters.

A sample's BEV window is world-axis aligned, centered on the rover pose and
snapped to the fine label grid, so the label patch is an exact nearest-cell
lookup (integer index arithmetic, no resampling). Point clouds are moved
from the sensor frame into the window-local frame: xy relative to the window
origin, z relative to the chassis.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import quat_to_matrix
from .heightfield import generate_heightfield
from .labeling import LabelingConfig, build_labels, normalize_labels
from .simulate import generate_trajectory, render_camera, simulate_lidar, synthesize_imu
from .types import DenseCostmap, GridSpec, PointCloud, Pose, Sample


@dataclass
class BevLayout:
    """Geometry of the per-sample BEV window."""

    size: int = 32  # cells per side (square)
    resolution: float = 0.2  # meters per cell

    def __post_init__(self):
        if self.size < 4:
            raise ValueError("BEV window needs at least 4 cells per side")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")


def _cells_per_bev(layout: BevLayout, label_res: float) -> int:
    ratio = layout.resolution / label_res
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ValueError(
            f"BEV resolution {layout.resolution} must be an integer multiple of the "
            f"label resolution {label_res}"
        )
    return k


def extract_target(labels: DenseCostmap, pose_xy, layout: BevLayout):
    """Cut the rover-centered label window out of the fine label raster.

    The window origin snaps to the label lattice; each BEV cell takes the
    label cell containing its center (valid only where the label is). Cells
    falling outside the raster are invalid. Returns the window costmap (local
    origin (0, 0)) and the window's world origin.
    """
    k = _cells_per_bev(layout, labels.grid.resolution)
    res = labels.grid.resolution
    half = layout.size * layout.resolution / 2.0
    # window origin in label-cell units (integer snap keeps lookups exact)
    off_j = round((pose_xy[0] - half - labels.grid.origin[0]) / res)
    off_i = round((pose_xy[1] - half - labels.grid.origin[1]) / res)
    origin = (
        labels.grid.origin[0] + off_j * res,
        labels.grid.origin[1] + off_i * res,
    )
    grid = GridSpec((0.0, 0.0), layout.resolution, layout.size, layout.size)
    values = np.zeros((layout.size, layout.size))
    valid = np.zeros((layout.size, layout.size), dtype=bool)
    bev_idx = np.arange(layout.size)
    rows = off_i + bev_idx * k + k // 2
    cols = off_j + bev_idx * k + k // 2
    ok_r = (rows >= 0) & (rows < labels.grid.rows)
    ok_c = (cols >= 0) & (cols < labels.grid.cols)
    rr = rows[ok_r][:, None]
    cc = cols[ok_c][None, :]
    sub_valid = labels.valid[rr, cc]
    sub_values = labels.values[rr, cc]
    mesh = np.ix_(ok_r, ok_c)
    valid[mesh] = sub_valid
    values[mesh] = np.where(sub_valid, sub_values, 0.0)
    return DenseCostmap(grid, values, valid), origin


def localize_cloud(cloud: PointCloud, pose: Pose, window_origin) -> PointCloud:
    """Sensor-frame points -> window-local frame (xy offset, z above chassis)."""
    r = quat_to_matrix(pose.orientation)
    world = cloud.xyz @ r.T + pose.position
    local = world - np.array([window_origin[0], window_origin[1], pose.position[2]])
    return PointCloud(local, cloud.rgb.copy())


def build_samples(traj, labels: DenseCostmap, clouds: dict, images: dict,
                  layout: BevLayout, min_valid_cells: int = 1):
    """Pair each sensed frame with its label window; skip windows with too few labels."""
    samples = []
    for k in sorted(clouds.keys() & images.keys()):
        pose = traj[k]
        target, origin = extract_target(labels, pose.position[:2], layout)
        if int(target.valid.sum()) < min_valid_cells:
            continue
        samples.append(
            Sample(localize_cloud(clouds[k], pose, origin), images[k], target)
        )
    return samples


def split_samples(samples, holdout_fraction: float, seed: int):
    """Deterministic shuffle split into (train, heldout)."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in [0, 1)")
    samples = list(samples)
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5147])).permutation(
        len(samples)
    )
    n_hold = int(round(holdout_fraction * len(samples)))
    hold_idx = set(order[:n_hold].tolist())
    train = [samples[i] for i in range(len(samples)) if i not in hold_idx]
    hold = [samples[i] for i in range(len(samples)) if i in hold_idx]
    return train, hold


def synthesize_dataset(
    seed: int,
    n_runs: int = 4,
    terrain_size: int = 96,
    cell_size: float = 0.2,
    roughness: float = 0.6,
    speed: float = 1.0,
    dt: float = 0.1,
    imu_noise_scale: float = 3.0,
    lidar_rays: int = 700,
    camera_px: tuple = (32, 48),
    sensor_stride: int = 6,
    layout: BevLayout = BevLayout(),
    labeling: LabelingConfig = None,
):
    """End-to-end in-memory dataset: terrain -> drives -> labels -> samples.

    Drives diagonal-ish paths across one shared procedural terrain, labels
    each run, normalizes jointly, and cuts one sample per sensed frame.
    Deterministic per seed.
    """
    if labeling is None:
        labeling = LabelingConfig(fine_res=0.1)
    hf = generate_heightfield(seed, terrain_size, terrain_size, cell_size, roughness)
    x0, x1, y0, y1 = hf.extent
    margin = 2.5
    lo_x, hi_x = x0 + margin, x1 - margin
    lo_y, hi_y = y0 + margin, y1 - margin
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))

    runs = []
    for r in range(n_runs):
        corners = [
            [lo_x + 0.3 * r, lo_y + 0.2 * r],
            [hi_x - 0.3 * r, hi_y - 0.2 * r],
        ]
        if r % 2 == 1:
            corners = [[lo_x + 0.3 * r, hi_y - 0.2 * r], [hi_x - 0.3 * r, lo_y + 0.2 * r]]
        jitter = rng.uniform(-0.5, 0.5, (2, 2))
        waypoints = np.asarray(corners) + jitter
        traj = generate_trajectory(hf, waypoints, speed, dt)
        imu = synthesize_imu(hf=hf, traj=traj, noise_scale=imu_noise_scale, seed=seed + 101 * r)
        runs.append((traj, imu))

    raw_maps = []
    for traj, imu in runs:
        _, dense = build_labels(traj, imu, labeling)
        raw_maps.append(dense)
    norm = normalize_labels(raw_maps)

    samples = []
    for run_idx, (traj, imu) in enumerate(runs):
        labels = norm.maps[run_idx]
        frames = range(0, len(traj), sensor_stride)
        clouds = {}
        images = {}
        for k in frames:
            clouds[k] = simulate_lidar(
                hf, traj[k], lidar_rays, max_range=18.0, seed=seed + 7 * run_idx + k
            )
            images[k] = render_camera(hf, traj[k], camera_px[0], camera_px[1])
        samples.extend(
            build_samples(traj, labels, clouds, images, layout, min_valid_cells=8)
        )
    return samples
