"""Unsupervised 3D lane extraction from intensity point clouds.

Stages: region-growing ground segmentation, intensity thresholding,
density clustering on the ground plane, lane-instance merging (laterally
close, longitudinally separated clusters belong to one dashed line),
robust quadratic fitting, and projection to image-plane pseudo labels.

Ground-plane coordinates throughout: along = sensor x (forward),
across = sensor y (left).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud, EmptyProjection, InsufficientPoints
from .geometry import CameraModel
from .labels import Lane2D
from .rng import RANSAC_BASE, substream


@dataclass(frozen=True)
class PointCloud:
    xyz: np.ndarray  # (N, 3) float, sensor frame
    intensity: np.ndarray  # (N,) float in [0, 1]

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=float).reshape(-1)
        if xyz.shape[0] != inten.shape[0]:
            raise ValueError("xyz and intensity lengths differ")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("coordinates must be finite")
        if inten.size and (inten.min() < 0.0 or inten.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return self.xyz.shape[0]

    @property
    def along(self):
        return self.xyz[:, 0]

    @property
    def across(self):
        return self.xyz[:, 1]

    def select(self, mask_or_indices):
        return PointCloud(self.xyz[mask_or_indices], self.intensity[mask_or_indices])


@dataclass(frozen=True)
class GroundSegConfig:
    cell_size: float = 1.0
    plane_inlier_dist: float = 0.1
    normal_max_tilt: float = 10.0  # degrees
    tau: float = 0.45
    tau_percentile: float = -1.0  # >= 0 switches tau to a percentile of ground intensities

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")


@dataclass(frozen=True)
class ClusterConfig:
    eps1: float = 0.6
    min_pts: int = 4
    eps2: float = 0.5
    eps3: float = 3.0
    min_cluster_size: int = 20

    def __post_init__(self):
        if min(self.eps1, self.eps2, self.eps3) <= 0:
            raise ValueError("eps values must be positive")
        if self.min_pts < 1 or self.min_cluster_size < 1:
            raise ValueError("counts must be positive")


@dataclass(frozen=True)
class RansacConfig:
    iters: int = 200
    inlier_dist: float = 0.15
    sample_step: float = 0.5


@dataclass(frozen=True)
class ExtractConfig:
    ground: GroundSegConfig = field(default_factory=GroundSegConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)


@dataclass
class Cluster:
    member_indices: np.ndarray  # indices into the candidate cloud
    center: tuple  # (across, along), mean of member ground coordinates

    def __len__(self):
        return len(self.member_indices)


@dataclass(frozen=True)
class LaneInstance3D:
    """Quadratic across(along) curve on a horizontal plane."""

    coeffs: np.ndarray  # (c0, c1, c2)
    along_range: tuple  # (along_min, along_max)
    plane_z: float
    sample_step: float = 0.5

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(3)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        if not self.along_range[0] < self.along_range[1]:
            raise ValueError("along range must be increasing")
        object.__setattr__(self, "coeffs", coeffs)

    def across_at(self, along):
        c = self.coeffs
        return c[0] + c[1] * along + c[2] * along * along


def _fit_cell_plane(pts):
    """Least-squares z = a*x + b*y + c; returns (a, b, c) or None."""
    if pts.shape[0] < 3:
        return None
    a = np.column_stack([pts[:, 0], pts[:, 1], np.ones(pts.shape[0])])
    sol, _, rank, _ = np.linalg.lstsq(a, pts[:, 2], rcond=None)
    if rank < 3:
        return None
    return sol


def segment_ground(cloud, cfg):
    """Ground subset via region growing over grid cells.

    Seeds at the lowest cell; neighbours join while their floor height is
    continuous and the local surface stays near-horizontal. A point is
    ground when it lies within plane_inlier_dist of its cell's local plane.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot segment an empty cloud")
    cell = cfg.cell_size
    ci = np.floor(cloud.xyz[:, 0] / cell).astype(np.int64)
    cj = np.floor(cloud.xyz[:, 1] / cell).astype(np.int64)
    cells = {}
    for idx, key in enumerate(zip(ci.tolist(), cj.tolist())):
        cells.setdefault(key, []).append(idx)
    floors = {k: float(cloud.xyz[v, 2].min()) for k, v in cells.items()}
    floor_xyz = {
        k: cloud.xyz[v[int(np.argmin(cloud.xyz[v, 2]))]] for k, v in cells.items()
    }

    max_tilt_rad = math.radians(cfg.normal_max_tilt)
    cos_max_tilt = math.cos(max_tilt_rad)
    height_step = cell * math.tan(max_tilt_rad) + cfg.plane_inlier_dist

    def local_plane(key):
        window = [
            floor_xyz[(key[0] + di, key[1] + dj)]
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
            if (key[0] + di, key[1] + dj) in floor_xyz
        ]
        if len(window) < 3:
            return None
        return _fit_cell_plane(np.asarray(window))

    def tilt_ok(key):
        plane = local_plane(key)
        if plane is None:
            return True  # too little context to reject
        a, b, _ = plane
        cos_tilt = 1.0 / math.sqrt(a * a + b * b + 1.0)
        return cos_tilt >= cos_max_tilt

    seed = min(floors, key=lambda k: (floors[k], k))
    region = {seed}
    queue = [seed]
    while queue:
        cur = queue.pop()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                nb = (cur[0] + di, cur[1] + dj)
                if nb in region or nb not in cells:
                    continue
                if abs(floors[nb] - floors[cur]) > height_step:
                    continue
                if not tilt_ok(nb):
                    continue
                region.add(nb)
                queue.append(nb)

    keep = np.zeros(len(cloud), dtype=bool)
    for key in region:
        idx = np.asarray(cells[key])
        plane = local_plane(key)
        if plane is None:
            dist = np.abs(cloud.xyz[idx, 2] - floors[key])
        else:
            a, b, c = plane
            pred = a * cloud.xyz[idx, 0] + b * cloud.xyz[idx, 1] + c
            dist = np.abs(cloud.xyz[idx, 2] - pred)
        keep[idx[dist <= cfg.plane_inlier_dist]] = True
    return cloud.select(keep)


def filter_by_intensity(ground, tau):
    """Keep points with intensity >= tau."""
    return ground.select(ground.intensity >= tau)


def _grid_neighbors(xy, eps):
    """Neighbor index lists (dist <= eps, self included) via grid buckets."""
    n = xy.shape[0]
    cell = np.floor(xy / eps).astype(np.int64)
    buckets = {}
    for i, key in enumerate(map(tuple, cell)):
        buckets.setdefault(key, []).append(i)
    eps2 = eps * eps
    neighbors = []
    for i in range(n):
        key = (cell[i, 0], cell[i, 1])
        cand = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                cand.extend(buckets.get((key[0] + di, key[1] + dj), ()))
        cand = np.asarray(cand)
        d2 = ((xy[cand] - xy[i]) ** 2).sum(axis=1)
        neighbors.append(cand[d2 <= eps2])
    return neighbors


def _cluster_from_indices(candidates, indices):
    idx = np.asarray(sorted(indices), dtype=np.int64)
    center = (
        float(candidates.across[idx].mean()),
        float(candidates.along[idx].mean()),
    )
    return Cluster(idx, center)


def dbscan(candidates, eps1, min_pts):
    """Density clustering on (across, along) ground coordinates.

    A core point has >= min_pts neighbors within eps1, itself included.
    Border points join the earliest-created cluster that reaches them;
    noise points belong to no cluster. Output is sorted by the along
    coordinate of the cluster center.
    """
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(candidates)
    if n == 0:
        return []
    xy = np.stack([candidates.across, candidates.along], axis=1)
    neighbors = _grid_neighbors(xy, float(eps1))
    is_core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    clusters = []
    for i in range(n):
        if labels[i] != -1 or not is_core[i]:
            continue
        cid = len(clusters)
        labels[i] = cid
        members = [i]
        queue = [i]
        while queue:
            p = queue.pop()
            if not is_core[p]:
                continue
            for q in neighbors[p]:
                if labels[q] == -1:
                    labels[q] = cid
                    members.append(int(q))
                    if is_core[q]:
                        queue.append(int(q))
        clusters.append(_cluster_from_indices(candidates, members))
    clusters.sort(key=lambda c: (c.center[1], c.center[0], int(c.member_indices[0])))
    return clusters


def merge_lane_clusters(initial, cfg):
    """Merge clusters of one dashed line; drop undersized survivors.

    A cluster joins an existing output cluster when the lateral gap is
    below eps2 while the longitudinal gap exceeds eps3 (first match wins);
    merged centers are recomputed as exact means via member counts.
    """
    out = []
    for c in initial:
        merged = False
        for j, o in enumerate(out):
            if (
                abs(c.center[0] - o.center[0]) < cfg.eps2
                and abs(c.center[1] - o.center[1]) > cfg.eps3
            ):
                n_o, n_c = len(o), len(c)
                total = n_o + n_c
                center = (
                    (o.center[0] * n_o + c.center[0] * n_c) / total,
                    (o.center[1] * n_o + c.center[1] * n_c) / total,
                )
                idx = np.asarray(
                    sorted(np.concatenate([o.member_indices, c.member_indices])),
                    dtype=np.int64,
                )
                out[j] = Cluster(idx, center)
                merged = True
                break
        if not merged:
            out.append(Cluster(c.member_indices.copy(), c.center))
    return [o for o in out if len(o) >= cfg.min_cluster_size]


def fit_lane_ransac(cluster, cloud, iters, inlier_dist, seed, sample_step=0.5):
    """RANSAC quadratic across(along) fit with a least-squares refit.

    The final inlier set is recomputed against the refit curve, so every
    reported inlier lies within inlier_dist of the returned instance.
    """
    idx = cluster.member_indices
    if len(idx) < 3:
        raise InsufficientPoints(f"cluster has {len(idx)} points, need >= 3")
    s = cloud.along[idx]
    c = cloud.across[idx]
    z = cloud.xyz[idx, 2]
    rng = substream(seed, RANSAC_BASE, 0)
    m = len(idx)
    best_count = -1
    best_inliers = None
    for _ in range(iters):
        tri = rng.choice(m, size=3, replace=False)
        s3 = s[tri]
        if (
            abs(s3[0] - s3[1]) < 1e-9
            or abs(s3[0] - s3[2]) < 1e-9
            or abs(s3[1] - s3[2]) < 1e-9
        ):
            continue
        design = np.vander(s3, 3, increasing=True)
        try:
            coeffs = np.linalg.solve(design, c[tri])
        except np.linalg.LinAlgError:
            continue
        resid = np.abs(c - (coeffs[0] + coeffs[1] * s + coeffs[2] * s * s))
        inliers = resid <= inlier_dist
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 3:
        raise InsufficientPoints("no non-degenerate consensus sample found")
    design = np.vander(s[best_inliers], 3, increasing=True)
    coeffs, _, _, _ = np.linalg.lstsq(design, c[best_inliers], rcond=None)
    resid = np.abs(c - (coeffs[0] + coeffs[1] * s + coeffs[2] * s * s))
    final = resid <= inlier_dist
    if final.sum() < 3:
        final = best_inliers
        design = np.vander(s[final], 3, increasing=True)
        coeffs, _, _, _ = np.linalg.lstsq(design, c[final], rcond=None)
    lo, hi = float(s[final].min()), float(s[final].max())
    if not lo < hi:
        raise InsufficientPoints("inliers span a single along position")
    return LaneInstance3D(
        coeffs=coeffs,
        along_range=(lo, hi),
        plane_z=float(z[final].mean()),
        sample_step=sample_step,
    )


def project_lane(lane, cam):
    """Sample the 3D curve and project it to an image polyline."""
    lo, hi = lane.along_range
    s = np.arange(lo, hi + lane.sample_step * 0.5, lane.sample_step)
    pts = np.stack([s, lane.across_at(s), np.full_like(s, lane.plane_z)], axis=1)
    uv, valid = cam.project_many(pts)
    if valid.sum() < 2:
        raise EmptyProjection("no visible sample on this lane")
    out = Lane2D.from_points(uv[valid])
    if out is None:
        raise EmptyProjection("visible samples collapse to a single row")
    return out


def extract_lanes(cloud, cam, cfg, seed=0):
    """Full pipeline: cloud -> 2D pseudo labels.

    Lanes whose fit or projection fails are skipped silently; an empty
    input cloud raises EmptyCloud.
    """
    ground = segment_ground(cloud, cfg.ground)
    tau = cfg.ground.tau
    if cfg.ground.tau_percentile >= 0 and len(ground) > 0:
        tau = float(np.percentile(ground.intensity, cfg.ground.tau_percentile))
    candidates = filter_by_intensity(ground, tau)
    if len(candidates) == 0:
        return []
    clusters = dbscan(candidates, cfg.cluster.eps1, cfg.cluster.min_pts)
    merged = merge_lane_clusters(clusters, cfg.cluster)
    lanes = []
    for k, cl in enumerate(merged):
        try:
            inst = fit_lane_ransac(
                cl,
                candidates,
                cfg.ransac.iters,
                cfg.ransac.inlier_dist,
                seed=seed * 1024 + k,
                sample_step=cfg.ransac.sample_step,
            )
            lanes.append(project_lane(inst, cam))
        except (InsufficientPoints, EmptyProjection):
            continue
    return lanes


def extract_pipeline(frame, cfg, seed=0):
    """Pipeline entry taking a synthesized frame (cloud + camera)."""
    return extract_lanes(frame.cloud, frame.cam, cfg, seed=seed)
