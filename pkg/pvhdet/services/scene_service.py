# pvhdet/services/scene_service.py
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pvhdet.exceptions import InvalidCamera, InvalidFactor, PlacementFailure
from pvhdet.services.camera_service import CameraModel, adjust_intrinsics, camera_center, project_points
from pvhdet.services.grid_service import GridSpec

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 10000
WORLD_UP = (0.0, 0.0, 1.0)


class Pedestrian(BaseModel):
    """胶囊体行人：竖直轴线段 [foot+(0,0,r), foot+(0,0,h−r)]，半径 r"""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    radius: float = Field(0.25, gt=0)
    height: float = Field(1.7, gt=0)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.height <= self.radius:
            raise ValueError(f"行人高度 {self.height} 必须大于半径 {self.radius}")
        return self

    @property
    def foot(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def axis_segment(self) -> Tuple[np.ndarray, np.ndarray]:
        bottom = self.radius
        top = max(self.height - self.radius, bottom)
        return np.array([self.x, self.y, bottom]), np.array([self.x, self.y, top])


class RingConfig(BaseModel):
    n: int = Field(6, ge=1, description="相机数量")
    ring_radius: float = Field(12.0, gt=0, description="环半径（米）")
    cam_height: float = Field(4.0, description="相机高度（米）")
    center: Optional[Tuple[float, float]] = Field(None, description="环中心，默认为网格中心")
    look_height: float = Field(1.0, description="注视点高度（米）")
    fx: float = Field(200.0, gt=0)
    fy: float = Field(200.0, gt=0)
    width: int = Field(320, ge=1)
    height: int = Field(240, ge=1)


class CameraRing(BaseModel):
    ring: RingConfig


class SceneConfig(BaseModel):
    """场景配置：显式行人列表或随机生成；相机为标定数组或环形布置"""

    pedestrians: Optional[List[Pedestrian]] = None
    random_count: Optional[int] = Field(None, ge=0)
    min_dist: float = Field(0.5, ge=0)
    radius: float = Field(0.25, gt=0)
    height: float = Field(1.7, gt=0)
    margin: float = Field(0.0, ge=0, description="随机放置时距网格边界的最小距离")
    cameras: Union[List[CameraModel], CameraRing] = Field(default_factory=lambda: CameraRing(ring=RingConfig()))
    seed: int = 0
    frames: int = Field(1, ge=1)


class Scene(BaseModel):
    model_config = ConfigDict(frozen=True)

    pedestrians: List[Pedestrian]
    cameras: List[CameraModel]
    rng_seed: int = 0

    @model_validator(mode="after")
    def _check_cameras(self):
        if not self.cameras:
            raise ValueError("场景至少需要一个相机")
        return self


def look_at(center: Sequence[float], target: Sequence[float], up: Sequence[float] = WORLD_UP):
    """
    构造朝向 target 的相机外参（x 右、y 下、z 前）
    :return: (R 3×3, t 3)
    """
    c = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - c
    forward /= np.linalg.norm(forward)
    up_vec = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up_vec)
    if np.linalg.norm(right) < 1e-12:
        # 视线与 up 平行时换一个参考方向
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ c


def ring_cameras(
        n: int,
        center: Sequence[float],
        ring_radius: float,
        cam_height: float,
        fx: float = 200.0,
        fy: float = 200.0,
        width: int = 320,
        height: int = 240,
        look_height: float = 1.0,
) -> List[CameraModel]:
    """在以 center 为圆心的环上均匀布置 n 个相机，全部注视 (center, look_height)"""
    target = (center[0], center[1], look_height)
    cameras = []
    for k in range(n):
        angle = 2.0 * math.pi * k / n
        position = (
            center[0] + ring_radius * math.cos(angle),
            center[1] + ring_radius * math.sin(angle),
            cam_height,
        )
        R, t = look_at(position, target)
        cameras.append(CameraModel(
            name=f"cam{k}",
            fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
            R=R, t=t, width=width, height=height,
        ))
    return cameras


def _resolve_cameras(config: SceneConfig, grid: GridSpec) -> List[CameraModel]:
    if isinstance(config.cameras, CameraRing):
        ring = config.cameras.ring
        center = ring.center or (
            (grid.origin[0] + grid.x_max) / 2.0,
            (grid.origin[1] + grid.y_max) / 2.0,
        )
        return ring_cameras(
            ring.n, center, ring.ring_radius, ring.cam_height,
            ring.fx, ring.fy, ring.width, ring.height, ring.look_height,
        )
    return list(config.cameras)


def _place_pedestrians(config: SceneConfig, grid: GridSpec, rng: np.random.Generator) -> List[Pedestrian]:
    x_lo, x_hi = grid.origin[0] + config.margin, grid.x_max - config.margin
    y_lo, y_hi = grid.origin[1] + config.margin, grid.y_max - config.margin
    if x_lo >= x_hi or y_lo >= y_hi:
        raise PlacementFailure(f"边距 {config.margin} 超过了网格的地面范围")

    feet: List[np.ndarray] = []
    rejections = 0
    while len(feet) < config.random_count:
        candidate = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
        if all(np.linalg.norm(candidate - f) >= config.min_dist for f in feet):
            feet.append(candidate)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise PlacementFailure(
                f"放置 {config.random_count} 个行人失败：已拒绝 {rejections} 次，"
                f"最小间距 {config.min_dist} m 过于拥挤"
            )
    return [Pedestrian(x=float(f[0]), y=float(f[1]), radius=config.radius, height=config.height) for f in feet]


def _check_extent(pedestrians: List[Pedestrian], grid: GridSpec) -> None:
    for k, ped in enumerate(pedestrians):
        if not (grid.origin[0] <= ped.x < grid.x_max and grid.origin[1] <= ped.y < grid.y_max):
            raise PlacementFailure(
                f"第 {k} 个行人 ({ped.x}, {ped.y}) 不在网格地面范围 "
                f"[{grid.origin[0]}, {grid.x_max}) × [{grid.origin[1]}, {grid.y_max}) 内"
            )


def make_scene(config: SceneConfig, grid: GridSpec, seed: Optional[int] = None, frame: int = 0) -> Scene:
    """
    生成一帧场景；相同 (seed, frame) 得到相同场景
    :param seed: 覆盖 config.seed
    """
    seed = config.seed if seed is None else seed
    cameras = _resolve_cameras(config, grid)
    if config.pedestrians is not None:
        pedestrians = list(config.pedestrians)
        _check_extent(pedestrians, grid)
    else:
        rng = np.random.default_rng([seed, frame])
        pedestrians = _place_pedestrians(config, grid, rng) if config.random_count else []
    logger.info(f"场景 frame={frame}: {len(pedestrians)} 个行人，{len(cameras)} 个相机")
    return Scene(pedestrians=pedestrians, cameras=cameras, rng_seed=seed)


def distance_to_axis(ped: Pedestrian, points) -> np.ndarray:
    """点到胶囊轴线段的距离"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b = ped.axis_segment()
    ab = b - a
    denom = float(ab @ ab)
    s = np.zeros(len(pts)) if denom == 0 else np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    closest = a + s[:, None] * ab
    return np.linalg.norm(pts - closest, axis=1)


def points_in_pedestrians(scene: Scene, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.zeros(len(pts), dtype=bool)
    for ped in scene.pedestrians:
        inside |= distance_to_axis(ped, pts) <= ped.radius
    return inside


def point_in_pedestrian(scene: Scene, p: Sequence[float]) -> bool:
    return bool(points_in_pedestrians(scene, [p])[0])


def _ray_hits_sphere(origin, dirs, center, radius) -> np.ndarray:
    oc = origin - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = dirs @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        t_far = (-b + np.sqrt(disc)) / a
    return (disc >= 0) & (t_far >= 0)


def _ray_hits_cylinder(origin, dirs, ped: Pedestrian) -> np.ndarray:
    """有限竖直圆柱侧面/内部：存在 t ≥ 0 使水平距离 ≤ r 且高度在轴线段内"""
    bottom, top = ped.axis_segment()
    z_lo, z_hi = bottom[2], top[2]
    ox, oy = origin[0] - ped.x, origin[1] - ped.y
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - ped.radius * ped.radius
    disc = b * b - a * c

    horizontal = a > 1e-18
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(np.maximum(disc, 0.0))
        t1 = np.where(horizontal, (-b - root) / np.where(horizontal, a, 1.0), 0.0)
        t2 = np.where(horizontal, (-b + root) / np.where(horizontal, a, 1.0), np.inf)
    crosses = np.where(horizontal, disc >= 0, c <= 0)
    t_start = np.maximum(t1, 0.0)
    ok = crosses & (t2 >= t_start)

    # 区间 [t_start, t2] 上的高度范围
    z_a = origin[2] + t_start * dz
    with np.errstate(invalid="ignore"):
        z_b = np.where(np.isinf(t2), np.where(dz > 0, np.inf, np.where(dz < 0, -np.inf, origin[2])),
                       origin[2] + t2 * dz)
    z_min = np.minimum(z_a, z_b)
    z_max = np.maximum(z_a, z_b)
    return ok & (z_max >= z_lo) & (z_min <= z_hi)


def ray_hits_pedestrian(origin: np.ndarray, dirs: np.ndarray, ped: Pedestrian) -> np.ndarray:
    """射线（t ≥ 0）与胶囊体求交：圆柱 + 两端半球"""
    bottom, top = ped.axis_segment()
    hits = _ray_hits_cylinder(origin, dirs, ped)
    hits |= _ray_hits_sphere(origin, dirs, bottom, ped.radius)
    hits |= _ray_hits_sphere(origin, dirs, top, ped.radius)
    return hits


def _pixel_window(cam: CameraModel, ped: Pedestrian, width: int, height: int) -> Tuple[int, int, int, int]:
    """行人包围盒在图像上的像素窗口 (r0, r1, c0, c1)，外扩 1 像素；包围盒跨过相机平面时取整幅图"""
    top = float(ped.axis_segment()[1][2]) + ped.radius
    corners = np.array([
        [ped.x + dx, ped.y + dy, z]
        for dx in (-ped.radius, ped.radius)
        for dy in (-ped.radius, ped.radius)
        for z in (0.0, top)
    ])
    uv, depth = project_points(cam, corners)
    if (depth <= 0).any():
        return 0, height, 0, width
    c0 = max(0, math.floor(uv[:, 0].min()) - 1)
    c1 = min(width, math.ceil(uv[:, 0].max()) + 1)
    r0 = max(0, math.floor(uv[:, 1].min()) - 1)
    r1 = min(height, math.ceil(uv[:, 1].max()) + 1)
    return r0, r1, c0, c1


def render_silhouette(
        scene: Scene,
        cam_index: int,
        width: Optional[int] = None,
        height: Optional[int] = None,
        supersample: int = 1,
) -> np.ndarray:
    """
    解析渲染轮廓图：每个像素取 supersample² 条射线的覆盖比例

    Args:
        scene: 场景
        cam_index: 相机序号
        width, height: 输出分辨率，默认为相机图像尺寸
        supersample: 每个方向的子采样数，1 时输出二值图

    Returns:
        H×W 的 float32 轮廓图，取值 [0, 1]
    """
    if not 0 <= cam_index < len(scene.cameras):
        raise InvalidCamera(f"相机序号 {cam_index} 超出范围 [0, {len(scene.cameras)})")
    if supersample < 1:
        raise InvalidFactor(f"超采样数必须 ≥ 1: {supersample}")

    cam = scene.cameras[cam_index]
    width = width or cam.image_w
    height = height or cam.image_h
    if (width, height) != (cam.image_w, cam.image_h):
        cam = adjust_intrinsics(cam, width / cam.image_w, scale_v=height / cam.image_h, image_size=(width, height))

    coverage = np.zeros((height, width), dtype=np.float64)
    if not scene.pedestrians:
        return coverage.astype(np.float32)

    origin = camera_center(cam)
    to_world = cam.rotation.T
    offsets = (np.arange(supersample) + 0.5) / supersample
    hits = np.zeros((supersample * supersample, height, width), dtype=bool)

    # 每个行人只对其包围盒窗口内的像素求交
    for ped in scene.pedestrians:
        r0, r1, c0, c1 = _pixel_window(cam, ped, width, height)
        if r0 >= r1 or c0 >= c1:
            continue
        rows, cols = np.mgrid[r0:r1, c0:c1].astype(np.float64)
        for k, (du, dv) in enumerate((du, dv) for du in offsets for dv in offsets):
            u = cols.reshape(-1) + du
            v = rows.reshape(-1) + dv
            dirs_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=1)
            hit = ray_hits_pedestrian(origin, dirs_cam @ to_world.T, ped)
            hits[k, r0:r1, c0:c1] |= hit.reshape(r1 - r0, c1 - c0)

    return hits.mean(axis=0).astype(np.float32)


def ground_truth(scene: Scene) -> List[Tuple[float, float]]:
    return [(p.x, p.y) for p in scene.pedestrians]
