"""测试共用的构造函数"""
import math
from functools import lru_cache

import numpy as np

from pvhdet.services.camera_service import CameraModel
from pvhdet.services.detection_service import DetectionService, EvalReport
from pvhdet.services.grid_service import GridSpec, wildtrack_grid
from pvhdet.services.hull_service import HullService
from pvhdet.services.pipeline_service import ReconstructionService
from pvhdet.services.scene_service import (
    CameraRing,
    RingConfig,
    SceneConfig,
    ground_truth,
    make_scene,
    render_silhouette,
)

# 6 m × 6 m，0.1 m 单元，高 2 m
SMALL_GRID = GridSpec(origin=(0.0, 0.0, 0.0), cell_xy=0.1, cell_z=0.25, nx=60, ny=60, nz=8)


def make_camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, R=None, t=(0.0, 0.0, 0.0),
                width=100, height=100, name="cam") -> CameraModel:
    return CameraModel(
        name=name, fx=fx, fy=fy, cx=cx, cy=cy,
        R=np.eye(3) if R is None else R, t=t, width=width, height=height,
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def scene_config(count, n_cameras=6, min_dist=1.0, margin=1.0) -> SceneConfig:
    return SceneConfig(
        random_count=count,
        min_dist=min_dist,
        margin=margin,
        cameras=CameraRing(ring=RingConfig(n=n_cameras)),
    )


def render_all(scene, supersample=1):
    return {
        cam.name: render_silhouette(scene, index, supersample=supersample)
        for index, cam in enumerate(scene.cameras)
    }


# 端到端检查用的场景：12 m × 36 m、0.1 m 单元；6 台相机架在 30 m 高处，俯视整个地面
ACCEPTANCE_GRID = wildtrack_grid(4)
ACCEPTANCE_RING = RingConfig(n=6, ring_radius=15.0, cam_height=30.0, fx=560.0, fy=560.0, width=840, height=840)
ACCEPTANCE_MAX_COUNT = 20


@lru_cache(maxsize=None)
def acceptance_scene(seed: int, count: int):
    """随机放置 count 个行人（最小间距 1 m）并渲染二值轮廓；同一 (seed, count) 只渲染一次"""
    config = SceneConfig(random_count=count, min_dist=1.0, margin=1.0, cameras=CameraRing(ring=ACCEPTANCE_RING))
    scene = make_scene(config, ACCEPTANCE_GRID, seed=seed)
    return scene, render_all(scene, supersample=1)


def run_synthetic_scene(seed: int, count: int, translation_noise: float = 0.0) -> EvalReport:
    """渲染 → 重建 → 检测 → 评估，全部在内存中完成"""
    scene, silhouettes = acceptance_scene(seed, count)
    service = ReconstructionService(
        HullService(blur_factor=1),
        occupancy="pvh",
        bev="max_z",
        translation_noise=translation_noise,
        seed=seed,
    )
    cameras = service.prepare_cameras(scene.cameras)
    result = service.run_frame(0, silhouettes, cameras, ACCEPTANCE_GRID)
    detector = DetectionService(threshold=0.4, nms_radius=1, distance=0.5, matching="optimal")
    detections = detector.detect(result.bev, ACCEPTANCE_GRID)
    return detector.evaluate({0: detections}, {0: ground_truth(scene)})


def four_corner_oracle(image, u, v):
    """逐点的四邻域双线性插值，坐标先截断到 [0, W−1]×[0, H−1]"""
    height, width = image.shape
    u = min(max(u, 0.0), width - 1)
    v = min(max(v, 0.0), height - 1)
    x0, y0 = int(math.floor(u)), int(math.floor(v))
    x1, y1 = min(x0 + 1, width - 1), min(y0 + 1, height - 1)
    a, b = u - x0, v - y0
    return ((1 - a) * (1 - b) * image[y0, x0] + a * (1 - b) * image[y0, x1]
            + (1 - a) * b * image[y1, x0] + a * b * image[y1, x1])
