import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple

import cv2
import numpy as np

from pvhdet.commands import frame_name
from pvhdet.config import RunConfig
from pvhdet.exceptions import StorageError, UnknownMode
from pvhdet.services.detection_service import bev_heatmap
from pvhdet.services.grid_service import GridSpec
from pvhdet.services.io_service import (
    bev_to_pgm,
    ensure_dir,
    read_detections,
    read_ground_truth,
    read_raw,
    read_sidecar,
    silhouette_to_pgm,
    write_pgm,
    write_ppm,
)
from pvhdet.services.scene_service import make_scene, render_silhouette

logger = logging.getLogger(__name__)

RENDER_KINDS = ("bev", "overlay", "silhouette")
GT_COLOR = (0, 255, 0)
DETECTION_COLOR = (255, 0, 0)
GT_MARKER_SIZE = 5
DETECTION_RADIUS = 1


def ground_pixel(grid: GridSpec, x: float, y: float) -> Optional[Tuple[int, int]]:
    """地面坐标 → BEV 图像 (行, 列)；图像第 0 行对应最大 Y"""
    ix = math.floor((x - grid.origin[0]) / grid.cell_xy)
    iy = math.floor((y - grid.origin[1]) / grid.cell_xy)
    if not (0 <= ix < grid.nx and 0 <= iy < grid.ny):
        return None
    return grid.ny - 1 - iy, ix


def draw_overlay(gray: np.ndarray, grid: GridSpec, detections, ground_truth) -> np.ndarray:
    """真值画绿色十字，检测画红色圆点（后画，覆盖十字）；返回 RGB 图"""
    image = np.ascontiguousarray(np.repeat(gray[:, :, None], 3, axis=2), dtype=np.uint8)
    for x, y in ground_truth:
        center = ground_pixel(grid, x, y)
        if center is not None:
            r, c = center
            cv2.drawMarker(image, (c, r), GT_COLOR, markerType=cv2.MARKER_CROSS,
                           markerSize=GT_MARKER_SIZE, thickness=1)
    for det in detections:
        center = ground_pixel(grid, det.x, det.y)
        if center is not None:
            r, c = center
            cv2.circle(image, (c, r), DETECTION_RADIUS, DETECTION_COLOR, thickness=-1)
    return image


def _bev_path(config: RunConfig) -> Path:
    return config.input_dir / "bev" / f"{frame_name(config.frame)}.f32"


def _load_bev(config: RunConfig) -> Tuple[np.ndarray, GridSpec]:
    path = _bev_path(config)
    if not path.exists():
        raise StorageError(f"找不到 BEV 文件: {path}", path=path)
    sidecar = read_sidecar(path)
    grid = GridSpec.model_validate(sidecar["grid"]) if "grid" in sidecar else config.resolved_grid()
    return bev_heatmap(read_raw(path), sidecar.get("bev", "max_z"), grid.nz), grid


def _render_bev(config: RunConfig, out: Path) -> Path:
    bev, _ = _load_bev(config)
    path = out / f"bev_{config.frame:04d}.pgm"
    write_pgm(path, bev_to_pgm(bev))
    return path


def _render_overlay(config: RunConfig, out: Path) -> Path:
    if _bev_path(config).exists():
        bev, grid = _load_bev(config)
        gray = (bev_to_pgm(bev) >> 8).astype(np.uint8)
    else:
        grid = config.resolved_grid()
        gray = np.zeros((grid.ny, grid.nx), dtype=np.uint8)

    det_path = Path(config.detections) if config.detections else config.out_dir / "detections.jsonl"
    gt_path = Path(config.gt) if config.gt else config.input_dir / "gt.jsonl"
    detections = read_detections(det_path).get(config.frame, []) if det_path.exists() else []
    ground_truth = read_ground_truth(gt_path).get(config.frame, []) if gt_path.exists() else []
    if not detections and not ground_truth:
        logger.warning(f"第 {config.frame} 帧既没有检测也没有真值")

    path = out / f"overlay_{config.frame:04d}.ppm"
    write_ppm(path, draw_overlay(gray, grid, detections, ground_truth))
    return path


def _render_silhouettes(config: RunConfig, out: Path) -> Path:
    """把该帧所有相机的轮廓图横向拼接成一张图"""
    scene = make_scene(config.resolved_scene(), config.resolved_grid(), seed=config.seed, frame=config.frame)
    tiles = [
        silhouette_to_pgm(render_silhouette(scene, index, supersample=config.supersample))
        for index in range(len(scene.cameras))
    ]
    height = max(t.shape[0] for t in tiles)
    tiles = [np.pad(t, ((0, height - t.shape[0]), (0, 0))) for t in tiles]
    path = out / f"silhouette_{config.frame:04d}.pgm"
    write_pgm(path, np.concatenate(tiles, axis=1))
    return path


def run(config: RunConfig) -> List[Path]:
    if config.kind not in RENDER_KINDS:
        raise UnknownMode(f"未知的渲染类型: {config.kind}，支持: {', '.join(RENDER_KINDS)}", field="kind")
    out = ensure_dir(config.out_dir / "render")
    if config.kind == "bev":
        path = _render_bev(config, out)
    elif config.kind == "overlay":
        path = _render_overlay(config, out)
    else:
        path = _render_silhouettes(config, out)
    logger.info(f"渲染完成: {path}")
    return [path]
