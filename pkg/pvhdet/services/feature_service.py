# pvhdet/services/feature_service.py
"""3D 特征拉取：把每个视角的 2D 图（特征图或轮廓图）双线性采样到体素体中

约定：
- 2D 图为 C×H×W 数组（单通道图也接受 H×W）
- 特征体为 C×Y×Z×X 的 float32 数组，有效性体为 Y×Z×X 的 bool 数组
- 像素 (i, j) 覆盖连续坐标 [i, i+1)×[j, j+1)，采样时减去 0.5 转成数组索引坐标
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np

from pvhdet.exceptions import DimensionMismatch
from pvhdet.services.camera_service import CameraModel, adjust_intrinsics, project_points, validity_mask
from pvhdet.services.grid_service import GridSpec, voxel_centers

logger = logging.getLogger(__name__)


def as_planar_map(data) -> np.ndarray:
    """统一成 C×H×W"""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionMismatch(f"2D 图必须是 H×W 或 C×H×W，实际维度为 {arr.shape}")
    return arr


def bilinear_sample_many(planar, u, v) -> np.ndarray:
    """
    在数组索引坐标 (u=列, v=行) 上做双线性采样，越界坐标钳制到边缘
    :return: C×N 的 float64 采样值
    """
    data = as_planar_map(planar)
    _, height, width = data.shape
    u = np.clip(np.asarray(u, dtype=np.float64).reshape(-1), 0.0, width - 1)
    v = np.clip(np.asarray(v, dtype=np.float64).reshape(-1), 0.0, height - 1)

    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = u - x0
    wy = v - y0

    d = data.astype(np.float64, copy=False)
    top = d[:, y0, x0] * (1.0 - wx) + d[:, y0, x1] * wx
    bottom = d[:, y1, x0] * (1.0 - wx) + d[:, y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def bilinear_sample(planar, u: float, v: float, channel: int = 0) -> float:
    return float(bilinear_sample_many(planar, [u], [v])[channel, 0])


def feature_map_camera(cam: CameraModel, planar) -> CameraModel:
    """把相机调整到 2D 图自身的分辨率"""
    _, height, width = as_planar_map(planar).shape
    if (width, height) == (cam.image_w, cam.image_h):
        return cam
    return adjust_intrinsics(
        cam,
        width / cam.image_w,
        scale_v=height / cam.image_h,
        image_size=(width, height),
    )


def compute_validity(cam: CameraModel, grid: GridSpec, bounds_w: float, bounds_h: float) -> np.ndarray:
    centers = voxel_centers(grid).reshape(-1, 3)
    return validity_mask(cam, centers, bounds_w, bounds_h).reshape(grid.shape)


def pull_view(planar, cam: CameraModel, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    单视角特征拉取

    Args:
        planar: C×H×W 的 2D 图
        cam: 已经处于该图坐标系下的相机（下采样需先用 adjust_intrinsics 调整）
        grid: 体素网格

    Returns:
        (C×Y×Z×X 特征体, Y×Z×X 有效性体)，无效体素所有通道为 0
    """
    data = as_planar_map(planar)
    channels, height, width = data.shape
    centers = voxel_centers(grid).reshape(-1, 3)

    uv, _ = project_points(cam, centers)
    valid = validity_mask(cam, centers, width, height)

    volume = np.zeros((channels, centers.shape[0]), dtype=np.float32)
    if valid.any():
        samples = bilinear_sample_many(data, uv[valid, 0] - 0.5, uv[valid, 1] - 0.5)
        volume[:, valid] = samples.astype(np.float32)

    logger.debug(f"相机 {cam.name}: {int(valid.sum())}/{valid.size} 个体素有效")
    return volume.reshape((channels,) + grid.shape), valid.reshape(grid.shape)


def _check_same_dims(volumes: Sequence[np.ndarray], validity: Sequence[np.ndarray]) -> None:
    if len(volumes) != len(validity) or not volumes:
        raise DimensionMismatch(f"特征体数量 ({len(volumes)}) 与有效性体数量 ({len(validity)}) 不一致或为空")
    shape = volumes[0].shape
    for i, (vol, mask) in enumerate(zip(volumes, validity)):
        if vol.shape != shape or mask.shape != shape[1:]:
            raise DimensionMismatch(f"第 {i} 个视角的维度 {vol.shape}/{mask.shape} 与 {shape} 不一致")


def aggregate_valid_mean(volumes: List[np.ndarray], validity: List[np.ndarray]) -> np.ndarray:
    """按体素对有效视角求平均；没有任何有效视角的体素为 0"""
    _check_same_dims(volumes, validity)
    total = np.zeros(volumes[0].shape, dtype=np.float64)
    count = np.zeros(volumes[0].shape[1:], dtype=np.int64)
    for vol, mask in zip(volumes, validity):
        total += np.where(mask, vol, 0.0)
        count += mask
    mean = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return mean.astype(np.float32)
