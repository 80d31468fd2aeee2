# pvhdet/services/hull_service.py
import logging
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from pvhdet.exceptions import CalibrationMismatch, DimensionMismatch, InvalidFactor, UnknownMode
from pvhdet.services.camera_service import CameraModel
from pvhdet.services.feature_service import feature_map_camera, pull_view
from pvhdet.services.grid_service import GridSpec

logger = logging.getLogger(__name__)

FUSION_MODES = ("none", "concat", "mult", "mult_add", "mult_concat")
BEV_MODES = ("max_z", "mean_z", "sum_z")
OCCUPANCY_KINDS = ("vh", "pvh")

# 高斯核在 3σ 处截断
BLUR_TRUNCATE = 3.0


def preprocess_silhouette(mask: np.ndarray, factor: int, sigma: Optional[float] = None) -> np.ndarray:
    """
    先高斯模糊抗混叠，再按 1/factor 下采样

    :param mask: H×W，取值 [0, 1]
    :param factor: 下采样系数，≥ 1
    :param sigma: 模糊标准差，默认 factor > 1 时取 factor/2，factor == 1 时为 0（原样返回）
    :return: 下采样后的轮廓图（float32，取值 [0, 1]）
    """
    if factor < 1:
        raise InvalidFactor(f"下采样系数必须 ≥ 1: {factor}")
    if sigma is None:
        sigma = factor / 2.0 if factor > 1 else 0.0
    image = np.asarray(mask, dtype=np.float64)

    if sigma > 0:
        image = gaussian_filter(image, sigma=sigma, truncate=BLUR_TRUNCATE, mode="nearest")

    height, width = image.shape
    if factor > 1:
        if height % factor == 0 and width % factor == 0:
            image = image.reshape(height // factor, factor, width // factor, factor).mean(axis=(1, 3))
        else:
            out_h = max(1, round(height / factor))
            out_w = max(1, round(width / factor))
            image = zoom(image, (out_h / height, out_w / width), order=1, grid_mode=True, mode="nearest")

    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _as_occupancy(volume: np.ndarray) -> np.ndarray:
    vol = np.asarray(volume)
    return vol[0] if vol.ndim == 4 else vol


def _check_views(occ_views: Sequence[np.ndarray], validity: Sequence[np.ndarray]) -> None:
    if not validity or len(occ_views) != len(validity):
        raise DimensionMismatch(f"视角数量不一致: 占据体 {len(occ_views)} 个，有效性体 {len(validity)} 个")
    shape = validity[0].shape
    for i, (occ, mask) in enumerate(zip(occ_views, validity)):
        if _as_occupancy(occ).shape != shape or mask.shape != shape:
            raise DimensionMismatch(f"第 {i} 个视角的维度与 {shape} 不一致")


def valid_view_count(validity: List[np.ndarray]) -> np.ndarray:
    """N_v：每个体素落在多少个相机视锥内"""
    if not validity:
        raise DimensionMismatch("有效性体列表为空")
    shape = validity[0].shape
    count = np.zeros(shape, dtype=np.int32)
    for i, mask in enumerate(validity):
        if mask.shape != shape:
            raise DimensionMismatch(f"第 {i} 个有效性体维度 {mask.shape} 与 {shape} 不一致")
        count += mask
    return count


def visual_hull(
        occ_views: List[np.ndarray],
        validity: List[np.ndarray],
        tau: float = 0.0,
        min_views: int = 1,
) -> np.ndarray:
    """
    二值视觉外壳：所有有效视角的采样值都 > tau，且有效视角数 ≥ min_views
    :return: 1×Y×Z×X，取值 {0, 1}
    """
    _check_views(occ_views, validity)
    n_valid = valid_view_count(validity)
    positive = np.zeros_like(n_valid)
    for occ, mask in zip(occ_views, validity):
        positive += mask & (_as_occupancy(occ) > tau)
    hull = (positive == n_valid) & (n_valid >= min_views)
    return hull[None].astype(np.float32)


def probabilistic_visual_hull(occ_views: List[np.ndarray], validity: List[np.ndarray], vh: np.ndarray) -> np.ndarray:
    """外壳内的体素取所有有效视角采样值的乘积，外壳外为 0"""
    _check_views(occ_views, validity)
    hull = _as_occupancy(vh)
    if hull.shape != validity[0].shape:
        raise DimensionMismatch(f"外壳维度 {hull.shape} 与视角维度 {validity[0].shape} 不一致")
    product = np.ones(hull.shape, dtype=np.float64)
    for occ, mask in zip(occ_views, validity):
        product *= np.where(mask, _as_occupancy(occ), 1.0)
    return np.where(hull > 0, product, 0.0)[None].astype(np.float32)


def fuse(features: np.ndarray, pvh: np.ndarray, mode: str) -> np.ndarray:
    """
    把占据体融合进特征体

    Args:
        features: C×Y×Z×X
        pvh: 1×Y×Z×X（或 Y×Z×X）
        mode: none | concat | mult | mult_add | mult_concat

    Returns:
        融合后的特征体，通道数分别为 C、C+1、C、C、2C
    """
    if mode not in FUSION_MODES:
        raise UnknownMode(f"未知的融合模式: {mode}，支持: {', '.join(FUSION_MODES)}")
    occ = _as_occupancy(pvh)[None]
    if features.ndim != 4 or features.shape[1:] != occ.shape[1:]:
        raise DimensionMismatch(f"特征体 {features.shape} 与占据体 {occ.shape} 维度不一致")

    weighted = features * occ
    if mode == "none":
        fused = features
    elif mode == "concat":
        fused = np.concatenate([features, occ], axis=0)
    elif mode == "mult":
        fused = weighted
    elif mode == "mult_add":
        fused = features + weighted
    else:
        fused = np.concatenate([features, weighted], axis=0)
    return fused.astype(np.float32)


def compress_bev(volume: np.ndarray, mode: str = "max_z") -> np.ndarray:
    """沿 Z 轴压缩 C×Y×Z×X 得到 C×Y×X 的鸟瞰图"""
    if mode not in BEV_MODES:
        raise UnknownMode(f"未知的 BEV 压缩方式: {mode}，支持: {', '.join(BEV_MODES)}")
    vol = np.asarray(volume)
    if vol.ndim == 3:
        vol = vol[None]
    if mode == "max_z":
        bev = vol.max(axis=2)
    elif mode == "mean_z":
        bev = vol.mean(axis=2, dtype=np.float64)
    else:
        bev = vol.sum(axis=2, dtype=np.float64)
    return bev.astype(np.float32)


class OccupancyResult(NamedTuple):
    occ_views: List[np.ndarray]
    validity: List[np.ndarray]
    n_valid: np.ndarray
    vh: np.ndarray
    pvh: np.ndarray

    def occupancy(self, kind: str) -> np.ndarray:
        return self.vh if kind == "vh" else self.pvh


class HullService:
    """轮廓 → 视觉外壳 / 概率视觉外壳"""

    def __init__(
            self,
            blur_factor: int = 1,
            blur_sigma: Optional[float] = None,
            tau: float = 0.0,
            min_views: int = 1,
    ):
        if blur_factor < 1:
            raise InvalidFactor(f"下采样系数必须 ≥ 1: {blur_factor}")
        self.blur_factor = blur_factor
        self.blur_sigma = blur_sigma
        self.tau = tau
        self.min_views = min_views

    def reconstruct(
            self,
            silhouettes: Dict[str, np.ndarray],
            cameras: Dict[str, CameraModel],
            grid: GridSpec,
    ) -> OccupancyResult:
        """
        :param silhouettes: 相机名 → 全分辨率轮廓图（与相机图像尺寸一致）
        :param cameras: 相机名 → 相机
        """
        occ_views, validity = [], []
        for name, mask in silhouettes.items():
            if name not in cameras:
                raise CalibrationMismatch(f"标定文件中缺少相机 {name}")
            expected = (cameras[name].image_h, cameras[name].image_w)
            if mask.shape != expected:
                raise CalibrationMismatch(f"相机 {name} 的轮廓图尺寸 {mask.shape} 与标定尺寸 {expected} 不一致")
            small = preprocess_silhouette(mask, self.blur_factor, self.blur_sigma)
            cam = feature_map_camera(cameras[name], small)
            occ, valid = pull_view(small, cam, grid)
            if not small.any():
                logger.warning(f"相机 {name} 的轮廓图为空")
            occ_views.append(occ)
            validity.append(valid)

        n_valid = valid_view_count(validity)
        vh = visual_hull(occ_views, validity, self.tau, self.min_views)
        pvh = probabilistic_visual_hull(occ_views, validity, vh)
        logger.info(f"视觉外壳: {int(vh.sum())} 个体素，{len(occ_views)} 个视角")
        return OccupancyResult(occ_views, validity, n_valid, vh, pvh)
