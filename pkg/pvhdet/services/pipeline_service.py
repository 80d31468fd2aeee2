# pvhdet/services/pipeline_service.py
"""单帧重建流水线：轮廓 → 拉取 → VH/PVH → 融合 → BEV"""
import logging
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from pvhdet.exceptions import CalibrationMismatch, UnknownMode
from pvhdet.services.camera_service import (
    CameraModel,
    augment_view,
    perturb_extrinsics,
    random_translation_noise,
)
from pvhdet.services.feature_service import aggregate_valid_mean, as_planar_map, feature_map_camera, pull_view
from pvhdet.services.grid_service import GridSpec
from pvhdet.services.hull_service import (
    BEV_MODES,
    FUSION_MODES,
    OCCUPANCY_KINDS,
    HullService,
    OccupancyResult,
    compress_bev,
    fuse,
)

logger = logging.getLogger(__name__)


class FrameResult(NamedTuple):
    hull: OccupancyResult
    occupancy: np.ndarray
    bev: np.ndarray
    fused_bev: Optional[np.ndarray]


class ReconstructionService:
    """
    持有一次运行的全部重建参数，逐帧执行流水线

    随机性只来自 seed：标定噪声按 (seed, 相机序号) 生成，所有帧共用；
    增强按 (seed, 帧号, 相机序号) 生成。
    """

    def __init__(
            self,
            hull_service: HullService,
            occupancy: str = "pvh",
            fusion: str = "mult_concat",
            bev: str = "max_z",
            augment: bool = False,
            translation_noise: float = 0.0,
            seed: int = 0,
    ):
        for value, allowed, label in (
                (occupancy, OCCUPANCY_KINDS, "占据类型"),
                (fusion, FUSION_MODES, "融合模式"),
                (bev, BEV_MODES, "BEV 压缩方式"),
        ):
            if value not in allowed:
                raise UnknownMode(f"未知的{label}: {value}，支持: {', '.join(allowed)}")
        self.hull_service = hull_service
        self.occupancy = occupancy
        self.fusion = fusion
        self.bev = bev
        self.augment = augment
        self.translation_noise = translation_noise
        self.seed = seed

    def prepare_cameras(self, cameras: List[CameraModel]) -> Dict[str, CameraModel]:
        """按名称索引相机，并施加（可选的）平移噪声"""
        prepared = {}
        for index, cam in enumerate(cameras):
            if self.translation_noise > 0:
                rng = np.random.default_rng([self.seed, index])
                noise = random_translation_noise(rng, self.translation_noise)
                cam = perturb_extrinsics(cam, noise)
                logger.debug(f"相机 {cam.name} 平移噪声: {np.round(noise, 4).tolist()}")
            prepared[cam.name] = cam
        return prepared

    def _augment(self, frame: int, index: int, image: np.ndarray, cam: CameraModel):
        rng = np.random.default_rng([self.seed, frame, index])
        return augment_view(image, cam, rng)

    def run_frame(
            self,
            frame: int,
            silhouettes: Dict[str, np.ndarray],
            cameras: Dict[str, CameraModel],
            grid: GridSpec,
            features: Optional[Dict[str, np.ndarray]] = None,
    ) -> FrameResult:
        """
        Args:
            frame: 帧号
            silhouettes: 相机名 → 全分辨率轮廓图
            cameras: prepare_cameras 的结果
            grid: 体素网格
            features: 可选，相机名 → C×h×w 特征图；给出时输出融合后的 BEV

        Returns:
            FrameResult
        """
        missing = [name for name in cameras if name not in silhouettes]
        if missing:
            raise CalibrationMismatch(f"第 {frame} 帧缺少相机 {', '.join(missing)} 的轮廓图")

        names = list(cameras)
        calibrated = cameras
        if self.augment:
            silhouettes = dict(silhouettes)
            cameras = dict(cameras)
            for index, name in enumerate(names):
                silhouettes[name], cameras[name] = self._augment(frame, index, silhouettes[name], cameras[name])

        result = self.hull_service.reconstruct(silhouettes, cameras, grid)
        occupancy = result.occupancy(self.occupancy)
        bev = compress_bev(occupancy, self.bev)

        fused_bev = None
        if features is not None:
            fused_bev = self._fuse_features(frame, names, features, calibrated, grid, occupancy)

        logger.info(f"第 {frame} 帧: BEV 最大值 {float(bev.max()):.4f}")
        return FrameResult(result, occupancy, bev, fused_bev)

    def _fuse_features(self, frame, names, features, cameras, grid, occupancy) -> np.ndarray:
        volumes, validity = [], []
        for index, name in enumerate(names):
            if name not in features:
                raise CalibrationMismatch(f"第 {frame} 帧缺少相机 {name} 的特征图")
            planar = as_planar_map(features[name]).astype(np.float32)
            cam = feature_map_camera(cameras[name], planar)
            if self.augment:
                # 与轮廓图使用同一随机序列，缩放一致
                planar, cam = self._augment(frame, index, planar, cam)
            volume, valid = pull_view(planar, cam, grid)
            volumes.append(volume)
            validity.append(valid)
        feature_volume = aggregate_valid_mean(volumes, validity)
        fused = fuse(feature_volume, occupancy, self.fusion)
        logger.info(f"第 {frame} 帧: 特征体 {feature_volume.shape} 以 {self.fusion} 融合为 {fused.shape}")
        return compress_bev(fused, self.bev)
