from pvhdet.config import RunConfig
from pvhdet.services.detection_service import DetectionService
from pvhdet.services.hull_service import HullService
from pvhdet.services.pipeline_service import ReconstructionService


def get_hull_service(config: RunConfig) -> HullService:
    return HullService(
        blur_factor=config.blur_factor,
        blur_sigma=config.blur_sigma,
        tau=config.tau,
        min_views=config.min_views,
    )


def get_reconstruction_service(config: RunConfig, hull_service: HullService = None) -> ReconstructionService:
    return ReconstructionService(
        hull_service=hull_service or get_hull_service(config),
        occupancy=config.occupancy,
        fusion=config.fusion,
        bev=config.bev,
        augment=config.augment,
        translation_noise=config.translation_noise,
        seed=config.seed,
    )


def get_detection_service(config: RunConfig) -> DetectionService:
    """解码与评估共用同一个服务实例"""
    return DetectionService(
        threshold=config.threshold,
        nms_radius=config.nms_radius,
        smooth=config.smooth,
        distance=config.distance,
        matching=config.matching,
    )
