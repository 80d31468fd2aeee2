# pvhdet/services/camera_service.py
import logging
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.ndimage import affine_transform

from pvhdet.exceptions import DegenerateProjection, InvalidScale

logger = logging.getLogger(__name__)

# 深度绝对值小于该值视为落在主平面上
DEPTH_EPS = 1e-12
ORTHONORMAL_TOL = 1e-9


class CameraModel(BaseModel):
    """针孔相机：内参 (fx, fy, cx, cy)，外参 (R, t)，图像尺寸

    标定文件中的字段名为 width/height，R 为 9 个数（行优先）。
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    name: str = Field("cam", description="相机名称")
    fx: float = Field(..., gt=0, description="x 方向焦距（像素）")
    fy: float = Field(..., gt=0, description="y 方向焦距（像素）")
    cx: float = Field(..., description="主点 x（像素）")
    cy: float = Field(..., description="主点 y（像素）")
    R: Tuple[float, ...] = Field(..., description="旋转矩阵，行优先 9 个数")
    t: Tuple[float, float, float] = Field(..., description="平移向量（米）")
    image_w: int = Field(..., ge=1, alias="width", description="图像宽度（像素）")
    image_h: int = Field(..., ge=1, alias="height", description="图像高度（像素）")

    @field_validator("R", mode="before")
    @classmethod
    def _flatten_rotation(cls, value):
        flat = tuple(float(x) for x in np.asarray(value, dtype=np.float64).reshape(-1))
        if len(flat) != 9:
            raise ValueError(f"R 必须包含 9 个数，实际为 {len(flat)}")
        return flat

    @field_validator("t", mode="before")
    @classmethod
    def _flatten_translation(cls, value):
        return tuple(float(x) for x in np.asarray(value, dtype=np.float64).reshape(-1))

    @model_validator(mode="after")
    def _check_orthonormal(self):
        rot = self.rotation
        deviation = np.abs(rot @ rot.T - np.eye(3)).max()
        if deviation >= ORTHONORMAL_TOL:
            raise ValueError(f"R 不是正交矩阵，R·Rᵀ 与单位阵的最大偏差为 {deviation:.3e}")
        return self

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.R, dtype=np.float64).reshape(3, 3)

    @property
    def translation(self) -> np.ndarray:
        return np.asarray(self.t, dtype=np.float64)


class PixelProjection(NamedTuple):
    u: float
    v: float
    depth: float


def projection_matrix(cam: CameraModel) -> np.ndarray:
    """P = K[R|t]，3×4"""
    return cam.K @ np.hstack([cam.rotation, cam.translation[:, None]])


def camera_center(cam: CameraModel) -> np.ndarray:
    """相机光心的世界坐标 C = −Rᵀt"""
    return -cam.rotation.T @ cam.translation


def project_points(cam: CameraModel, points) -> Tuple[np.ndarray, np.ndarray]:
    """
    批量投影世界点
    :param points: N×3 世界坐标（米）
    :return: (N×2 像素坐标, N 深度)；深度为 0 的点像素坐标为 inf/nan
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    P = projection_matrix(cam)
    homo = pts @ P[:, :3].T + P[:, 3]
    depth = homo[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = homo[:, :2] / depth[:, None]
    return uv, depth


def project_point(cam: CameraModel, world_point: Sequence[float]) -> PixelProjection:
    P = projection_matrix(cam)
    homo = P @ np.append(np.asarray(world_point, dtype=np.float64), 1.0)
    depth = float(homo[2])
    if abs(depth) < DEPTH_EPS:
        raise DegenerateProjection(f"点 {tuple(world_point)} 位于相机 {cam.name} 的主平面上，无法投影")
    return PixelProjection(float(homo[0] / depth), float(homo[1] / depth), depth)


def validity_mask(cam: CameraModel, points, bounds_w: float, bounds_h: float) -> np.ndarray:
    """批量有效性判断：深度为正且投影落在闭区间 [0, W]×[0, H] 内"""
    uv, depth = project_points(cam, points)
    in_front = depth > DEPTH_EPS
    with np.errstate(invalid="ignore"):
        inside = (
            (uv[:, 0] >= 0.0) & (uv[:, 0] <= bounds_w)
            & (uv[:, 1] >= 0.0) & (uv[:, 1] <= bounds_h)
        )
    return in_front & inside


def is_valid(cam: CameraModel, world_point: Sequence[float], bounds_w: float, bounds_h: float) -> bool:
    return bool(validity_mask(cam, [world_point], bounds_w, bounds_h)[0])


def adjust_intrinsics(
        cam: CameraModel,
        scale: float,
        shift_u: float = 0.0,
        shift_v: float = 0.0,
        scale_v: Optional[float] = None,
        image_size: Optional[Tuple[int, int]] = None,
) -> CameraModel:
    """
    图像缩放/平移后同步调整内参，外参不变

    Args:
        scale: 水平缩放系数（同时作为默认的垂直缩放系数）
        shift_u, shift_v: 缩放后的像素平移
        scale_v: 可选的独立垂直缩放系数
        image_size: 可选的新图像尺寸 (width, height)，默认保持原尺寸

    Returns:
        调整后的相机
    """
    sv = scale if scale_v is None else scale_v
    if not scale > 0 or not sv > 0:
        raise InvalidScale(f"缩放系数必须为正数: scale={scale}, scale_v={scale_v}")
    update = {
        "fx": cam.fx * scale,
        "fy": cam.fy * sv,
        "cx": cam.cx * scale + shift_u,
        "cy": cam.cy * sv + shift_v,
    }
    if image_size is not None:
        update["image_w"], update["image_h"] = int(image_size[0]), int(image_size[1])
    return cam.model_copy(update=update)


def perturb_extrinsics(cam: CameraModel, noise: Sequence[float]) -> CameraModel:
    t_new = cam.translation + np.asarray(noise, dtype=np.float64).reshape(3)
    return cam.model_copy(update={"t": tuple(float(x) for x in t_new)})


def random_translation_noise(rng: np.random.Generator, magnitude: float) -> np.ndarray:
    """方向均匀随机、模长固定为 magnitude 的平移噪声"""
    if magnitude <= 0:
        return np.zeros(3)
    direction = rng.normal(size=3)
    return direction / np.linalg.norm(direction) * magnitude


def augment_view(
        image: np.ndarray,
        cam: CameraModel,
        rng: np.random.Generator,
        scale_range: Tuple[float, float] = (0.8, 1.2),
        max_shift: float = 0.0,
) -> Tuple[np.ndarray, CameraModel]:
    """
    随机缩放 + 平移 + 裁剪回原尺寸，并同步调整相机内参

    连续坐标 x 映射为 s·x + shift（像素 i 覆盖 [i, i+1)）。
    :param image: H×W 或 C×H×W 数组
    :return: (变换后的图像, 调整后的相机)
    """
    low, high = scale_range
    if not 0 < low <= high:
        raise InvalidScale(f"缩放范围无效: {scale_range}")
    s = float(rng.uniform(low, high))
    height, width = image.shape[-2:]
    shift_u = (1.0 - s) * width / 2.0 + float(rng.uniform(-max_shift, max_shift))
    shift_v = (1.0 - s) * height / 2.0 + float(rng.uniform(-max_shift, max_shift))

    # 输出像素索引 o 对应输入索引 (o + 0.5 - shift) / s - 0.5
    matrix = np.diag([1.0 / s, 1.0 / s])
    offset = np.array([(0.5 - shift_v) / s - 0.5, (0.5 - shift_u) / s - 0.5])
    planes = image.reshape(-1, height, width).astype(np.float64)
    warped = np.stack([
        affine_transform(plane, matrix, offset=offset, order=1, mode="constant", cval=0.0)
        for plane in planes
    ]).reshape(image.shape)

    logger.debug(f"相机 {cam.name} 增强: scale={s:.3f}, shift=({shift_u:.2f}, {shift_v:.2f})")
    return warped.astype(np.float32), adjust_intrinsics(cam, s, shift_u, shift_v)
