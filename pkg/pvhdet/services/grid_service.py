# pvhdet/services/grid_service.py
import logging
import math
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pvhdet.exceptions import ConfigError, IndexOutOfGrid, InvalidFactor, NonDividingFactor

logger = logging.getLogger(__name__)

# 两个数据集的地面网格：2.5 cm 单元
BASE_CELL = 0.025
PRESETS = {
    "wildtrack": (480, 1440),
    "multiviewx": (640, 1000),
}
DEFAULT_Z_MAX = 2.0
DEFAULT_NZ = 8


class GridSpec(BaseModel):
    """地面网格 + 垂直范围；体数据按 Y×Z×X 排列"""

    model_config = ConfigDict(frozen=True)

    origin: Tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="网格最小角的世界坐标（米）")
    cell_xy: float = Field(..., gt=0, description="地面单元边长（米）")
    cell_z: float = Field(..., gt=0, description="垂直单元高度（米）")
    nx: int = Field(..., ge=1)
    ny: int = Field(..., ge=1)
    nz: int = Field(..., ge=1)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.ny, self.nz, self.nx

    @property
    def x_max(self) -> float:
        return self.origin[0] + self.nx * self.cell_xy

    @property
    def y_max(self) -> float:
        return self.origin[1] + self.ny * self.cell_xy

    @property
    def z_max(self) -> float:
        return self.origin[2] + self.nz * self.cell_z


class VoxelIndex(NamedTuple):
    iy: int
    iz: int
    ix: int


def _preset_grid(name: str, factor: int, z_max: float, nz: int, z_min: float = 0.0) -> GridSpec:
    ny, nx = PRESETS[name]
    if factor < 1:
        raise InvalidFactor(f"粗化系数必须 ≥ 1: {factor}")
    if ny % factor or nx % factor:
        raise NonDividingFactor(f"粗化系数 {factor} 不能整除 {name} 网格 {ny}×{nx}")
    if nz < 1 or z_max <= z_min:
        raise ConfigError(f"垂直范围无效: z_min={z_min}, z_max={z_max}, nz={nz}", field="grid")
    return GridSpec(
        origin=(0.0, 0.0, z_min),
        cell_xy=BASE_CELL * factor,
        cell_z=(z_max - z_min) / nz,
        nx=nx // factor,
        ny=ny // factor,
        nz=nz,
    )


def wildtrack_grid(factor: int = 1, z_max: float = DEFAULT_Z_MAX, nz: int = DEFAULT_NZ, z_min: float = 0.0) -> GridSpec:
    """12 m × 36 m，系数 1 时为 480×1440 个 2.5 cm 单元"""
    return _preset_grid("wildtrack", factor, z_max, nz, z_min)


def multiviewx_grid(factor: int = 1, z_max: float = DEFAULT_Z_MAX, nz: int = DEFAULT_NZ, z_min: float = 0.0) -> GridSpec:
    """16 m × 25 m，系数 1 时为 640×1000 个 2.5 cm 单元"""
    return _preset_grid("multiviewx", factor, z_max, nz, z_min)


def parse_grid(text: str) -> GridSpec:
    """解析 `wildtrack:4` / `multiviewx:2` 形式的网格描述"""
    name, _, factor_text = text.strip().lower().partition(":")
    if name not in PRESETS:
        raise ConfigError(f"未知的网格预设: {name}，支持: {', '.join(PRESETS)}", field="grid")
    try:
        factor = int(factor_text) if factor_text else 1
    except ValueError:
        raise ConfigError(f"网格粗化系数必须是整数: {factor_text}", field="grid")
    return _preset_grid(name, factor, DEFAULT_Z_MAX, DEFAULT_NZ)


def _check_index(grid: GridSpec, idx: VoxelIndex) -> None:
    iy, iz, ix = idx
    if not (0 <= ix < grid.nx and 0 <= iy < grid.ny and 0 <= iz < grid.nz):
        raise IndexOutOfGrid(f"体素索引 {tuple(idx)} 超出网格 {grid.shape}")


def voxel_center(grid: GridSpec, idx: VoxelIndex) -> np.ndarray:
    _check_index(grid, idx)
    iy, iz, ix = idx
    offset = np.array([(ix + 0.5) * grid.cell_xy, (iy + 0.5) * grid.cell_xy, (iz + 0.5) * grid.cell_z])
    return np.asarray(grid.origin, dtype=np.float64) + offset


def world_to_cell(grid: GridSpec, point: Sequence[float]) -> Optional[VoxelIndex]:
    """半开单元 [min, max)：落在网格外返回 None"""
    rel = np.asarray(point, dtype=np.float64) - np.asarray(grid.origin, dtype=np.float64)
    ix = math.floor(rel[0] / grid.cell_xy)
    iy = math.floor(rel[1] / grid.cell_xy)
    iz = math.floor(rel[2] / grid.cell_z)
    if 0 <= ix < grid.nx and 0 <= iy < grid.ny and 0 <= iz < grid.nz:
        return VoxelIndex(iy, iz, ix)
    return None


def voxel_centers(grid: GridSpec) -> np.ndarray:
    """所有体素中心，形状 (Y, Z, X, 3)"""
    ox, oy, oz = grid.origin
    xs = ox + (np.arange(grid.nx) + 0.5) * grid.cell_xy
    ys = oy + (np.arange(grid.ny) + 0.5) * grid.cell_xy
    zs = oz + (np.arange(grid.nz) + 0.5) * grid.cell_z
    yy, zz, xx = np.meshgrid(ys, zs, xs, indexing="ij")
    return np.stack([xx, yy, zz], axis=-1)


def cell_center_xy(grid: GridSpec, iy, ix) -> np.ndarray:
    """地面单元中心（米），支持数组索引"""
    x = grid.origin[0] + (np.asarray(ix, dtype=np.float64) + 0.5) * grid.cell_xy
    y = grid.origin[1] + (np.asarray(iy, dtype=np.float64) + 0.5) * grid.cell_xy
    return np.stack([x, y], axis=-1)
