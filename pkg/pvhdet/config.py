# pvhdet/config.py
"""运行配置

优先级：内置默认值 < 环境变量（.env） < --config 文件 < 命令行参数
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from pvhdet.exceptions import ConfigError
from pvhdet.services.grid_service import GridSpec, parse_grid
from pvhdet.services.io_service import read_json
from pvhdet.services.scene_service import SceneConfig

load_dotenv()

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"环境变量 {name} 必须是整数: {raw}", field=name)


class RunConfig(BaseModel):
    # 网格与场景
    grid: Union[GridSpec, str] = Field(default_factory=lambda: os.getenv("PVH_GRID", "wildtrack:4"),
                                       description="预设 wildtrack:<f> / multiviewx:<f> 或完整 GridSpec")
    scene: Optional[Union[SceneConfig, str]] = Field(None, description="场景 JSON 路径或内联场景配置")
    pedestrians: Optional[int] = Field(None, ge=0, description="覆盖场景中的随机行人数量")
    frames: Optional[int] = Field(None, ge=1, description="覆盖场景帧数")
    supersample: int = Field(1, ge=1, description="轮廓渲染的每轴超采样数")

    # 重建
    blur_factor: int = Field(1, ge=1, description="轮廓下采样系数")
    blur_sigma: Optional[float] = Field(None, ge=0, description="模糊标准差，默认 blur_factor/2；blur_factor 为 1 时默认不模糊")
    tau: float = Field(0.0, ge=0)
    min_views: int = Field(1, ge=1)
    occupancy: Literal["vh", "pvh"] = "pvh"
    fusion: Literal["none", "concat", "mult", "mult_add", "mult_concat"] = "mult_concat"
    bev: Literal["max_z", "mean_z", "sum_z"] = "max_z"
    augment: bool = False
    translation_noise: float = Field(0.0, ge=0, description="外参平移噪声模长（米）")
    features: Optional[str] = Field(None, description="特征图目录")
    dump_volumes: bool = False

    # 检测与评估
    threshold: float = Field(0.4, ge=0)
    nms_radius: int = Field(1, ge=1)
    smooth: float = Field(0.15, ge=0, description="解码前高斯平滑（米）")
    matching: Literal["optimal", "greedy"] = "optimal"
    distance: float = Field(0.5, gt=0, description="匹配距离阈值 t（米）")

    # 输入输出
    input: Optional[str] = Field(None, description="输入目录或文件，默认与 out 相同")
    out: str = Field(default_factory=lambda: os.getenv("PVH_OUT_DIR", "./runs"))
    detections: Optional[str] = None
    gt: Optional[str] = None
    kind: str = Field("bev", description="render 的输出类型：bev | overlay | silhouette")
    frame: int = Field(0, ge=0)
    seed: int = Field(default_factory=lambda: _env_int("PVH_SEED", 0))
    log_level: str = Field(default_factory=lambda: os.getenv("PVH_LOG_LEVEL", "INFO"))

    def resolved_grid(self) -> GridSpec:
        return self.grid if isinstance(self.grid, GridSpec) else parse_grid(self.grid)

    def resolved_scene(self) -> SceneConfig:
        if self.scene is None:
            scene = SceneConfig()
        elif isinstance(self.scene, SceneConfig):
            scene = self.scene
        else:
            scene = SceneConfig.model_validate(read_json(self.scene))
        update: Dict[str, Any] = {}
        if self.pedestrians is not None:
            update.update(random_count=self.pedestrians, pedestrians=None)
        if self.frames is not None:
            update["frames"] = self.frames
        return scene.model_copy(update=update) if update else scene

    @property
    def input_dir(self) -> Path:
        return Path(self.input or self.out)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def load_run_config(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    读取配置文件（可以是之前运行写出的 manifest.json，多余字段忽略），再用命令行参数覆盖
    :param overrides: 值为 None 的键视为未指定
    """
    data: Dict[str, Any] = {}
    if config_path:
        loaded = read_json(config_path)
        if not isinstance(loaded, dict):
            raise ConfigError(f"配置文件顶层必须是 JSON 对象: {config_path}")
        data.update(loaded)
        logger.info(f"已加载配置文件: {config_path}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate(data)
