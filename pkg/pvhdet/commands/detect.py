import logging
from pathlib import Path
from typing import List

from pvhdet.commands import frame_number
from pvhdet.config import RunConfig
from pvhdet.dependencies import get_detection_service
from pvhdet.exceptions import StorageError
from pvhdet.services.detection_service import bev_heatmap
from pvhdet.services.grid_service import GridSpec
from pvhdet.services.io_service import ensure_dir, read_raw, read_sidecar, write_detections

logger = logging.getLogger(__name__)


def run(config: RunConfig) -> List[Path]:
    """
    逐帧解码 bev/frame_XXXX.f32，写 detections.jsonl

    网格和压缩方式优先取 BEV 附属文件中的记录；sum_z 的 BEV 先除以层数
    """
    bev_dir = config.input_dir / "bev"
    files = sorted(bev_dir.glob("frame_*.f32")) if bev_dir.is_dir() else []
    if not files:
        raise StorageError(f"缺少 BEV 输入: {bev_dir}", path=bev_dir)

    service = get_detection_service(config)
    detections = {}
    for path in files:
        frame = frame_number(path.name)
        sidecar = read_sidecar(path)
        grid = GridSpec.model_validate(sidecar["grid"]) if "grid" in sidecar else config.resolved_grid()
        heat = bev_heatmap(read_raw(path), sidecar.get("bev", "max_z"), grid.nz)
        detections[frame] = service.detect(heat, grid)

    out = ensure_dir(config.out_dir)
    det_path = out / "detections.jsonl"
    write_detections(det_path, detections)
    total = sum(len(d) for d in detections.values())
    logger.info(f"检测完成: {len(files)} 帧，共 {total} 个检测，写入 {det_path}")
    return [det_path]
