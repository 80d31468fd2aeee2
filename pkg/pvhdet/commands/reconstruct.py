import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from pvhdet.commands import frame_name, frame_number, relative_outputs
from pvhdet.config import RunConfig
from pvhdet.dependencies import get_reconstruction_service
from pvhdet.exceptions import StorageError
from pvhdet.services.detection_service import bev_heatmap
from pvhdet.services.io_service import (
    bev_to_pgm,
    ensure_dir,
    pgm_to_silhouette,
    read_calibration,
    read_pgm,
    read_raw,
    write_json,
    write_pgm,
    write_raw,
)

logger = logging.getLogger(__name__)


def _list_frame_dirs(root: Path) -> List[Path]:
    if not root.is_dir():
        raise StorageError(f"找不到轮廓图目录: {root}", path=root)
    try:
        dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("frame_"))
    except OSError as e:
        raise StorageError(f"无法读取目录 {root}: {e.strerror or e}", path=root)
    if not dirs:
        raise StorageError(f"轮廓图目录中没有帧: {root}", path=root)
    return dirs


def _load_silhouettes(frame_dir: Path) -> Dict[str, np.ndarray]:
    return {p.stem: pgm_to_silhouette(read_pgm(p)) for p in sorted(frame_dir.glob("*.pgm"))}


def _load_features(root: Path, frame: int, names: Iterable[str]) -> Dict[str, np.ndarray]:
    """优先读取 <dir>/frame_XXXX/<相机名>.f32，其次 <dir>/<相机名>.f32（各帧共用）"""
    features = {}
    for name in names:
        per_frame = root / frame_name(frame) / f"{name}.f32"
        shared = root / f"{name}.f32"
        path = per_frame if per_frame.exists() else shared
        if not path.exists():
            raise StorageError(f"找不到相机 {name} 的特征图: {per_frame} 或 {shared}", path=shared)
        features[name] = read_raw(path)
    return features


def run(config: RunConfig) -> List[Path]:
    """
    轮廓 → 拉取 → VH/PVH → （可选）特征融合 → BEV

    输出：bev/frame_XXXX.{pgm,f32,json}、可选的 bev/fused_XXXX.f32、
    可选的 volumes/frame_XXXX_<占据类型>.f32，以及 manifest.json
    """
    grid = config.resolved_grid()
    source = config.input_dir
    out = ensure_dir(config.out_dir)
    service = get_reconstruction_service(config)

    calibration = read_calibration(source / "calibration.json")
    cameras = service.prepare_cameras(calibration)
    features_root: Optional[Path] = Path(config.features) if config.features else None

    outputs: List[Path] = []
    for frame_dir in _list_frame_dirs(source / "silhouettes"):
        frame = frame_number(frame_dir.name)
        silhouettes = _load_silhouettes(frame_dir)
        features = _load_features(features_root, frame, cameras) if features_root else None

        result = service.run_frame(frame, silhouettes, cameras, grid, features)

        base = out / "bev" / frame_name(frame)
        write_pgm(base.with_suffix(".pgm"), bev_to_pgm(bev_heatmap(result.bev, config.bev, grid.nz)))
        write_raw(base, result.bev, grid=grid.model_dump(mode="json"), frame=frame,
                  occupancy=config.occupancy, bev=config.bev)
        outputs += [base.with_suffix(".pgm"), base.with_suffix(".f32"), base.with_suffix(".json")]

        if result.fused_bev is not None:
            fused = out / "bev" / f"fused_{frame:04d}"
            write_raw(fused, result.fused_bev, grid=grid.model_dump(mode="json"), frame=frame,
                      fusion=config.fusion, bev=config.bev)
            outputs += [fused.with_suffix(".f32"), fused.with_suffix(".json")]

        if config.dump_volumes:
            volume = out / "volumes" / f"{frame_name(frame)}_{config.occupancy}"
            write_raw(volume, result.occupancy, grid=grid.model_dump(mode="json"), frame=frame,
                      layout="CYZX")
            outputs += [volume.with_suffix(".f32"), volume.with_suffix(".json")]

    manifest_path = out / "manifest.json"
    manifest = config.model_dump(mode="json")
    manifest["input"] = str(source)
    manifest["command"] = "reconstruct"
    manifest["outputs"] = relative_outputs(out, outputs)
    write_json(manifest_path, manifest)
    outputs.append(manifest_path)

    logger.info(f"重建完成: {len(outputs)} 个文件写入 {out}")
    return outputs
