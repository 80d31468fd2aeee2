import logging
from pathlib import Path
from typing import List

from pvhdet.commands import frame_name
from pvhdet.config import RunConfig
from pvhdet.services.io_service import (
    ensure_dir,
    silhouette_to_pgm,
    write_calibration,
    write_ground_truth,
    write_json,
    write_pgm,
)
from pvhdet.services.scene_service import ground_truth, make_scene, render_silhouette

logger = logging.getLogger(__name__)


def run(config: RunConfig) -> List[Path]:
    """
    生成合成场景并渲染每个相机的轮廓图

    输出：
    - silhouettes/frame_XXXX/<相机名>.pgm（8 位）
    - calibration.json、gt.jsonl、scene.json
    """
    grid = config.resolved_grid()
    scene_config = config.resolved_scene()
    out = ensure_dir(config.out_dir)
    outputs: List[Path] = []

    cameras = []
    gt = {}
    frames = []
    for frame in range(scene_config.frames):
        scene = make_scene(scene_config, grid, seed=config.seed, frame=frame)
        cameras = scene.cameras
        frame_dir = out / "silhouettes" / frame_name(frame)
        for index, cam in enumerate(scene.cameras):
            silhouette = render_silhouette(scene, index, supersample=config.supersample)
            path = frame_dir / f"{cam.name}.pgm"
            write_pgm(path, silhouette_to_pgm(silhouette))
            outputs.append(path)
        gt[frame] = ground_truth(scene)
        frames.append({
            "frame": frame,
            "pedestrians": [p.model_dump(mode="json") for p in scene.pedestrians],
        })

    calibration_path = out / "calibration.json"
    write_calibration(calibration_path, cameras)
    gt_path = out / "gt.jsonl"
    write_ground_truth(gt_path, gt)
    scene_path = out / "scene.json"
    write_json(scene_path, {
        "seed": config.seed,
        "frames": frames,
        "cameras": [cam.model_dump(by_alias=True, mode="json") for cam in cameras],
    })
    outputs += [calibration_path, gt_path, scene_path]

    logger.info(f"模拟完成: {scene_config.frames} 帧，{len(cameras)} 个相机，输出目录 {out}")
    return outputs
