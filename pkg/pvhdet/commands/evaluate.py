import logging
from pathlib import Path
from typing import List, Set

from pvhdet.config import RunConfig
from pvhdet.dependencies import get_detection_service
from pvhdet.exceptions import FrameMismatch
from pvhdet.services.detection_service import EvalReport, format_table
from pvhdet.services.io_service import ensure_dir, read_detections, read_ground_truth, read_json, write_json

logger = logging.getLogger(__name__)


def _scene_frames(gt_path: Path) -> Set[int]:
    """真值旁边的 scene.json 记录了全部帧（包括没有行人的帧）"""
    scene_path = gt_path.parent / "scene.json"
    if not scene_path.exists():
        return set()
    scene = read_json(scene_path)
    return {int(f["frame"]) for f in scene.get("frames", [])}


def evaluate_files(config: RunConfig) -> EvalReport:
    det_path = Path(config.detections) if config.detections else config.out_dir / "detections.jsonl"
    gt_path = Path(config.gt) if config.gt else config.input_dir / "gt.jsonl"

    detections = read_detections(det_path)
    ground_truth = read_ground_truth(gt_path)
    frames = set(ground_truth) | _scene_frames(gt_path)

    unknown = sorted(set(detections) - frames)
    if unknown:
        raise FrameMismatch(f"检测文件 {det_path} 中的帧 {unknown} 在真值 {gt_path} 中不存在")

    service = get_detection_service(config)
    return service.evaluate(detections, {f: ground_truth.get(f, []) for f in sorted(frames)})


def run(config: RunConfig) -> List[Path]:
    report = evaluate_files(config)
    out = ensure_dir(config.out_dir)
    eval_path = out / "eval.json"
    write_json(eval_path, report.model_dump())
    print(format_table(report))
    logger.info(f"评估完成: MODA={report.moda:.4f}, MODP={report.modp:.4f}，写入 {eval_path}")
    return [eval_path]
