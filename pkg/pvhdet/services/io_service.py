# pvhdet/services/io_service.py
"""文件格式：标定 JSON、Netpbm 图像（PGM/PPM）、原始 float32 数据 + JSON 附属文件、JSON lines"""
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from pvhdet.exceptions import DataConsistencyError, StorageError
from pvhdet.services.camera_service import CameraModel
from pvhdet.services.detection_service import Detection

logger = logging.getLogger(__name__)

_CAMERA_LIST = TypeAdapter(List[CameraModel])


class DetectionRecord(BaseModel):
    frame: int
    x: float
    y: float
    # 缺省时按真值文件读取，分数记为 1
    score: float = Field(1.0, ge=0.0, le=1.0)


class GroundTruthRecord(BaseModel):
    frame: int
    x: float
    y: float


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"无法创建目录 {path}: {e.strerror or e}", path=path)
    return path


def _write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    try:
        ensure_dir(path.parent)
        path.write_bytes(payload)
    except OSError as e:
        raise StorageError(f"写入文件失败 {path}: {e.strerror or e}", path=path)


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        raise StorageError(f"读取文件失败 {path}: {e.strerror or e}", path=path)


def write_text(path, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


def write_json(path, payload) -> None:
    write_text(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataConsistencyError(f"JSON 文件格式错误 {path}: {e}")


# ---------- Netpbm（OpenCV 编解码） ----------

def _encode_image(path, image: np.ndarray, ext: str) -> None:
    try:
        ok, buffer = cv2.imencode(ext, image)
    except cv2.error as e:
        raise DataConsistencyError(f"图像编码失败 {path}: {e}")
    if not ok:
        raise DataConsistencyError(f"图像编码失败 {path}")
    _write_bytes(path, buffer.tobytes())


def _decode_image(path) -> np.ndarray:
    data = _read_bytes(path)
    try:
        image = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    except cv2.error as e:
        raise DataConsistencyError(f"无法解析图像 {path}: {e}")
    if image is None:
        raise DataConsistencyError(f"无法解析图像（文件头错误或像素数据不完整）: {path}")
    return image


def write_pgm(path, image: np.ndarray) -> None:
    """uint8 → 8 位 P5；uint16 → 16 位 P5"""
    image = np.asarray(image)
    dtype = np.uint16 if image.dtype == np.uint16 else np.uint8
    _encode_image(path, np.ascontiguousarray(image, dtype=dtype), ".pgm")


def write_ppm(path, rgb: np.ndarray) -> None:
    bgr = np.ascontiguousarray(np.asarray(rgb, dtype=np.uint8)[:, :, ::-1])
    _encode_image(path, bgr, ".ppm")


def read_pgm(path) -> np.ndarray:
    image = _decode_image(path)
    if image.ndim != 2:
        raise DataConsistencyError(f"不是单通道 PGM 文件: {path}")
    return image


def read_ppm(path) -> np.ndarray:
    image = _decode_image(path)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataConsistencyError(f"不是三通道 PPM 文件: {path}")
    return np.ascontiguousarray(image[:, :, ::-1])


def silhouette_to_pgm(silhouette: np.ndarray) -> np.ndarray:
    return np.round(np.clip(silhouette, 0.0, 1.0) * 255.0).astype(np.uint8)


def pgm_to_silhouette(image: np.ndarray) -> np.ndarray:
    scale = 65535.0 if image.dtype == np.uint16 else 255.0
    return (image.astype(np.float32) / scale).astype(np.float32)


def bev_to_pgm(bev: np.ndarray) -> np.ndarray:
    """取第一个通道，[0,1] 映射到 16 位；第 0 行对应最大 Y"""
    heat = np.asarray(bev)
    if heat.ndim == 3:
        heat = heat[0]
    return np.flipud(np.round(np.clip(heat, 0.0, 1.0) * 65535.0)).astype(np.uint16)


# ---------- 原始 float32 数据 ----------

def write_raw(path, array: np.ndarray, **meta) -> None:
    """写 `<name>.f32`（小端 float32）和同名 `.json` 附属文件"""
    path = Path(path).with_suffix(".f32")
    arr = np.ascontiguousarray(array, dtype="<f4")
    _write_bytes(path, arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "float32", "byteorder": "little"}
    sidecar.update(meta)
    write_json(path.with_suffix(".json"), sidecar)


def read_sidecar(path) -> dict:
    sidecar = read_json(Path(path).with_suffix(".json"))
    if not isinstance(sidecar, dict) or "shape" not in sidecar:
        raise DataConsistencyError(f"附属文件缺少 shape 字段: {Path(path).with_suffix('.json')}")
    return sidecar


def read_raw(path) -> np.ndarray:
    path = Path(path).with_suffix(".f32")
    sidecar = read_sidecar(path)
    shape = tuple(int(s) for s in sidecar.get("shape", []))
    data = _read_bytes(path)
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise DataConsistencyError(f"{path} 大小 {len(data)} 字节与附属文件声明的形状 {shape} 不符")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


# ---------- 标定 ----------

def write_calibration(path, cameras: List[CameraModel]) -> None:
    write_json(path, [cam.model_dump(by_alias=True, mode="json") for cam in cameras])


def read_calibration(path) -> List[CameraModel]:
    try:
        return _CAMERA_LIST.validate_python(read_json(path))
    except ValidationError as e:
        raise DataConsistencyError(f"标定文件 {path} 无效: {e.error_count()} 个字段错误\n{e}")


# ---------- JSON lines ----------

def write_detections(path, detections: Dict[int, List[Detection]]) -> None:
    lines = [
        DetectionRecord(frame=frame, x=d.x, y=d.y, score=d.score).model_dump_json()
        for frame in sorted(detections)
        for d in detections[frame]
    ]
    write_text(path, "".join(line + "\n" for line in lines))


def write_ground_truth(path, ground_truth: Dict[int, List[Tuple[float, float]]]) -> None:
    lines = [
        GroundTruthRecord(frame=frame, x=x, y=y).model_dump_json()
        for frame in sorted(ground_truth)
        for x, y in ground_truth[frame]
    ]
    write_text(path, "".join(line + "\n" for line in lines))


def _read_lines(path, model):
    try:
        text = _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataConsistencyError(f"{path} 不是 UTF-8 文本: 第 {e.start} 字节 {e.reason}")
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as e:
            raise DataConsistencyError(f"{path} 第 {lineno} 行格式错误: {e.errors()[0]['msg']}")
    return records


def read_detections(path) -> Dict[int, List[Detection]]:
    frames: Dict[int, List[Detection]] = defaultdict(list)
    for r in _read_lines(path, DetectionRecord):
        frames[r.frame].append(Detection(x=r.x, y=r.y, score=r.score))
    return dict(frames)


def read_ground_truth(path) -> Dict[int, List[Tuple[float, float]]]:
    """真值文件也接受带 score 的检测文件（score 被忽略）"""
    frames: Dict[int, List[Tuple[float, float]]] = defaultdict(list)
    for r in _read_lines(path, GroundTruthRecord):
        frames[r.frame].append((r.x, r.y))
    return dict(frames)
