# pvhdet/services/detection_service.py
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import gaussian_filter, maximum_filter
from scipy.optimize import linear_sum_assignment

from pvhdet.exceptions import ConfigError, DataConsistencyError, DimensionMismatch, NoGroundTruth, UnknownMode
from pvhdet.services.grid_service import GridSpec, cell_center_xy
from pvhdet.services.hull_service import BEV_MODES

logger = logging.getLogger(__name__)

MATCHING_METHODS = ("optimal", "greedy")
DEFAULT_DISTANCE = 0.5


class Detection(BaseModel):
    x: float
    y: float
    score: float = Field(..., ge=0.0, le=1.0, description="热力图峰值")

    @property
    def position(self) -> Tuple[float, float]:
        return self.x, self.y


class MatchResult(BaseModel):
    pairs: List[Tuple[int, int, float]] = Field(default_factory=list, description="(检测序号, 真值序号, 距离)")
    tp_count: int = 0
    fp_count: int = 0
    fn_count: int = 0
    n_gt: int = 0


class EvalReport(BaseModel):
    moda: float
    modp: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    n_gt: int


def smooth_heatmap(heatmap: np.ndarray, sigma_cells: float) -> np.ndarray:
    """NMS 之前的高斯平滑，sigma 以网格单元计，0 表示不平滑"""
    if sigma_cells <= 0:
        return np.asarray(heatmap, dtype=np.float32)
    smoothed = gaussian_filter(np.asarray(heatmap, dtype=np.float64), sigma=sigma_cells, truncate=3.0, mode="constant")
    return np.clip(smoothed, 0.0, 1.0).astype(np.float32)


def bev_heatmap(bev: np.ndarray, mode: str, nz: int) -> np.ndarray:
    """BEV 换算为 [0,1] 热力图：sum_z 除以层数，max_z / mean_z 原样返回"""
    if mode not in BEV_MODES:
        raise UnknownMode(f"未知的 BEV 压缩方式: {mode}，支持: {', '.join(BEV_MODES)}")
    heat = np.asarray(bev, dtype=np.float32)
    return heat / np.float32(nz) if mode == "sum_z" else heat


def _nms_peaks(heatmap: np.ndarray, threshold: float, radius: int) -> np.ndarray:
    """窗口内最大且不小于阈值；窗口内等值时只保留线性序号最小者"""
    size = 2 * radius + 1
    window_max = maximum_filter(heatmap, size=size, mode="constant", cval=-np.inf)
    peaks = (heatmap >= window_max) & (heatmap >= threshold)

    ny, nx = heatmap.shape
    padded = np.pad(heatmap, radius, mode="constant", constant_values=-np.inf)
    for dy in range(-radius, 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx >= 0:
                break
            neighbour = padded[radius + dy:radius + dy + ny, radius + dx:radius + dx + nx]
            peaks &= ~(neighbour == heatmap)
    return peaks


def decode_detections(
        heatmap: np.ndarray,
        grid: GridSpec,
        threshold: float = 0.4,
        nms_radius: int = 1,
        offset_map: Optional[np.ndarray] = None,
) -> List[Detection]:
    """
    从地面热力图解码检测结果

    Args:
        heatmap: 1×ny×nx 或 ny×nx
        grid: 地面网格
        threshold: 分数阈值
        nms_radius: NMS 窗口半径（单元）
        offset_map: 可选的 2×ny×nx 亚单元偏移（单位：单元，通道顺序 dx, dy）

    Returns:
        按分数降序排列的检测列表
    """
    heat = np.asarray(heatmap, dtype=np.float64)
    if heat.ndim == 3:
        if heat.shape[0] != 1:
            raise DimensionMismatch(f"热力图必须是单通道，实际通道数为 {heat.shape[0]}")
        heat = heat[0]
    if heat.shape != (grid.ny, grid.nx):
        raise DimensionMismatch(f"热力图尺寸 {heat.shape} 与网格 {(grid.ny, grid.nx)} 不一致")
    if offset_map is not None and np.shape(offset_map) != (2, grid.ny, grid.nx):
        raise DimensionMismatch(f"偏移图尺寸 {np.shape(offset_map)} 应为 {(2, grid.ny, grid.nx)}")
    if nms_radius < 1:
        raise ConfigError(f"NMS 半径必须 ≥ 1: {nms_radius}", field="nms_radius")
    if not np.isfinite(heat).all() or heat.min() < 0.0 or heat.max() > 1.0:
        raise DataConsistencyError(
            f"热力图取值必须在 [0, 1] 内，实际范围 [{np.nanmin(heat):.4g}, {np.nanmax(heat):.4g}]")

    peaks = _nms_peaks(heat, threshold, nms_radius)
    iy, ix = np.nonzero(peaks)
    scores = heat[iy, ix]
    positions = cell_center_xy(grid, iy, ix).reshape(-1, 2)
    if offset_map is not None:
        offsets = np.asarray(offset_map, dtype=np.float64)
        positions = positions + np.stack([offsets[0, iy, ix], offsets[1, iy, ix]], axis=-1) * grid.cell_xy

    order = np.argsort(-scores, kind="stable")
    return [
        Detection(x=float(positions[k, 0]), y=float(positions[k, 1]), score=float(scores[k]))
        for k in order
    ]


def _as_points(items) -> np.ndarray:
    pts = [d.position if isinstance(d, Detection) else tuple(d) for d in items]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def match_detections(dets, gts, t: float = DEFAULT_DISTANCE, method: str = "optimal") -> MatchResult:
    """
    一对一匹配，只接受距离 < t 的配对

    optimal：先最大化匹配数，再最小化总距离；greedy：每次取全局最近的空闲配对
    """
    if method not in MATCHING_METHODS:
        raise UnknownMode(f"未知的匹配方式: {method}，支持: {', '.join(MATCHING_METHODS)}")
    if not t > 0:
        raise ConfigError(f"距离阈值必须为正: {t}", field="t")

    det_pts, gt_pts = _as_points(dets), _as_points(gts)
    n_det, n_gt = len(det_pts), len(gt_pts)
    pairs: List[Tuple[int, int, float]] = []

    if n_det and n_gt:
        dist = np.linalg.norm(det_pts[:, None, :] - gt_pts[None, :, :], axis=-1)
        gated = dist < t
        if method == "optimal":
            # 门限外的代价大于任意合法配对总和，保证先最大化匹配数
            big = t * (min(n_det, n_gt) + 1)
            rows, cols = linear_sum_assignment(np.where(gated, dist, big))
            pairs = [(int(i), int(j), float(dist[i, j])) for i, j in zip(rows, cols) if gated[i, j]]
        else:
            used_det, used_gt = set(), set()
            for i, j in sorted(zip(*np.nonzero(gated)), key=lambda ij: (dist[ij], ij[0], ij[1])):
                if i in used_det or j in used_gt:
                    continue
                used_det.add(i)
                used_gt.add(j)
                pairs.append((int(i), int(j), float(dist[i, j])))
        pairs.sort()

    tp = len(pairs)
    return MatchResult(pairs=pairs, tp_count=tp, fp_count=n_det - tp, fn_count=n_gt - tp, n_gt=n_gt)


def merge_matches(results: Sequence[MatchResult]) -> MatchResult:
    """多帧结果合并：计数相加，配对拼接"""
    merged = MatchResult()
    for r in results:
        merged.pairs.extend(r.pairs)
        merged.tp_count += r.tp_count
        merged.fp_count += r.fp_count
        merged.fn_count += r.fn_count
        merged.n_gt += r.n_gt
    return merged


def moda(m: MatchResult) -> float:
    if m.n_gt == 0:
        raise NoGroundTruth("没有真值行人，MODA 无定义")
    return 1.0 - (m.fp_count + m.fn_count) / m.n_gt


def modp(m: MatchResult, t: float = DEFAULT_DISTANCE) -> float:
    if m.tp_count == 0:
        return 0.0
    return sum(1.0 - d / t for _, _, d in m.pairs) / m.tp_count


def precision_recall(m: MatchResult) -> Tuple[float, float]:
    detections = m.tp_count + m.fp_count
    precision = m.tp_count / detections if detections else 1.0
    if m.n_gt == 0:
        raise NoGroundTruth("没有真值行人，Recall 无定义")
    return precision, m.tp_count / m.n_gt


def build_report(m: MatchResult, t: float = DEFAULT_DISTANCE) -> EvalReport:
    precision, recall = precision_recall(m)
    return EvalReport(
        moda=moda(m),
        modp=modp(m, t),
        precision=precision,
        recall=recall,
        tp=m.tp_count,
        fp=m.fp_count,
        fn=m.fn_count,
        n_gt=m.n_gt,
    )


def format_table(report: EvalReport) -> str:
    rows = [
        ("MODA", f"{report.moda * 100:.2f}%"),
        ("MODP", f"{report.modp * 100:.2f}%"),
        ("Precision", f"{report.precision * 100:.2f}%"),
        ("Recall", f"{report.recall * 100:.2f}%"),
        ("TP", str(report.tp)),
        ("FP", str(report.fp)),
        ("FN", str(report.fn)),
        ("N_gt", str(report.n_gt)),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value.rjust(10)}" for name, value in rows)


class DetectionService:
    """热力图解码 + 评估"""

    def __init__(
            self,
            threshold: float = 0.4,
            nms_radius: int = 1,
            smooth: float = 0.15,
            distance: float = DEFAULT_DISTANCE,
            matching: str = "optimal",
    ):
        """
        :param smooth: 解码前的高斯平滑标准差（米）
        :param distance: 匹配距离阈值 t（米）
        """
        if matching not in MATCHING_METHODS:
            raise UnknownMode(f"未知的匹配方式: {matching}，支持: {', '.join(MATCHING_METHODS)}")
        self.threshold = threshold
        self.nms_radius = nms_radius
        self.smooth = smooth
        self.distance = distance
        self.matching = matching

    def detect(self, bev: np.ndarray, grid: GridSpec) -> List[Detection]:
        heat = np.asarray(bev)
        if heat.ndim == 3:
            heat = heat[0]
        heat = smooth_heatmap(heat, self.smooth / grid.cell_xy)
        detections = decode_detections(heat, grid, self.threshold, self.nms_radius)
        logger.info(f"解码得到 {len(detections)} 个检测")
        return detections

    def evaluate(
            self,
            detections: Dict[int, List[Detection]],
            ground_truth: Dict[int, List[Tuple[float, float]]],
    ) -> EvalReport:
        """按帧匹配后汇总；检测中出现真值没有的帧由调用方负责报错"""
        results = []
        for frame in sorted(ground_truth):
            dets = detections.get(frame, [])
            if not dets:
                logger.warning(f"第 {frame} 帧没有检测结果")
            results.append(match_detections(dets, ground_truth[frame], self.distance, self.matching))
        return build_report(merge_matches(results), self.distance)
