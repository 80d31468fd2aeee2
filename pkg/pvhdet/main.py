import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from pvhdet.commands import detect, evaluate, reconstruct, render, simulate
from pvhdet.config import load_run_config
from pvhdet.exceptions import PipelineError

logger = logging.getLogger(__name__)

COMMANDS = {
    "simulate": simulate.run,
    "reconstruct": reconstruct.run,
    "detect": detect.run,
    "eval": evaluate.run,
    "render": render.run,
}

# 这些参数不属于 RunConfig
_NON_CONFIG_ARGS = {"command", "config"}


def _config_arguments() -> argparse.ArgumentParser:
    """所有子命令共用的参数，与 RunConfig 字段一一对应；未给出的参数为 None，不覆盖配置文件"""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="RunConfig JSON 文件（也可以是 manifest.json）")
    parser.add_argument("--log-level", help="日志级别，默认读取 PVH_LOG_LEVEL")

    group = parser.add_argument_group("场景")
    group.add_argument("--grid", help="wildtrack:<f> 或 multiviewx:<f>")
    group.add_argument("--scene", help="场景配置 JSON 路径")
    group.add_argument("--pedestrians", type=int, help="随机行人数量")
    group.add_argument("--frames", type=int, help="帧数")
    group.add_argument("--supersample", type=int, help="轮廓渲染超采样数")
    group.add_argument("--seed", type=int)

    group = parser.add_argument_group("重建")
    group.add_argument("--blur-factor", type=int)
    group.add_argument("--blur-sigma", type=float)
    group.add_argument("--tau", type=float)
    group.add_argument("--min-views", type=int)
    group.add_argument("--occupancy", help="vh | pvh")
    group.add_argument("--fusion", help="none | concat | mult | mult_add | mult_concat")
    group.add_argument("--bev", help="max_z | mean_z | sum_z")
    group.add_argument("--augment", action="store_true", default=None)
    group.add_argument("--translation-noise", type=float, help="外参平移噪声（米）")
    group.add_argument("--features", help="特征图目录")
    group.add_argument("--dump-volumes", action="store_true", default=None)

    group = parser.add_argument_group("检测与评估")
    group.add_argument("--threshold", type=float)
    group.add_argument("--nms-radius", type=int)
    group.add_argument("--smooth", type=float, help="解码前高斯平滑（米）")
    group.add_argument("--matching", help="optimal | greedy")
    group.add_argument("--distance", type=float, help="匹配距离阈值（米）")

    group = parser.add_argument_group("输入输出")
    group.add_argument("--input", help="输入目录，默认与 --out 相同")
    group.add_argument("--out", help="输出目录，默认读取 PVH_OUT_DIR")
    group.add_argument("--detections", help="检测文件 (JSON lines)")
    group.add_argument("--gt", help="真值文件 (JSON lines)")
    group.add_argument("--kind", help="render 类型: bev | overlay | silhouette")
    group.add_argument("--frame", type=int, help="render 的帧号")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvhdet", description="多视角行人检测：概率视觉外壳流水线")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _config_arguments()
    subparsers.add_parser("simulate", parents=[common], help="生成合成场景、标定、真值和轮廓图")
    subparsers.add_parser("reconstruct", parents=[common], help="轮廓图 → 视觉外壳 → BEV")
    subparsers.add_parser("detect", parents=[common], help="BEV → 检测结果")
    subparsers.add_parser("eval", parents=[common], help="计算 MODA/MODP/Precision/Recall")
    subparsers.add_parser("render", parents=[common], help="渲染 BEV、叠加图或轮廓图")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("PVH_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_ARGS}
    try:
        config = load_run_config(args.config, overrides)
        outputs = COMMANDS[args.command](config)
    except PipelineError as e:
        location = f" (字段: {e.field})" if e.field else ""
        logger.error(f"{type(e).__name__}: {e.detail}{location}")
        return e.exit_code
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
        logger.error(f"配置验证失败，字段: {fields}")
        logger.error(f"详细错误: {e.errors()}")
        return 2
    except OSError as e:
        logger.error(f"文件读写失败: {e.filename or ''} {e.strerror or e}")
        return 3

    logger.info(f"{args.command} 完成，写出 {len(outputs)} 个文件")
    return 0


if __name__ == "__main__":
    sys.exit(main())
