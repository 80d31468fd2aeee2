"""子命令：每个模块一个 run(config) 入口，返回写出的文件列表"""
from pathlib import Path
from typing import List

from pvhdet.exceptions import DataConsistencyError


def relative_outputs(root: Path, paths: List[Path]) -> List[str]:
    return [Path(p).relative_to(root).as_posix() for p in paths]


def frame_number(name: str) -> int:
    """frame_0003 / frame_0003.f32 → 3"""
    stem = name.split(".")[0]
    try:
        return int(stem.split("_")[1])
    except (IndexError, ValueError):
        raise DataConsistencyError(f"无法从名称中解析帧号: {name}")


def frame_name(frame: int) -> str:
    return f"frame_{frame:04d}"
