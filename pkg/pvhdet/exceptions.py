"""领域错误定义

每个错误携带 exit_code 和 detail，作用类似 HTTPException 的 status_code/detail：
main.py 的统一错误处理器据此决定进程退出码。
"""
from typing import Optional


class PipelineError(ValueError):
    """所有领域错误的基类"""

    exit_code: int = 1

    def __init__(self, detail: str, *, field: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        self.field = field


# 配置错误（退出码 2）
class ConfigError(PipelineError):
    exit_code = 2


class InvalidScale(ConfigError):
    pass


class NonDividingFactor(ConfigError):
    pass


class InvalidFactor(ConfigError):
    pass


class UnknownMode(ConfigError):
    pass


class PlacementFailure(ConfigError):
    pass


class InvalidCamera(ConfigError):
    pass


# 文件读写错误（退出码 3）
class StorageError(PipelineError):
    exit_code = 3

    def __init__(self, detail: str, *, path=None):
        super().__init__(detail)
        self.path = str(path) if path is not None else None


# 数据一致性错误（退出码 4）
class DataConsistencyError(PipelineError):
    exit_code = 4


class DimensionMismatch(DataConsistencyError):
    pass


class DegenerateProjection(DataConsistencyError):
    pass


class IndexOutOfGrid(DataConsistencyError):
    pass


class NoGroundTruth(DataConsistencyError):
    pass


class FrameMismatch(DataConsistencyError):
    pass


class CalibrationMismatch(DataConsistencyError):
    pass
