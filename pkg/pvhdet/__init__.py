"""基于概率视觉外壳的多视角行人检测几何流水线"""

__version__ = "1.0.0"
