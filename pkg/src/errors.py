"""
工具包统一异常定义
命令行根据异常类型映射退出码：ValidationError → 2，OSError → 3，NumericalError → 4
"""

from typing import Optional


class PulseMetrologyError(Exception):
    """所有工具包异常的基类"""


class ValidationError(PulseMetrologyError, ValueError):
    """输入参数或前置条件不满足"""


class WindowTooNarrowError(ValidationError):
    """采样窗口过窄，场的尾部没有衰减到可忽略的水平"""


class NonUniformGridError(ValidationError):
    """延迟网格不是均匀网格"""


class GainTooLargeError(ValidationError):
    """增益过大，违反小泵浦功率近似（gain² < 0.1）"""


class ConfigError(ValidationError):
    """配置文件校验失败"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"配置项 '{key}': {message}")


class TraceFormatError(ValidationError):
    """CSV 迹线文件格式错误"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message)


class NumericalError(PulseMetrologyError, RuntimeError):
    """数值计算失败"""


class GridTooCoarseError(NumericalError):
    """求积网格过粗，半步长检验偏差超出容差"""


class NoPeakError(NumericalError):
    """迹线在背景之上没有峰"""


class FlankNotBracketedError(NumericalError):
    """扫描范围不足，半高点没有被包围"""


class FitError(NumericalError):
    """拟合不收敛"""


class DegenerateDataError(FitError):
    """数据没有对比度，无法拟合"""
