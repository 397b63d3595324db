"""
结果输出模块。
CSV 浮点数以 17 位有效数字写出，JSON 由 Pydantic 模型序列化，数值失败时写出错误记录。
"""

import csv
import io
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, TypeAdapter

from src.api.models import ErrorDetail, ErrorRecord
from src.utils.logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    logger.info(f"结果已写入 {path}")


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def write_csv(header: Sequence[str], rows: Sequence[Sequence[float]], out: Optional[str]) -> None:
    """
    写出 CSV 表格

    Args:
        header: 列名
        rows: 每行的数值
        out: 输出路径，None 时写到标准输出
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(x) if isinstance(x, float) else x for x in row])
    _emit(buffer.getvalue(), out)


def write_json(record: Any, out: Optional[str]) -> None:
    """写出单个模型或模型列表"""
    if isinstance(record, BaseModel):
        text = record.model_dump_json(indent=2)
    elif isinstance(record, list):
        text = _dump_list(record)
    else:
        raise TypeError(f"无法序列化 {type(record).__name__}")
    _emit(text + "\n", out)


def _dump_list(records: List[BaseModel]) -> str:
    if not records:
        return "[]"
    return TypeAdapter(List[type(records[0])]).dump_json(records, indent=2).decode()


def error_path(out: Optional[str]) -> Path:
    return Path(f"{out}.error.json") if out else Path("ffmono.error.json")


def write_error(command: str, error: Exception, out: Optional[str],
                failures: Optional[List[Dict[str, Any]]] = None) -> Path:
    """
    写出数值失败的错误记录 <out>.error.json

    Args:
        command: 命令名
        error: 异常
        out: 结果输出路径
        failures: 逐点失败记录

    Returns:
        Path: 错误记录路径
    """
    record = ErrorRecord(
        error=ErrorDetail(type=type(error).__name__, message=str(error), command=command),
        failures=failures or [],
    )
    path = error_path(out)
    path.write_text(record.model_dump_json(indent=2) + "\n", encoding='utf-8')
    logger.info(f"错误记录已写入 {path}")
    return path
