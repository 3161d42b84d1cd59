#!/usr/bin/env python3
"""
Artifact Store
- CSV / JSON / Markdown 原子写入 (tmp + fsync + replace)
- CSV 读回 (round-trip 精度)
- 输出目录 manifest.json 与运行历史
"""

import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MAX_HISTORY_ENTRIES = 50
TIME_FORMAT = "%.6f"


class ArtifactError(ValueError):
    """产物内容非法 (含 NaN/Inf)"""
    pass


def _atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    try:
        with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except OSError:
        if os.path.exists(tmp_path):
            try:
                os.remove(tmp_path)
            except OSError:
                pass
        raise


def save_csv(df: pd.DataFrame, path: str) -> str:
    """
    写 CSV: time 列固定 6 位小数, 其余浮点按 repr 精确写出

    Args:
        df: 数据表
        path: 目标文件

    Returns:
        写入的路径

    Raises:
        ArtifactError: 数值列含 NaN/Inf
    """
    numeric = df.select_dtypes(include=[np.number])
    if numeric.size and not np.all(np.isfinite(numeric.to_numpy(dtype=float))):
        bad = [c for c in numeric.columns if not np.all(np.isfinite(numeric[c].to_numpy(dtype=float)))]
        raise ArtifactError(f"{os.path.basename(path)} 含 NaN/Inf: {bad}")
    out = df.copy()
    if "time" in out.columns:
        out["time"] = out["time"].map(lambda t: TIME_FORMAT % t)
    _atomic_write_text(path, out.to_csv(index=False, lineterminator="\n"))
    logger.info(f"写入 {path} ({len(df)} 行)")
    return path


def load_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_json(data: Dict[str, Any], path: str) -> str:
    _atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2) + "\n")
    logger.info(f"写入 {path}")
    return path


def write_text(text: str, path: str) -> str:
    _atomic_write_text(path, text)
    logger.info(f"写入 {path}")
    return path


def load_manifest(output_dir: str) -> Dict[str, Any]:
    path = os.path.join(output_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        return {"history": []}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"读取 manifest 失败, 重新创建: {e}")
        return {"history": []}
    if not isinstance(data, dict):
        return {"history": []}
    data.setdefault("history", [])
    return data


def record_run(output_dir: str, command: str,
               config_path: Optional[str] = None,
               seed: Optional[int] = None,
               mode: Optional[str] = None,
               files: Optional[List[str]] = None,
               success: bool = True,
               error: Optional[str] = None) -> Dict[str, Any]:
    """
    追加一条运行记录到 manifest.json

    Args:
        output_dir: 输出目录
        command: 子命令
        config_path: 配置文件
        seed: 随机种子
        mode: 更新模式
        files: 本次写入的文件 (相对输出目录)
        success: 是否成功
        error: 错误信息

    Returns:
        更新后的 manifest
    """
    manifest = load_manifest(output_dir)
    entry: Dict[str, Any] = {
        "timestamp": datetime.now().isoformat(),
        "command": command,
    }
    if config_path:
        entry["config"] = config_path
    if seed is not None:
        entry["seed"] = seed
    if mode:
        entry["mode"] = mode
    if files:
        entry["files"] = [os.path.relpath(p, output_dir) for p in files]
    entry["status"] = "ok" if success else "failed"
    if error:
        entry["error"] = error[:500]

    manifest["history"].append(entry)
    if len(manifest["history"]) > MAX_HISTORY_ENTRIES:
        manifest["history"] = manifest["history"][-MAX_HISTORY_ENTRIES:]
    manifest["last_run"] = entry
    write_json(manifest, os.path.join(output_dir, MANIFEST_NAME))
    return manifest
