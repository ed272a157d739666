import json, re
from pathlib import Path
from typing import Any, Union

import pandas as pd

from decorators import logger, timeit_log

PathLike = Union[str, Path]

# 17 significant digits: every double survives a write/read cycle
FLOAT_FORMAT = "%.16e"

def _slugify_filename(raw: str) -> str:
    """
    Turn an arbitrary name into a safe directory/file name:
    - lowercases
    - replaces spaces with '_'
    - strips non-alphanumeric/_/-
    - ensures not empty
    """
    s = raw.strip().lower()
    s = s.replace(" ", "_")
    s = re.sub(r"[^a-z0-9_\-]+", "", s)
    return s or "run"

def point_dirname(L: int, N: int) -> str:
    return _slugify_filename(f"L{L:02d}_N{N:03d}")

def save_json(data: Any, path: PathLike, *, indent: int = 2) -> Path:
    save_path = Path(path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    json_text = json.dumps(data, indent=indent, ensure_ascii=False)
    save_path.write_text(json_text, encoding="utf-8")
    return save_path

def load_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))

@timeit_log
def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    save_path = Path(path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(save_path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")
    logger.info(f"wrote {save_path} ({len(frame)} rows)")
    return save_path

def read_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return pd.read_csv(path, float_precision="round_trip", encoding="utf-8")

def search_run_dirs(root: PathLike) -> list[Path]:
    """Every directory under root holding a manifest.json, sorted."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p.parent for p in root.rglob("manifest.json"))
