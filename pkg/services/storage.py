"""Artifact files written by the pipeline, the CLI and the HTTP layer.

JSON documents use sorted keys and a fixed indent, tables a fixed float
format, so two runs under the same seeds produce byte-identical files.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; numpy values become Python numbers, non-finite floats None."""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(document: Any) -> str:
    return json.dumps(to_jsonable(document), sort_keys=True, indent=2) + "\n"


class ArtifactStore:
    """Directory of named artifacts; ``root=None`` keeps everything in memory."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self.documents: Dict[str, Any] = {}
        self.tables: Dict[str, pd.DataFrame] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def write_json(self, name: str, document: Any) -> Optional[Path]:
        document = to_jsonable(document)
        self.documents[name] = document
        if self.root is None:
            return None
        path = self.root / name
        path.write_text(dumps(document))
        logger.info("[STORAGE] wrote %s", path)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Optional[Path]:
        self.tables[name] = frame
        if self.root is None:
            return None
        path = self.root / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info("[STORAGE] wrote %s", path)
        return path

    def names(self) -> List[str]:
        return sorted(set(self.documents) | set(self.tables))


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())
