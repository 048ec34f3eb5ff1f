"""Output file helpers: every artifact is written to a temp sibling, then renamed."""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import Union

import pandas as pd

from config import settings


def atomic_write(path: Union[str, Path], data: Union[bytes, str]) -> Path:
    """Write data so that `path` is either the old file or the complete new one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=str(path.parent))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    """CSV with a fixed float format, so identical frames give identical bytes."""
    buffer = io.StringIO()
    df.to_csv(buffer, index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator='\n')
    return atomic_write(path, buffer.getvalue())
