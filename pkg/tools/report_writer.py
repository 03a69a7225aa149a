# tools/report_writer.py

import atexit
import os
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd

FLOAT_FORMAT = "%.6f"


class JsonLinesWriter:
    """
    Buffered record writer producing one JSON object per line.

    Records are appended in write order; the buffer is flushed every
    `batch_size` records and on close.
    """

    def __init__(self, path: Union[str, Path], batch_size: int = 1000, columns: Optional[Sequence[str]] = None):
        self.path = Path(path)
        self.batch_size = batch_size
        self.columns = list(columns) if columns else None
        self.buffer: List[dict] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # start every run from an empty file so reruns are byte-identical
        self.path.write_text("", encoding="utf-8")
        atexit.register(self.close)

    def write(self, record: dict):
        self.buffer.append(record)
        if len(self.buffer) >= self.batch_size:
            self.flush()

    def write_many(self, records: Iterable[dict]):
        for record in records:
            self.write(record)

    def flush(self):
        if not self.buffer:
            return
        df = pd.DataFrame(self.buffer, columns=self.columns)
        text = df.to_json(orient="records", lines=True, double_precision=10)
        with open(self.path, "a", encoding="utf-8") as file:
            file.write(text if text.endswith("\n") else text + "\n")
        self.buffer.clear()

    def close(self):
        """Flush any remaining records before shutdown."""
        self.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_table_csv(df: pd.DataFrame, path: Union[str, Path], index: bool = True) -> Path:
    """Write a table with fixed float formatting so identical inputs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_table_csv(path: Union[str, Path], index: bool = True) -> pd.DataFrame:
    return pd.read_csv(path, index_col=0 if index else None)


def write_frames(frames, path: Union[str, Path]) -> Path:
    """Frames (n, channels) as comma-separated decimals, one frame per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(frames).to_csv(path, header=False, index=False, float_format="%.8f", lineterminator="\n")
    return path


def concat_tables(directory: Union[str, Path], exclude: Sequence[str] = ()) -> pd.DataFrame:
    """
    Stack every table CSV under `directory` (sorted by relative path) with a
    leading `source` column.
    """
    directory = Path(directory)
    frames = []
    for path in sorted(directory.rglob("*.csv")):
        rel = path.relative_to(directory).as_posix()
        if rel in exclude or os.path.getsize(path) == 0:
            continue
        df = pd.read_csv(path)
        df.insert(0, "source", rel)
        frames.append(df)
    if not frames:
        return pd.DataFrame(columns=["source"])
    return pd.concat(frames, ignore_index=True, sort=False)
