"""
Tab-separated table reading shared by the manifest and label-entry loaders.
Rows keep their physical line numbers so that errors point at the file.
"""

import csv
import io
from typing import List, Sequence, Tuple

import pandas as pd

from src.exceptions import DataError, ManifestError


def read_tab_rows(path: str, fields: Sequence[str], comments: bool = False) -> List[Tuple[int, List[str]]]:
    """
    Read a headerless tab-separated file.

    Args:
        path (str): File to read
        fields (sequence): Expected field names; shorter rows are padded with empty strings
        comments (bool): Skip lines whose first field starts with '#'

    Returns:
        list: (1-based line number, field values) for every non-blank, non-comment line
    """
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise DataError(f"'{path}' is not UTF-8 text: {e}")
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        return []

    width = max(len(fields), max(line.count("\t") + 1 for line in lines))
    try:
        frame = pd.read_csv(io.StringIO(text), sep="\t", header=None, names=list(range(width)), index_col=False,
                            dtype=str, keep_default_na=False, skip_blank_lines=False, quoting=csv.QUOTE_NONE)
    except pd.errors.ParserError as e:
        raise ManifestError(f"Malformed table {path}: {e}")
    frame = frame.fillna("")

    rows = []
    for line, values in enumerate(frame.itertuples(index=False, name=None), start=1):
        values = [str(value) for value in values]
        if not any(value.strip() for value in values):
            continue
        if comments and values[0].lstrip().startswith("#"):
            continue
        used = max(i for i, value in enumerate(values) if value.strip()) + 1
        if used > len(fields):
            raise ManifestError(f"expected {len(fields)} tab-separated fields, found {used}", line=line)
        rows.append((line, values[:len(fields)]))
    return rows
