import os
import json
import tempfile
from contextlib import contextmanager


@contextmanager
def atomic_open(path, mode="wb", encoding=None):
    """Write to a temporary sibling of `path`; move it into place only on success."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode, encoding=encoding) as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_bytes(path, payload: bytes):
    with atomic_open(path, "wb") as f:
        f.write(payload)


def atomic_write_text(path, text: str):
    with atomic_open(path, "w", encoding="utf-8") as f:
        f.write(text)


def dumps_line(record) -> str:
    """One JSONL line with stable key order and repr-exact floats."""
    return json.dumps(record, sort_keys=False, separators=(", ", ": ")) + "\n"


def parse_int_list(text: str):
    """'1, 2,3' -> [1, 2, 3]"""
    return [int(part) for part in text.replace(" ", "").split(",") if part]
