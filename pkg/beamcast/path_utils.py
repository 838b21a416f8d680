#!/usr/bin/env python3
"""
Output path validation and atomic file writing
Interrupted runs must never leave a half-written checkpoint, CSV or dataset file
"""

import contextlib
import os
import tempfile
from collections.abc import Iterator
from pathlib import Path
from typing import Union


class PathValidator:
    """Validate paths and provide helpful error messages"""

    @staticmethod
    def validate_directory(path: Union[str, Path], must_exist: bool = True) -> tuple[bool, str]:
        """
        Validate that path points to a directory

        Returns: (is_valid, error_message)
        """
        path_obj = Path(path)

        if must_exist and not path_obj.exists():
            return False, f"Directory not found: {path}"

        if path_obj.exists() and not path_obj.is_dir():
            return False, f"Not a directory: {path}"

        return True, ""

    @staticmethod
    def validate_output_directory(path: Union[str, Path], force: bool = False) -> tuple[bool, str]:
        """
        Validate that path can receive fresh output

        A missing directory is fine (it will be created). An existing non-empty
        directory is refused unless force is set.

        Returns: (is_valid, error_message)
        """
        ok, message = PathValidator.validate_directory(path, must_exist=False)
        if not ok:
            return ok, message

        path_obj = Path(path)
        if path_obj.exists() and any(path_obj.iterdir()) and not force:
            return False, f"Directory not empty: {path} (use --force to overwrite)"

        return True, ""

    @staticmethod
    def validate_file(path: Union[str, Path]) -> tuple[bool, str]:
        """
        Validate that path points to an existing regular file

        Returns: (is_valid, error_message)
        """
        path_obj = Path(path)

        if not path_obj.exists():
            return False, f"File not found: {path}"

        if not path_obj.is_file():
            return False, f"Not a file: {path}"

        return True, ""


@contextlib.contextmanager
def atomic_path(path: Union[str, Path]) -> Iterator[Path]:
    """
    Yield a temporary sibling path; rename it onto `path` only if the block succeeds

    Example:
        with atomic_path(out / "final.bcp") as tmp:
            tmp.write_bytes(payload)
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            tmp.unlink()


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """Write bytes to path atomically (temp + rename)"""
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)
    return Path(path)


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write UTF-8 text to path atomically (temp + rename)"""
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8", newline="\n")
    return Path(path)
