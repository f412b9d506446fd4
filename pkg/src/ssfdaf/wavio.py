"""Mono WAV reading/writing and atomic file output."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager

import numpy as np
from scipy.io import wavfile


def read_wav(path):
    """Read a mono WAV file as float64 in [-1, 1).

    Supports 16-bit integer and 32-bit float PCM.
    """
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: cannot read WAV file ({exc})") from None
    if data.ndim != 1:
        raise ValueError(f"{path}: expected a mono file, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(float) / 32768.0, int(sr)
    if data.dtype == np.float32:
        return data.astype(float), int(sr)
    raise ValueError(f"{path}: unsupported sample format {data.dtype} (use 16-bit PCM or 32-bit float)")


@contextmanager
def atomic_open(path, mode="w", **kw):
    """Write to a temporary file in the target directory, rename on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(path, data, sample_rate: int) -> None:
    """Write float samples as 32-bit float PCM, atomically."""
    with atomic_open(path, "wb") as fh:
        wavfile.write(fh, int(sample_rate), np.asarray(data, dtype=np.float32))


def write_text(path, text: str) -> None:
    with atomic_open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
