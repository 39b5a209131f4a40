"""
Corpus CSV files: one row per timestep with header t,ax,ay,az,mode,
windows delimited by consecutive 40-row groups.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from engine.errors import FormatError
from models.stream_window import N_AXES, WINDOW_LENGTH, StreamWindow

COLUMNS = ["t", "ax", "ay", "az", "mode"]
CHUNK_WINDOWS = 250


def _frame(windows):
    samples = np.concatenate([w.samples for w in windows])
    t = np.concatenate([w.first_timestep + np.arange(WINDOW_LENGTH) for w in windows])
    modes = np.repeat([np.nan if w.mode is None else w.mode for w in windows], WINDOW_LENGTH)
    frame = pd.DataFrame({"t": t, "ax": samples[:, 0], "ay": samples[:, 1], "az": samples[:, 2]})
    frame["mode"] = pd.array(modes, dtype="Int64")
    return frame


def write_corpus(path, windows, chunk_windows=CHUNK_WINDOWS):
    """
    Write windows to a corpus CSV, a chunk at a time.

    Args:
        path: Output file
        windows: Iterable of StreamWindows

    Returns:
        Number of windows written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    chunk = []
    with open(path, "w", newline="") as handle:
        handle.write(",".join(COLUMNS) + "\n")
        for window in windows:
            chunk.append(window)
            if len(chunk) == chunk_windows:
                _frame(chunk).to_csv(handle, header=False, index=False, float_format="%.9g")
                written += len(chunk)
                chunk = []
        if chunk:
            _frame(chunk).to_csv(handle, header=False, index=False, float_format="%.9g")
            written += len(chunk)
    logging.info(f"Wrote {written} windows to {path}")
    return written


def read_corpus(path, chunk_windows=CHUNK_WINDOWS):
    """
    Stream windows from a corpus CSV without loading the whole file.

    Args:
        path: Corpus file

    Yields:
        StreamWindow (mode None where the column is empty)
    """
    path = Path(path)
    try:
        reader = pd.read_csv(path, chunksize=chunk_windows * WINDOW_LENGTH,
                             dtype={"t": "int64", "ax": "float32", "ay": "float32", "az": "float32", "mode": "Int64"})
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path} is empty", 0) from None
    except (ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"{path}: {exc}", 0) from exc
    row = 0
    with reader:
        for chunk in _chunks(reader, path):
            if list(chunk.columns) != COLUMNS:
                raise FormatError(f"{path}: expected columns {COLUMNS}, got {list(chunk.columns)}", 0)
            if len(chunk) % WINDOW_LENGTH:
                raise FormatError(f"{path}: {row + len(chunk)} rows is not a multiple of {WINDOW_LENGTH}",
                                  row + len(chunk) - len(chunk) % WINDOW_LENGTH)
            samples = chunk[["ax", "ay", "az"]].to_numpy(dtype=np.float32).reshape(-1, WINDOW_LENGTH, N_AXES)
            modes = chunk["mode"].to_numpy(dtype="float64", na_value=np.nan).reshape(-1, WINDOW_LENGTH)
            t = chunk["t"].to_numpy().reshape(-1, WINDOW_LENGTH)
            for i in range(samples.shape[0]):
                window_modes = modes[i]
                if not (np.all(np.isnan(window_modes)) or np.all(window_modes == window_modes[0])):
                    raise FormatError(f"{path}: mixed modes inside one window", row + i * WINDOW_LENGTH)
                mode = None if np.isnan(window_modes[0]) else int(window_modes[0])
                yield StreamWindow(samples[i], mode, int(t[i, 0]) // WINDOW_LENGTH)
            row += len(chunk)


def _chunks(reader, path):
    try:
        yield from reader
    except (ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_corpus_arrays(path):
    """
    Load a whole corpus for vectorized evaluation.

    Returns:
        (samples (n, 40, 3) float32, modes (n,) int64 with -1 for unlabelled windows)
    """
    samples, modes = [], []
    for window in read_corpus(path):
        samples.append(window.samples)
        modes.append(-1 if window.mode is None else window.mode)
    if not samples:
        raise FormatError(f"{path} holds no windows", 0)
    return np.stack(samples), np.asarray(modes, dtype=np.int64)
