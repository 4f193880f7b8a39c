"""
Utilities for data persistence: feature files, weights and CSV outputs
"""

import struct
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from src.hierarchy.params import ModelParams
from src.models.feature_sequence import FeatureSequence
from src.utils.logger import logger

MAGIC = b"HFM1"
HEADER = struct.Struct("<4sIIf")
LABEL_TRAILER = struct.Struct("<II")
LABEL_SENTINEL = 0xFFFFFFFE
BINARY_SUFFIX = ".hfm"
CSV_SUFFIX = ".csv"
FEATURE_SUFFIXES = (BINARY_SUFFIX, CSV_SUFFIX)
HEADS_KEY = "__heads__"

PathLike = Union[str, Path]


class FeatureFileError(Exception):
    """Exception raised for unreadable feature files"""

    code = 13

    def __init__(self, path: PathLike, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class BadMagicError(FeatureFileError):
    """File does not start with the feature magic"""

    code = 10


class TruncatedFeatureError(FeatureFileError):
    """File ends before its header says it should"""

    code = 11


class NonFiniteFeatureError(FeatureFileError):
    """File holds NaN or infinite values"""

    code = 12


class MalformedFeatureError(FeatureFileError):
    """Header or trailer values make no sense"""

    code = 13


class WeightsFileError(OSError):
    """Exception raised for unreadable weight archives"""
    pass


def _check_values(path: PathLike, values: np.ndarray, hop_ms: float) -> None:
    if not np.isfinite(hop_ms) or hop_ms <= 0:
        raise MalformedFeatureError(path, f"hop must be a positive number, got {hop_ms}")
    if not np.isfinite(values).all():
        raise NonFiniteFeatureError(path, "feature values must be finite")


def _parse_binary(path: PathLike, data: bytes) -> FeatureSequence:
    if len(data) < HEADER.size:
        if MAGIC.startswith(data[: len(MAGIC)]):
            raise TruncatedFeatureError(path, f"header needs {HEADER.size} bytes, file has {len(data)}")
        raise BadMagicError(path, f"expected magic {MAGIC!r}")

    magic, frames, width, hop_ms = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(path, f"expected magic {MAGIC!r}, found {magic!r}")
    if frames < 1 or width < 1:
        raise MalformedFeatureError(path, f"header declares {frames}x{width} frames")

    payload_end = HEADER.size + 4 * frames * width
    if len(data) < payload_end:
        raise TruncatedFeatureError(path, f"payload needs {payload_end} bytes, file has {len(data)}")

    values = np.frombuffer(data, dtype="<f4", count=frames * width, offset=HEADER.size)
    values = values.astype(np.float64).reshape(frames, width)
    hop = float(hop_ms)
    _check_values(path, values, hop)

    trailer = data[payload_end:]
    label = None
    if trailer:
        if len(trailer) < LABEL_TRAILER.size:
            raise TruncatedFeatureError(path, f"label trailer needs {LABEL_TRAILER.size} bytes, found {len(trailer)}")
        if len(trailer) > LABEL_TRAILER.size:
            raise MalformedFeatureError(path, f"{len(trailer) - LABEL_TRAILER.size} unexpected trailing bytes")
        sentinel, label = LABEL_TRAILER.unpack(trailer)
        if sentinel != LABEL_SENTINEL:
            raise MalformedFeatureError(path, f"label sentinel {sentinel:#x} is not {LABEL_SENTINEL:#x}")

    return FeatureSequence(values=values, hop_ms=hop, label=label, name=Path(path).stem)


def _parse_csv(path: Path) -> FeatureSequence:
    with open(path, "r") as f:
        header = f.readline().strip()
    fields = [part.strip() for part in header.split(",")] if header else []
    if len(fields) not in (3, 4):
        raise MalformedFeatureError(path, "first row must be T,d,hop_ms with an optional label")
    try:
        frames, width, hop = int(fields[0]), int(fields[1]), float(fields[2])
        label = int(fields[3]) if len(fields) == 4 and fields[3] else None
    except ValueError as e:
        raise MalformedFeatureError(path, f"bad header row: {e}") from e
    if frames < 1 or width < 1:
        raise MalformedFeatureError(path, f"header declares {frames}x{width} frames")

    try:
        frame = pd.read_csv(path, skiprows=1, header=None, dtype=np.float64, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise TruncatedFeatureError(path, f"expected {frames} rows, found none")
    except (ValueError, pd.errors.ParserError) as e:
        raise MalformedFeatureError(path, f"could not parse values: {e}") from e

    if frame.shape[1] != width:
        raise MalformedFeatureError(path, f"rows have {frame.shape[1]} values, header says {width}")
    if frame.shape[0] < frames:
        raise TruncatedFeatureError(path, f"expected {frames} rows, found {frame.shape[0]}")
    if frame.shape[0] > frames:
        raise MalformedFeatureError(path, f"expected {frames} rows, found {frame.shape[0]}")

    values = frame.to_numpy()
    _check_values(path, values, hop)
    return FeatureSequence(values=values, hop_ms=hop, label=label, name=path.stem)


def load_features(path: PathLike) -> FeatureSequence:
    """
    Read a feature file, binary (.hfm) or CSV (.csv)

    Args:
        path: File to read

    Returns:
        FeatureSequence named after the file stem

    Raises:
        FeatureFileError: Subclass naming what is wrong with the file
        FileNotFoundError: If the file does not exist
    """
    file_path = Path(path)
    if file_path.suffix.lower() == CSV_SUFFIX:
        sequence = _parse_csv(file_path)
    else:
        sequence = _parse_binary(file_path, file_path.read_bytes())
    logger.debug(f"Loaded {sequence}")
    return sequence


def save_features(seq: FeatureSequence, path: PathLike) -> Path:
    """Write a feature file; the suffix picks the format. Values are stored as 32-bit floats in binary files"""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)

    if file_path.suffix.lower() == CSV_SUFFIX:
        header = f"{seq.frames},{seq.width},{seq.hop_ms!r}" + ("" if seq.label is None else f",{seq.label}")
        with open(file_path, "w", newline="") as f:
            f.write(header + "\n")
            pd.DataFrame(seq.values).to_csv(f, header=False, index=False, float_format="%.17g")
    else:
        parts = [
            HEADER.pack(MAGIC, seq.frames, seq.width, seq.hop_ms),
            seq.values.astype("<f4").tobytes(order="C"),
        ]
        if seq.label is not None:
            parts.append(LABEL_TRAILER.pack(LABEL_SENTINEL, seq.label))
        file_path.write_bytes(b"".join(parts))

    logger.debug(f"Saved {seq} to {file_path}")
    return file_path


def load_feature_dir(directory: PathLike) -> List[FeatureSequence]:
    """All feature files in a directory, sorted by name"""
    folder = Path(directory)
    if not folder.is_dir():
        raise FileNotFoundError(f"feature directory not found: {folder}")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in FEATURE_SUFFIXES)
    sequences = [load_features(p) for p in files]
    logger.info(f"Loaded {len(sequences)} feature files from {folder}")
    return sequences


def load_labels(path: PathLike) -> Dict[str, int]:
    """Labels CSV with columns file,label; files are matched by stem"""
    frame = pd.read_csv(path)
    missing = {"file", "label"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: labels table lacks columns {sorted(missing)}")
    return {Path(str(name)).stem: int(label) for name, label in zip(frame["file"], frame["label"])}


def load_subjects(path: PathLike) -> Dict[str, str]:
    """Subject of each file from a CSV with columns file,subject"""
    frame = pd.read_csv(path, dtype={"subject": str})
    missing = {"file", "subject"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: subjects table lacks columns {sorted(missing)}")
    return {Path(str(name)).stem: subject for name, subject in zip(frame["file"], frame["subject"])}


def save_params(params: ModelParams, path: PathLike) -> Path:
    """Write parameters to a numpy .npz archive"""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "wb") as f:
        np.savez(f, **{HEADS_KEY: np.array(params.heads)}, **params.arrays)
    logger.info(f"Saved {params} to {file_path}")
    return file_path


def load_params(path: PathLike) -> ModelParams:
    """Read parameters written by save_params"""
    try:
        with np.load(path, allow_pickle=False) as archive:
            if HEADS_KEY not in archive.files:
                raise WeightsFileError(f"{path}: not a hierform weights archive")
            heads = int(archive[HEADS_KEY])
            arrays = {name: archive[name] for name in archive.files if name != HEADS_KEY}
    except (ValueError, EOFError) as e:
        raise WeightsFileError(f"{path}: could not read weights: {e}") from e
    return ModelParams(arrays, heads)


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write a table as CSV, creating the parent directory"""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(file_path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {file_path}")
    return file_path
