"""CSV artifacts with a `#`-prefixed metadata header."""

import datetime
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
from prefect.logging import get_logger

from prefect_rbf_fmm._version import __version__
from prefect_rbf_fmm.geometry import Domain, PointSet

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
POINT_COLUMNS = ("x", "y")


def _header(metadata: Dict[str, object], timestamp: bool) -> str:
    lines = [f"# version: {__version__}"]
    lines += [f"# {key}: {value}" for key, value in metadata.items()]
    if timestamp:
        created = datetime.datetime.now(datetime.timezone.utc).isoformat()
        lines.append(f"# created: {created}")
    return "\n".join(lines) + "\n"


def write_frame(
    frame: pd.DataFrame,
    path: Union[str, Path],
    metadata: Optional[Dict[str, object]] = None,
    timestamp: bool = True,
) -> Path:
    """
    Writes a frame as CSV with floats at 17 significant digits, below a
    header of `# key: value` lines.

    Everything but the `# created:` line is a function of the frame and the
    metadata, so reruns with the same inputs differ only there.

    Args:
        frame: The data.
        path: Target file; parent directories are created.
        metadata: Header entries, e.g. the command line and seed.
        timestamp: Add the `# created:` line.

    Returns:
        The path written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as file:
        file.write(_header(metadata or {}, timestamp))
        frame.to_csv(file, index=False, float_format=FLOAT_FORMAT)
    logger.debug("Wrote %s rows to %s", len(frame), path)
    return path


def read_frame(path: Union[str, Path]) -> pd.DataFrame:
    """
    Reads a CSV written by `write_frame`, skipping the header lines.
    """
    return pd.read_csv(path, comment="#")


def read_metadata(path: Union[str, Path]) -> Dict[str, str]:
    """
    The `# key: value` header entries of a CSV written by `write_frame`.
    """
    metadata = {}
    with Path(path).open() as file:
        for line in file:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            metadata[key.strip()] = value.strip()
    return metadata


def write_points(
    ps: PointSet,
    path: Union[str, Path],
    metadata: Optional[Dict[str, object]] = None,
) -> Path:
    """
    Writes a point set with columns `x` (and `y` in two dimensions).
    """
    frame = pd.DataFrame(ps.points, columns=list(POINT_COLUMNS[: ps.d]))
    return write_frame(frame, path, metadata, timestamp=False)


def read_points(path: Union[str, Path], domain: Optional[Domain] = None) -> PointSet:
    """
    Reads a point set written by `write_points`, or any CSV with an `x`
    column and an optional `y` column.

    Raises:
        ValueError: If the file has no `x` column.
    """
    frame = read_frame(path)
    if "x" not in frame.columns:
        raise ValueError(f"{path} has no 'x' column")
    columns = [column for column in POINT_COLUMNS if column in frame.columns]
    return PointSet.from_points(frame[columns].to_numpy(dtype=float), domain=domain)


def read_vector(path: Union[str, Path], column: Optional[str] = None) -> np.ndarray:
    """
    Reads one column of a CSV as a float vector, the last column by default.
    """
    frame = read_frame(path)
    if column is None:
        column = frame.columns[-1]
    elif column not in frame.columns:
        raise ValueError(f"{path} has no {column!r} column")
    return frame[column].to_numpy(dtype=float)
