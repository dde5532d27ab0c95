"""
Label-volume file pairs and series manifests.

A label volume is stored as a JSON sidecar
    {"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"origin_mm":[ox,oy,oz],
     "dtype":"u16","order":"x-fastest"}
plus a raw little-endian file of nx*ny*nz unsigned 16-bit labels.

Series manifest CSV: patient_id,day,volume_path,sidecar_path (paths relative
to the manifest's directory unless absolute).
"""

import io
import json
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from trajcore.errors import ParseError
from trajcore.types import LabelVolume

PathLike = Union[str, Path]
MANIFEST_COLUMNS = ("patient_id", "day", "volume_path", "sidecar_path")


def read_label_volume(volume_path: PathLike, sidecar_path: PathLike) -> LabelVolume:
    """Load a label volume from its raw file and JSON sidecar."""
    with open(sidecar_path, "r", encoding="utf-8") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError("invalid sidecar JSON", context=f"{sidecar_path}: {e}")

    for key in ("dims", "spacing_mm", "origin_mm"):
        if key not in meta:
            raise ParseError(f"sidecar missing '{key}'", context=str(sidecar_path))
    if meta.get("dtype", "u16") != "u16":
        raise ParseError(f"unsupported dtype {meta.get('dtype')!r}", context=str(sidecar_path))
    if meta.get("order", "x-fastest") != "x-fastest":
        raise ParseError(f"unsupported voxel order {meta.get('order')!r}", context=str(sidecar_path))

    labels = np.fromfile(volume_path, dtype="<u2")
    nx, ny, nz = (int(d) for d in meta["dims"])
    if labels.size != nx * ny * nz:
        raise ParseError(f"raw file holds {labels.size} labels, expected {nx * ny * nz}",
                         context=str(volume_path))
    return LabelVolume(dims=(nx, ny, nz), spacing_mm=tuple(meta["spacing_mm"]),
                       origin_mm=tuple(meta["origin_mm"]), labels=labels)


def write_label_volume(volume: LabelVolume, volume_path: PathLike, sidecar_path: PathLike):
    """Write a label volume as raw u16 plus sidecar."""
    meta = {
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing_mm),
        "origin_mm": list(volume.origin_mm),
        "dtype": "u16",
        "order": "x-fastest",
    }
    volume.labels.astype("<u2").tofile(volume_path)
    with open(sidecar_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)


def read_series_manifest(manifest_path: PathLike) -> Dict[str, List[Tuple[int, Path, Path]]]:
    """
    Read a series manifest.

    Returns:
        {patient_id: [(day, volume_path, sidecar_path), ...]} sorted by day
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    frame = pd.read_csv(io.BytesIO(manifest_path.read_bytes()), dtype=str, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError("manifest missing column(s)", context=", ".join(missing))

    series: Dict[str, List[Tuple[int, Path, Path]]] = {}
    for pos, row in enumerate(frame.to_dict("records")):
        try:
            day = int(row["day"])
        except ValueError:
            raise ParseError(f"day is not an integer: {row['day']!r}", row=pos + 2)
        volume_path = base / row["volume_path"]
        sidecar_path = base / row["sidecar_path"]
        series.setdefault(row["patient_id"].strip(), []).append((day, volume_path, sidecar_path))
    return {pid: sorted(items, key=lambda item: item[0]) for pid, items in sorted(series.items())}


def write_series_manifest(manifest_path: PathLike, rows: List[Tuple[str, int, str, str]]):
    frame = pd.DataFrame(rows, columns=list(MANIFEST_COLUMNS))
    Path(manifest_path).write_bytes(frame.to_csv(index=False, lineterminator="\n").encode("utf-8"))
