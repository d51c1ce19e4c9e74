"""Binary file formats and the corpus manifest.

Three containers share the same byte-level conventions (little-endian,
float32 payloads):

  * feature files   — magic ``DKF1``, u32 rows T, u32 cols D, T*D float32
  * tensor bundles  — magic ``DKSM``/``DKMB``/``DKDM``, u32 version, u32
    tensor count, then per tensor: u16 name length, utf-8 name, u8 ndim,
    u32 dims, float32 data (model and memory persistence)
  * manifest        — line-oriented text, tab-separated
    (session_id, role, index, relative_path), LF endings
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"DKF1"
CONTAINER_VERSION = 1


class FileFormatError(ValueError):
    pass


def write_features(path, matrix: np.ndarray) -> None:
    """Write a T x D float matrix as a DKF1 feature file."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = fh.read(rows * cols * 4)
    if len(data) != rows * cols * 4:
        raise FileFormatError(f"{path}: truncated feature payload")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()


def write_tensors(path, magic: bytes, tensors: dict) -> None:
    """Write named float tensors under a 4-byte magic (versioned container)."""
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_tensors(path, magic: bytes) -> dict:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        got = fh.read(4)
        if got != magic:
            raise FileFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CONTAINER_VERSION:
            raise FileFormatError(f"{path}: unsupported container version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = fh.read(n * 4)
            if len(data) != n * 4:
                raise FileFormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return tensors


@dataclass(frozen=True)
class ManifestEntry:
    session_id: str
    role: str  # near | far | sig | truth
    index: int
    relative_path: str


@dataclass(frozen=True)
class CorpusManifest:
    root: Path
    entries: tuple[ManifestEntry, ...]

    @property
    def session_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.session_id, None)
        return list(seen)

    def select(self, session_id: str, role: str) -> list[ManifestEntry]:
        picked = [e for e in self.entries if e.session_id == session_id and e.role == role]
        return sorted(picked, key=lambda e: e.index)

    def path(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.relative_path


def manifest_to_text(manifest: CorpusManifest) -> str:
    lines = [
        f"{e.session_id}\t{e.role}\t{e.index}\t{e.relative_path}"
        for e in manifest.entries
    ]
    return "".join(line + "\n" for line in lines)


def write_manifest(manifest: CorpusManifest, path=None) -> Path:
    path = Path(path) if path is not None else Path(manifest.root) / "manifest.tsv"
    path.write_text(manifest_to_text(manifest), encoding="utf-8", newline="\n")
    return path


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    entries = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FileFormatError(f"{path}:{line_no}: expected 4 tab-separated fields")
        entries.append(ManifestEntry(fields[0], fields[1], int(fields[2]), fields[3]))
    return CorpusManifest(root=path.parent, entries=tuple(entries))
