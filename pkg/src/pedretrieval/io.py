"""On-disk formats.

Descriptor file (galleries and query batches), little-endian::

    magic "GLDV" | version u16 | reserved u16 | dim u32 | count u32
    count x dim float32, row-major
    count x u64 sample ids
    optional label table: "LBLS" | kind u8 (0 text, 1 integer)
        then per sample: length u32 (0xFFFFFFFF = no label) | UTF-8 bytes

Feature-map tensor::

    magic "GLFM" | version u16 | reserved u16 | channels u32 | height u32 | width u32
    channels x height x width float32

Index: a directory with ``manifest.json`` and ``index.bin``; the manifest
records the gallery checksum and the offset, dtype and shape of every
array in the blob.

Keypoint CSV columns: ``id,x1,y1,x2,y2,x3,y3,x4,y4,W,H`` (upper head,
neck, left hip, right hip, image width and height).

Results: one line per query, ``query_id id:distance id:distance ...`` with
distances at 9 significant digits.

All writers go through a temporary file and an atomic rename.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Gallery, validate_gallery
from .errors import ChecksumMismatch, DataFormatError
from .geometry import Box, KeypointSet, PartBoxes
from .pca import PcaModel
from .retrieval import Query, RankList
from .tdc import Group, GroupIndex

DESCRIPTOR_MAGIC = b"GLDV"
TENSOR_MAGIC = b"GLFM"
LABEL_MAGIC = b"LBLS"
FORMAT_VERSION = 1
INDEX_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_TENSOR_HEADER = struct.Struct("<4sHHIII")
_NO_LABEL = 0xFFFFFFFF
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "index.bin"


@contextmanager
def atomic_write(path, mode: str = "wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- descriptor files ---------------------------------------------------------


def _encode_labels(labels: Sequence) -> bytes:
    present = [lab for lab in labels if lab is not None]
    is_int = bool(present) and all(isinstance(lab, (int, np.integer)) and not isinstance(lab, bool) for lab in present)
    buf = bytearray(LABEL_MAGIC)
    buf.append(1 if is_int else 0)
    for lab in labels:
        if lab is None:
            buf += struct.pack("<I", _NO_LABEL)
            continue
        raw = str(int(lab) if is_int else lab).encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
    return bytes(buf)


def encode_descriptors(ids, descriptors, labels: Sequence | None = None) -> bytes:
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise DataFormatError("descriptors must be a 2-D array")
    count, dim = x.shape
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (count,) or (ids < 0).any():
        raise DataFormatError("need one non-negative id per descriptor")
    out = [_HEADER.pack(DESCRIPTOR_MAGIC, FORMAT_VERSION, 0, dim, count)]
    out.append(x.astype("<f4").tobytes())
    out.append(ids.astype("<u8").tobytes())
    if labels is not None:
        if len(labels) != count:
            raise DataFormatError("need one label slot per descriptor")
        out.append(_encode_labels(labels))
    return b"".join(out)


def decode_descriptors(data: bytes) -> tuple[np.ndarray, np.ndarray, tuple | None]:
    """Return ``(ids, descriptors as float64, labels or None)``."""
    if len(data) < _HEADER.size:
        raise DataFormatError("descriptor file shorter than its header")
    magic, version, _reserved, dim, count = _HEADER.unpack_from(data, 0)
    if magic != DESCRIPTOR_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported descriptor format version {version}")
    off = _HEADER.size
    n_float = dim * count
    end = off + 4 * n_float + 8 * count
    if len(data) < end:
        raise DataFormatError("descriptor file truncated")
    x = np.frombuffer(data, dtype="<f4", count=n_float, offset=off).reshape(count, dim).astype(np.float64)
    off += 4 * n_float
    ids_u = np.frombuffer(data, dtype="<u8", count=count, offset=off)
    if count and ids_u.max() > np.iinfo(np.int64).max:
        raise DataFormatError("sample id exceeds the signed 64-bit range")
    ids = ids_u.astype(np.int64)
    off = end

    labels = None
    if off < len(data):
        if data[off:off + 4] != LABEL_MAGIC or off + 5 > len(data):
            raise DataFormatError("unexpected trailing bytes after sample ids")
        kind = data[off + 4]
        if kind not in (0, 1):
            raise DataFormatError(f"unknown label kind {kind}")
        off += 5
        out = []
        for _ in range(count):
            if off + 4 > len(data):
                raise DataFormatError("label table truncated")
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if n == _NO_LABEL:
                out.append(None)
                continue
            if off + n > len(data):
                raise DataFormatError("label table truncated")
            text = data[off:off + n].decode("utf-8")
            off += n
            out.append(int(text) if kind == 1 else text)
        if off != len(data):
            raise DataFormatError("unexpected trailing bytes after label table")
        labels = tuple(out)
    return ids, x, labels


def write_gallery(path, gallery: Gallery) -> None:
    data = encode_descriptors(gallery.ids, gallery.descriptors, gallery.labels)
    with atomic_write(path) as fh:
        fh.write(data)


def read_gallery(path) -> Gallery:
    ids, x, labels = decode_descriptors(Path(path).read_bytes())
    g = Gallery(ids, x, labels)
    validate_gallery(g).raise_if_invalid()
    return g


def write_queries(path, queries: Sequence[Query]) -> None:
    if not queries:
        raise DataFormatError("no queries to write")
    ids = [q.query_id if q.query_id is not None else i for i, q in enumerate(queries)]
    labels = [q.label for q in queries]
    x = np.stack([q.descriptor for q in queries])
    data = encode_descriptors(ids, x, None if all(l is None for l in labels) else labels)
    with atomic_write(path) as fh:
        fh.write(data)


def read_queries(path) -> list[Query]:
    ids, x, labels = decode_descriptors(Path(path).read_bytes())
    if not np.all(np.isfinite(x)):
        raise DataFormatError("query descriptors have non-finite entries")
    return [
        Query(x[i], label=None if labels is None else labels[i], query_id=int(ids[i]))
        for i in range(len(ids))
    ]


# -- feature-map tensors ------------------------------------------------------


def write_feature_maps(path, stack) -> None:
    s = np.asarray(stack)
    if s.ndim != 3:
        raise DataFormatError("feature maps must be (channels, height, width)")
    with atomic_write(path) as fh:
        fh.write(_TENSOR_HEADER.pack(TENSOR_MAGIC, FORMAT_VERSION, 0, *s.shape))
        fh.write(s.astype("<f4").tobytes())


def read_feature_maps(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _TENSOR_HEADER.size:
        raise DataFormatError("tensor file shorter than its header")
    magic, version, _r, m, h, w = _TENSOR_HEADER.unpack_from(data, 0)
    if magic != TENSOR_MAGIC or version != FORMAT_VERSION:
        raise DataFormatError("not a version-1 feature-map tensor")
    n = m * h * w
    if len(data) != _TENSOR_HEADER.size + 4 * n:
        raise DataFormatError("tensor payload size does not match header")
    return np.frombuffer(data, dtype="<f4", offset=_TENSOR_HEADER.size).reshape(m, h, w).astype(np.float64)


# -- keypoints and boxes ------------------------------------------------------

KEYPOINT_COLUMNS = ("id", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4", "W", "H")


def read_keypoints(path) -> list[tuple[str, KeypointSet]]:
    """Rows of ``(image id, KeypointSet)``; keypoints are clamped into the frame."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "id"):
                continue
            if len(row) != len(KEYPOINT_COLUMNS):
                raise DataFormatError(f"{path}:{lineno}: expected {len(KEYPOINT_COLUMNS)} columns, got {len(row)}")
            try:
                v = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            w, h = v[8], v[9]
            if w != int(w) or h != int(h):
                raise DataFormatError(f"{path}:{lineno}: image size must be integral")
            kp = KeypointSet((v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7]), int(h), int(w))
            out.append((row[0].strip(), kp.clamped()))
    return out


def write_part_boxes(path, rows: Iterable[tuple[str, PartBoxes]]) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "region", "x0", "y0", "x1", "y1", "alpha"])
    for image_id, pb in rows:
        for region, box in (("head", pb.head), ("upper_body", pb.upper_body), ("lower_body", pb.lower_body)):
            w.writerow([image_id, region, *(f"{c:.6g}" for c in box.as_tuple()), f"{pb.alpha:.6g}"])
    with atomic_write(path, "w") as fh:
        fh.write(buf.getvalue())


# -- results ------------------------------------------------------------------


def format_results_line(query_id, ranklist: RankList) -> str:
    parts = [str(query_id)] + [f"{sid}:{dist:.9g}" for sid, dist in ranklist.pairs()]
    return " ".join(parts)


def write_results(path, query_ids: Sequence, ranklists: Sequence[RankList]) -> None:
    text = "".join(format_results_line(q, r) + "\n" for q, r in zip(query_ids, ranklists))
    with atomic_write(path, "w") as fh:
        fh.write(text)


def read_results(path) -> list[tuple[str, list[tuple[int, float]]]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        head, *pairs = line.split()
        try:
            ranked = [(int(sid), float(d)) for sid, d in (p.split(":") for p in pairs)]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed id:distance pair") from None
        out.append((head, ranked))
    return out


# -- index --------------------------------------------------------------------


def save_index(directory, index: GroupIndex) -> None:
    offsets = np.zeros(len(index) + 1, dtype=np.int64)
    np.cumsum(index.group_sizes(), out=offsets[1:])
    arrays = {
        "group_offsets": offsets.astype("<u8"),
        "group_positions": np.concatenate([g.positions for g in index.groups]).astype("<u8"),
        "group_dissimilarity": np.array([g.dissimilarity for g in index.groups], dtype="<f8"),
        "group_descriptors_full": index.group_descriptors_full.astype("<f8"),
        "group_descriptors_reduced": index.group_descriptors_reduced.astype("<f8"),
        "pca_mean": index.pca.mean.astype("<f8"),
        "pca_components": index.pca.components.astype("<f8"),
        "pca_eigenvalues": index.pca.eigenvalues.astype("<f8"),
    }
    blobs = {}
    chunks = []
    pos = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        blobs[name] = {"offset": pos, "nbytes": len(raw), "dtype": arr.dtype.str, "shape": list(arr.shape)}
        chunks.append(raw)
        pos += len(raw)
    manifest = {
        "format": "pedretrieval-index",
        "format_version": INDEX_FORMAT_VERSION,
        "gallery_checksum": index.gallery_checksum,
        "theta": index.theta,
        "k": index.reduced_dim,
        "dim": index.dim,
        "group_count": len(index),
        "pca_source": index.pca_source,
        "pca_rank": index.pca.rank,
        "blobs": blobs,
    }
    directory = Path(directory)
    with atomic_write(directory / BLOB_NAME) as fh:
        fh.write(b"".join(chunks))
    with atomic_write(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_index(directory, gallery: Gallery) -> GroupIndex:
    """Load an index and check it was built from ``gallery``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read index manifest: {exc}") from None
    if manifest.get("format") != "pedretrieval-index":
        raise DataFormatError("not an index manifest")
    if manifest.get("format_version") != INDEX_FORMAT_VERSION:
        raise DataFormatError(f"unsupported index format version {manifest.get('format_version')}")
    if manifest["gallery_checksum"] != gallery.checksum():
        raise ChecksumMismatch("index was built from a different gallery")
    blob = (directory / BLOB_NAME).read_bytes()

    def arr(name):
        meta = manifest["blobs"][name]
        end = meta["offset"] + meta["nbytes"]
        if end > len(blob):
            raise DataFormatError(f"index blob truncated at {name}")
        a = np.frombuffer(blob[meta["offset"]:end], dtype=np.dtype(meta["dtype"]))
        return a.reshape(meta["shape"])

    offsets = arr("group_offsets").astype(np.int64)
    positions = arr("group_positions").astype(np.int64)
    dis = arr("group_dissimilarity").astype(np.float64)
    if offsets.size != manifest["group_count"] + 1 or offsets[-1] != positions.size:
        raise DataFormatError("group tables inconsistent with manifest")
    if positions.size and (positions.max() >= len(gallery)):
        raise DataFormatError("group member position outside the gallery")
    groups = []
    for i in range(manifest["group_count"]):
        pos = positions[offsets[i]:offsets[i + 1]].copy()
        groups.append(Group(pos, gallery.ids[pos], float(dis[i])))
    pca = PcaModel(
        arr("pca_mean").astype(np.float64),
        arr("pca_components").astype(np.float64),
        arr("pca_eigenvalues").astype(np.float64),
        int(manifest["pca_rank"]),
    )
    return GroupIndex(
        groups,
        float(manifest["theta"]),
        arr("group_descriptors_full").astype(np.float64),
        arr("group_descriptors_reduced").astype(np.float64),
        pca,
        manifest["gallery_checksum"],
        manifest["pca_source"],
    )
