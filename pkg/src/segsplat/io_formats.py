"""File formats: Gaussian PLY, SEGEMB1 embeddings, label maps, banks,
cameras, and the annotation manifest.

All invented binary formats are little-endian and self-describing via a
magic string. PLY follows the de facto 3DGS interchange convention
(logit opacity, log scales, channel-major f_rest) extended with an integer
``semantic_index`` property.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.special import expit, logit

from .annotation import ViewAnnotation, masks_from_label_map
from .bank import BankProvenance, SemanticBank
from .core import Camera, GaussianCloud, as_cloud

EMBEDDINGS_MAGIC = b"SEGEMB1\x00"
BANK_MAGIC = b"SEGBANK1"
MANIFEST_VERSION = 1


class ParseError(ValueError):
    """A file failed to parse; no partial structure escapes."""


# ---------------------------------------------------------------------------
# Gaussian scenes (binary little-endian PLY)

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
    "short": "<i2",
    "ushort": "<u2",
    "char": "i1",
    "uchar": "u1",
}

_REQUIRED_FLOAT_PROPS = (
    "x",
    "y",
    "z",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "f_dc_0",
    "f_dc_1",
    "f_dc_2",
)


def _parse_ply_header(fh) -> tuple[int, list[tuple[str, str]]]:
    def read_line() -> str:
        raw = fh.readline()
        if not raw:
            raise ParseError("unexpected end of file inside PLY header")
        return raw.decode("ascii", errors="replace").strip()

    if read_line() != "ply":
        raise ParseError("not a PLY file: missing 'ply' magic")
    if read_line() != "format binary_little_endian 1.0":
        raise ParseError("PLY must be format binary_little_endian 1.0")
    count = None
    props: list[tuple[str, str]] = []
    while True:
        line = read_line()
        if line == "end_header":
            break
        if line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "element":
            if parts[1] != "vertex":
                raise ParseError(f"unsupported PLY element '{parts[1]}'")
            if count is not None:
                raise ParseError("duplicate vertex element")
            count = int(parts[2])
        elif parts[0] == "property":
            if count is None:
                raise ParseError("property before vertex element")
            if parts[1] == "list":
                raise ParseError(f"list property '{parts[-1]}' not supported")
            if parts[1] not in _PLY_TYPES:
                raise ParseError(f"unknown property type '{parts[1]}'")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"unexpected header line '{line}'")
    if count is None:
        raise ParseError("PLY header has no vertex element")
    return count, props


def read_scene_ply(path) -> GaussianCloud:
    """Load Gaussians from a binary PLY.

    Opacity is stored as a logit, scales as logs; a missing
    ``semantic_index`` property means all-background.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _parse_ply_header(fh)
        names = [n for n, _ in props]
        for required in _REQUIRED_FLOAT_PROPS:
            if required not in names:
                raise ParseError(f"missing required property '{required}'")
        dtype = np.dtype([(n, t) for n, t in props])
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise ParseError(
                f"truncated vertex data: expected {count * dtype.itemsize} bytes, "
                f"got {len(payload)}"
            )
        if fh.read(1):
            raise ParseError("trailing bytes after vertex data")
    table = np.frombuffer(payload, dtype=dtype)

    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise ParseError(f"f_rest property count {n_rest} is not divisible by 3")
    basis = 1 + n_rest // 3
    if basis not in (1, 4, 9, 16):
        raise ParseError(f"f_rest count {n_rest} does not correspond to SH degree 0..3")
    for i in range(n_rest):
        if f"f_rest_{i}" not in names:
            raise ParseError(f"missing property 'f_rest_{i}'")

    def col(name):
        return np.asarray(table[name], dtype=np.float64)

    sh = np.zeros((count, basis, 3))
    sh[:, 0, 0], sh[:, 0, 1], sh[:, 0, 2] = col("f_dc_0"), col("f_dc_1"), col("f_dc_2")
    for ch in range(3):
        for i in range(basis - 1):
            sh[:, i + 1, ch] = col(f"f_rest_{ch * (basis - 1) + i}")

    if "semantic_index" in names:
        if not np.issubdtype(dtype["semantic_index"], np.integer):
            raise ParseError("property 'semantic_index' must be an integer type")
        semantic = np.asarray(table["semantic_index"], dtype=np.int64)
        if semantic.size and semantic.min() < 0:
            raise ParseError("property 'semantic_index' has negative values")
    else:
        semantic = np.zeros(count, dtype=np.int64)

    try:
        return GaussianCloud(
            positions=np.stack([col("x"), col("y"), col("z")], axis=1),
            opacities=expit(col("opacity")),
            scales=np.exp(np.stack([col("scale_0"), col("scale_1"), col("scale_2")], axis=1)),
            rotations=np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
            sh=sh,
            semantic_indices=semantic,
        )
    except ValueError as exc:
        raise ParseError(f"invalid Gaussian data in {path.name}: {exc}") from exc


def write_scene_ply(gaussians, path) -> None:
    cloud = as_cloud(gaussians)
    basis = cloud.sh.shape[1]
    n_rest = 3 * (basis - 1)
    names = list(_REQUIRED_FLOAT_PROPS) + [f"f_rest_{i}" for i in range(n_rest)]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names]
    header += ["property int semantic_index", "end_header"]

    dtype = np.dtype([(n, "<f4") for n in names] + [("semantic_index", "<i4")])
    table = np.empty(len(cloud), dtype=dtype)
    table["x"], table["y"], table["z"] = cloud.positions.T.astype(np.float32)
    with np.errstate(divide="ignore"):
        table["opacity"] = logit(cloud.opacities).astype(np.float32)
        logs = np.log(cloud.scales)
    for i in range(3):
        table[f"scale_{i}"] = logs[:, i].astype(np.float32)
    for i in range(4):
        table[f"rot_{i}"] = cloud.rotations[:, i].astype(np.float32)
    for ch in range(3):
        table[f"f_dc_{ch}"] = cloud.sh[:, 0, ch].astype(np.float32)
        for i in range(basis - 1):
            table[f"f_rest_{ch * (basis - 1) + i}"] = cloud.sh[:, i + 1, ch].astype(np.float32)
    table["semantic_index"] = cloud.semantic_indices.astype(np.int32)

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(table.tobytes())


# ---------------------------------------------------------------------------
# Embedding matrices (SEGEMB1)


def read_embeddings(path) -> np.ndarray:
    """Read an N x D float32 matrix; the stored bit pattern is preserved."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ParseError("embedding file too short for header")
    if data[:8] != EMBEDDINGS_MAGIC:
        raise ParseError(f"bad magic {data[:8]!r}, expected {EMBEDDINGS_MAGIC!r}")
    n, d = struct.unpack_from("<II", data, 8)
    expected = 16 + n * d * 4
    if len(data) != expected:
        raise ParseError(
            f"payload size mismatch: header says {n}x{d} ({expected} bytes), "
            f"file has {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d).copy()


def write_embeddings(matrix, path) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("embeddings must be a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Label / index maps (16-bit grayscale PNG or binary PGM)


def _read_pgm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 2  # past 'P5'
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"malformed PGM header: {exc}") from exc
    if maxval <= 255:
        raise ParseError(f"unsupported bit depth: PGM maxval {maxval} (need 16-bit)")
    if maxval > 65535:
        raise ParseError(f"invalid PGM maxval {maxval}")
    expected = width * height * 2
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise ParseError(f"truncated PGM payload: expected {expected} bytes")
    # 16-bit PGM samples are big-endian per the netpbm standard
    return np.frombuffer(payload, dtype=">u2").reshape(height, width).astype(np.int32)


def read_label_map(path) -> np.ndarray:
    """Read an integer pixel-id map; 0 is background."""
    path = Path(path)
    head = path.read_bytes()
    if head[:2] == b"P5":
        return _read_pgm(head)
    if head[:8] == b"\x89PNG\r\n\x1a\n":
        img = Image.open(path)
        if img.mode not in ("I", "I;16", "I;16B", "I;16L"):
            raise ParseError(f"unsupported bit depth: PNG mode {img.mode} (need 16-bit grayscale)")
        return np.asarray(img, dtype=np.int32)
    raise ParseError(f"{path.name} is neither PNG nor binary PGM")


def write_label_map(values, path) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("label map must be 2-D")
    if values.size and (values.min() < 0 or values.max() > 65535):
        raise ValueError("label map ids must fit 16 bits")
    path = Path(path)
    arr = values.astype(np.uint16)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii")
        path.write_bytes(header + arr.astype(">u2").tobytes())
    else:
        Image.fromarray(arr).save(path, format="PNG")  # uint16 -> 16-bit grayscale


# ---------------------------------------------------------------------------
# Semantic bank


def read_bank(path) -> SemanticBank:
    data = Path(path).read_bytes()
    header = struct.calcsize("<8sIIIqdI")
    if len(data) < header:
        raise ParseError("bank file too short for header")
    magic, version, m, d, seed, lam, iterations = struct.unpack_from("<8sIIIqdI", data, 0)
    if magic != BANK_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {BANK_MAGIC!r}")
    if version != 1:
        raise ParseError(f"unsupported bank version {version}")
    expected = header + m * d * 8
    if len(data) != expected:
        raise ParseError(f"payload size mismatch: expected {expected} bytes, got {len(data)}")
    centroids = np.frombuffer(data, dtype="<f8", offset=header).reshape(m, d).copy()
    try:
        return SemanticBank(
            centroids=centroids,
            provenance=BankProvenance(seed=seed, lam=lam, iterations=iterations),
        )
    except ValueError as exc:
        raise ParseError(f"invalid bank data: {exc}") from exc


def write_bank(bank: SemanticBank, path) -> None:
    prov = bank.provenance
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<8sIIIqdI",
                BANK_MAGIC,
                1,
                bank.size,
                bank.dim,
                prov.seed,
                prov.lam,
                prov.iterations,
            )
        )
        fh.write(np.ascontiguousarray(bank.centroids, dtype="<f8").tobytes())


# ---------------------------------------------------------------------------
# Cameras (JSON)


def camera_to_dict(cam: Camera) -> dict:
    return {
        "world_to_camera": cam.world_to_camera.tolist(),
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "near": cam.near,
        "far": cam.far,
    }


def camera_from_dict(obj: dict) -> Camera:
    try:
        return Camera(
            world_to_camera=np.asarray(obj["world_to_camera"], dtype=np.float64),
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            near=float(obj["near"]),
            far=float(obj["far"]),
        )
    except KeyError as exc:
        raise ParseError(f"camera is missing field {exc}") from exc


def read_camera_json(path) -> Camera:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid camera JSON: {exc}") from exc
    return camera_from_dict(obj)


def write_camera_json(cam: Camera, path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Annotation manifest


@dataclass(frozen=True)
class ManifestView:
    view_index: int
    image_width: int
    image_height: int
    label_map_path: str
    embeddings_path: str
    camera: Camera
    mask_scores: tuple[float, ...] = ()


@dataclass(frozen=True)
class AnnotationManifest:
    views: tuple[ManifestView, ...]
    embedding_dim: int
    base_dir: Path = field(default_factory=Path)
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "base_dir", Path(self.base_dir))
        if self.version != MANIFEST_VERSION:
            raise ParseError(f"unsupported manifest version {self.version}")

    def resolve(self, rel: str) -> Path:
        return (self.base_dir / rel).resolve()


def read_manifest(path) -> AnnotationManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid manifest JSON: {exc}") from exc
    if obj.get("version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {obj.get('version')}")
    views = []
    for entry in obj.get("views", []):
        try:
            views.append(
                ManifestView(
                    view_index=int(entry["view_index"]),
                    image_width=int(entry["image_width"]),
                    image_height=int(entry["image_height"]),
                    label_map_path=entry["label_map_path"],
                    embeddings_path=entry["embeddings_path"],
                    camera=camera_from_dict(entry["camera"]),
                    mask_scores=tuple(float(s) for s in entry.get("mask_scores", [])),
                )
            )
        except KeyError as exc:
            raise ParseError(f"manifest view is missing field {exc}") from exc
    manifest = AnnotationManifest(
        views=tuple(views),
        embedding_dim=int(obj["embedding_dim"]),
        base_dir=path.parent,
    )
    for view in manifest.views:
        for rel in (view.label_map_path, view.embeddings_path):
            if not manifest.resolve(rel).exists():
                raise ParseError(f"manifest references missing file {rel}")
    return manifest


def write_manifest(manifest: AnnotationManifest, path) -> None:
    obj = {
        "version": manifest.version,
        "embedding_dim": manifest.embedding_dim,
        "views": [
            {
                "view_index": v.view_index,
                "image_width": v.image_width,
                "image_height": v.image_height,
                "label_map_path": v.label_map_path,
                "embeddings_path": v.embeddings_path,
                "camera": camera_to_dict(v.camera),
                "mask_scores": list(v.mask_scores),
            }
            for v in manifest.views
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_views(manifest: AnnotationManifest) -> list[ViewAnnotation]:
    """Materialize ViewAnnotations from a manifest.

    Embedding row i and mask_scores[i] belong to mask id i + 1; ids absent
    from the label map (fully painted over upstream) are dropped together
    with their embedding rows.
    """
    views = []
    for entry in manifest.views:
        label_map = read_label_map(manifest.resolve(entry.label_map_path))
        if label_map.shape != (entry.image_height, entry.image_width):
            raise ParseError(
                f"view {entry.view_index}: label map shape {label_map.shape} does not "
                f"match declared {entry.image_height}x{entry.image_width}"
            )
        emb = read_embeddings(manifest.resolve(entry.embeddings_path))
        if emb.shape[1] != manifest.embedding_dim:
            raise ParseError(
                f"view {entry.view_index}: embedding dim {emb.shape[1]} does not match "
                f"manifest dim {manifest.embedding_dim}"
            )
        if label_map.size and label_map.max() > emb.shape[0]:
            raise ParseError(
                f"view {entry.view_index}: label map id {label_map.max()} has no embedding row"
            )
        masks = masks_from_label_map(label_map, entry.mask_scores)
        rows = [m.mask_id - 1 for m in masks]
        views.append(
            ViewAnnotation(
                view_index=entry.view_index,
                masks=tuple(masks),
                embeddings=emb[rows].astype(np.float64),
                label_map=label_map,
                camera=entry.camera,
            )
        )
    return views


# ---------------------------------------------------------------------------
# Hashing helpers for result manifests


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def config_digest(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
