"""
Mesh, point-cloud and landmark file I/O.

Meshes are read and written with trimesh (`process=False`, so vertex order
and face order are exactly as stored). Before a file reaches trimesh it goes
through a structural check that reports where a file is broken: line numbers
for OBJ and ascii PLY, byte offsets for binary PLY. trimesh itself does not
locate errors, and it skips OBJ records it does not know.

Supported formats:
- OBJ: `v x y z` and `f a b c [d]` records (1-based, `a/b/c` forms accepted)
- PLY: ascii and binary_little_endian, `vertex` and `face` elements
- Landmarks: one `label x y z` per line, `label -` for absent landmarks

trimesh stores triangles only. A QuadMesh is written as its 0-2 diagonal
split (all first halves, then all second halves), and a triangle list in
exactly that layout is folded back into quads on load.
"""

from pathlib import Path

import numpy as np
import trimesh

import config
from .errors import MeshFormatError, UnsupportedElementError
from .geometry import LandmarkSet, PointCloud, QuadMesh, TriangleMesh
from .logger import pipeline_logger

MESH_SUFFIXES = (".obj", ".ply")

_OBJ_SKIPPED = ("vt", "vn", "vp", "o", "g", "s", "usemtl", "mtllib", "l")

_PLY_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}


# ---------------------------------------------------------------------------
# colour map
# ---------------------------------------------------------------------------

def error_colors(field, vmin=None, vmax=None):
    """
    Map a per-vertex error field (mm) to RGB bytes, blue at `vmin`, red at `vmax`.

    Values outside the range saturate. The default range is 0-10 mm.
    """
    lo, hi = config.COLOR_MAP_RANGE
    vmin = lo if vmin is None else vmin
    vmax = hi if vmax is None else vmax
    t = np.clip((np.asarray(field, dtype=float) - vmin) / (vmax - vmin), 0.0, 1.0)
    rgb = np.stack([t, np.zeros_like(t), 1.0 - t], axis=-1)
    return np.rint(rgb * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_mesh(path):
    """
    Load an OBJ or PLY mesh.

    Returns a QuadMesh when the triangles are in the split-quad layout written
    by `save_mesh`, otherwise a TriangleMesh. Files without faces load as a
    TriangleMesh with an empty face list.
    """
    path = _checked_path(path)
    loaded = _trimesh_load(path)
    vertices = np.asarray(loaded.vertices, dtype=float)
    faces = np.asarray(getattr(loaded, "faces", np.empty((0, 3))), dtype=np.int64).reshape(-1, 3)
    colors = _vertex_colors(loaded)

    try:
        quads = _fold_quads(faces)
        if quads is not None:
            mesh = QuadMesh(vertices, quads, None, colors)
        else:
            mesh = TriangleMesh(vertices, faces, colors)
    except MeshFormatError as e:
        raise MeshFormatError(path, str(e).split(": ", 1)[-1])
    pipeline_logger.log_debug("LOAD_MESH", path.name, {"n": len(vertices), "faces": len(mesh.faces)})
    return mesh


def load_point_cloud(path):
    """Load the vertices of an OBJ/PLY file as a point cloud (faces ignored)."""
    path = _checked_path(path)
    return PointCloud(np.asarray(_trimesh_load(path).vertices, dtype=float))


def _checked_path(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix not in MESH_SUFFIXES:
        raise UnsupportedElementError(path, f"unsupported mesh format {suffix!r}")
    if suffix == ".obj":
        _check_obj(path)
    else:
        _check_ply(path)
    return path


def _trimesh_load(path):
    options = {"maintain_order": True} if path.suffix.lower() == ".obj" else {}
    try:
        loaded = trimesh.load(str(path), process=False, **options)
    except Exception as e:
        raise MeshFormatError(path, f"unreadable mesh ({e})") from e
    if isinstance(loaded, trimesh.Scene):
        geometry = tuple(loaded.geometry.values())
        if not geometry:
            raise MeshFormatError(path, "no vertices")
        loaded = geometry[0] if len(geometry) == 1 else trimesh.util.concatenate(geometry)
    if len(getattr(loaded, "vertices", ())) == 0:
        raise MeshFormatError(path, "no vertices")
    return loaded


def _vertex_colors(loaded):
    visual = getattr(loaded, "visual", None)
    if visual is None or getattr(visual, "kind", None) != "vertex":
        return None
    colors = np.asarray(visual.vertex_colors)
    if colors.shape != (len(loaded.vertices), 4):
        return None
    return colors[:, :3].astype(np.uint8)


def _fold_quads(faces):
    """Quads [a, b, c, d] for triangles laid out as [a, b, c] ... [a, c, d], else None."""
    if len(faces) == 0 or len(faces) % 2:
        return None
    first, second = faces[:len(faces) // 2], faces[len(faces) // 2:]
    if np.array_equal(first[:, 0], second[:, 0]) and np.array_equal(first[:, 2], second[:, 1]):
        return np.column_stack([first, second[:, 2]])
    return None


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------

def _check_obj(path):
    vertices = 0
    faces = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    [float(x) for x in parts[1:4]]
                except ValueError:
                    raise MeshFormatError(path, f"bad vertex coordinate in {line!r}", line=lineno)
                if len(parts) < 4:
                    raise MeshFormatError(path, "vertex record needs 3 coordinates", line=lineno)
                vertices += 1
            elif tag == "f":
                try:
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                except ValueError:
                    raise MeshFormatError(path, f"bad face index in {line!r}", line=lineno)
                if len(idx) < 3:
                    raise MeshFormatError(path, "face needs at least 3 indices", line=lineno)
                faces.append((lineno, idx, vertices))
            elif tag not in _OBJ_SKIPPED:
                raise UnsupportedElementError(path, f"unsupported record {tag!r}", line=lineno)
    if vertices == 0:
        raise MeshFormatError(path, "no vertices")
    for lineno, idx, seen in faces:
        # negative indices are relative to the vertices read so far
        resolved = [i - 1 if i > 0 else seen + i for i in idx]
        if min(resolved) < 0 or max(resolved) >= vertices:
            raise MeshFormatError(path, f"face index out of range [1, {vertices}]", line=lineno)


def _parse_ply_header(path, data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError(path, "missing ply magic or end_header", line=1)
    newline = data.find(b"\n", end)
    body_start = newline + 1 if newline >= 0 else len(data)
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
            if fmt not in ("ascii", "binary_little_endian"):
                raise UnsupportedElementError(path, f"unsupported ply format {fmt!r}", line=lineno)
        elif parts[0] == "element":
            if len(parts) != 3:
                raise MeshFormatError(path, f"bad element line {line!r}", line=lineno)
            if parts[1] not in ("vertex", "face"):
                raise UnsupportedElementError(path, f"unsupported element {parts[1]!r}", line=lineno)
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(path, "property before any element", line=lineno)
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_SIZES or parts[3] not in _PLY_SIZES:
                    raise UnsupportedElementError(path, f"bad list property {line!r}", line=lineno)
                elements[-1]["props"].append(("list", _PLY_SIZES[parts[2]], _PLY_SIZES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_SIZES:
                    raise UnsupportedElementError(path, f"bad property {line!r}", line=lineno)
                elements[-1]["props"].append(("scalar", _PLY_SIZES[parts[1]], None))
        else:
            raise MeshFormatError(path, f"unexpected header line {line!r}", line=lineno)
    if fmt is None:
        raise MeshFormatError(path, "missing format line")
    if not elements or elements[0]["name"] != "vertex" or elements[0]["count"] == 0:
        raise MeshFormatError(path, "ply file has no vertices")
    # the first body line follows the end_header line
    return fmt, elements, body_start, len(lines) + 2


def _check_ply(path):
    data = Path(path).read_bytes()
    fmt, elements, body_start, first_line = _parse_ply_header(path, data)
    if fmt == "ascii":
        _check_ply_ascii(path, data[body_start:], elements, first_line)
        return
    # lists hold at least three indices, which bounds the body size from below
    minimum = body_start
    for element in elements:
        record = sum(size if kind == "scalar" else size + 3 * item
                     for kind, size, item in element["props"])
        minimum += record * element["count"]
    if len(data) < minimum:
        raise MeshFormatError(path, f"truncated binary body, expected at least {minimum} bytes",
                              offset=len(data))


def _check_ply_ascii(path, body, elements, first_line):
    lines = body.decode("ascii", errors="replace").splitlines()
    cursor = 0
    for element in elements:
        for _ in range(element["count"]):
            lineno = first_line + cursor
            if cursor >= len(lines):
                raise MeshFormatError(path, f"unexpected end of {element['name']} data", line=lineno)
            tokens = lines[cursor].split()
            cursor += 1
            pos = 0
            try:
                for kind, _, _ in element["props"]:
                    if kind == "list":
                        count = int(tokens[pos])
                        [int(t) for t in tokens[pos + 1:pos + 1 + count]]
                        pos += 1 + count
                    else:
                        float(tokens[pos])
                        pos += 1
                if pos != len(tokens):
                    raise ValueError
            except (IndexError, ValueError):
                raise MeshFormatError(path, f"malformed {element['name']} record", line=lineno)


# ---------------------------------------------------------------------------
# saving
# ---------------------------------------------------------------------------

def save_mesh(mesh, path, per_vertex_scalar=None, binary=True):
    """
    Save a mesh as PLY (binary or ascii) or OBJ.

    When `per_vertex_scalar` is given (length n, mm) it is written as
    per-vertex colour through the fixed blue-to-red 0-10 mm map. OBJ output
    carries no colour.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vertices = np.asarray(mesh.vertices, dtype=float)
    colors = getattr(mesh, "colors", None)
    if per_vertex_scalar is not None:
        field = np.asarray(per_vertex_scalar, dtype=float).ravel()
        if len(field) != len(vertices):
            raise ValueError(f"scalar field has {len(field)} values for {len(vertices)} vertices")
        colors = error_colors(field)
    faces = mesh.triangulated().faces if isinstance(mesh, QuadMesh) else np.asarray(mesh.faces)

    obj = path.suffix.lower() == ".obj"
    out = trimesh.Trimesh(vertices=vertices, faces=faces,
                          vertex_colors=None if obj else colors, process=False)
    try:
        if obj:
            out.export(str(path))
        else:
            out.export(str(path), encoding="binary" if binary else "ascii")
    except OSError as e:
        pipeline_logger.log_error(path.name, "SAVE_MESH", e)
        raise
    return path


# ---------------------------------------------------------------------------
# landmarks
# ---------------------------------------------------------------------------

def load_landmarks(path):
    """Read a `label x y z` / `label -` landmark file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"landmark file not found: {path}")
    out = LandmarkSet()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            label = parts[0]
            if label in out:
                raise MeshFormatError(path, f"duplicate landmark {label!r}", line=lineno)
            if len(parts) == 2 and parts[1] == "-":
                out.add(label, None)
            elif len(parts) == 4:
                try:
                    out.add(label, [float(v) for v in parts[1:]])
                except ValueError:
                    raise MeshFormatError(path, f"bad landmark coordinates {line!r}", line=lineno)
            else:
                raise MeshFormatError(path, f"expected 'label x y z' or 'label -', got {line!r}",
                                      line=lineno)
    return out


def save_landmarks(landmarks, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for entry in landmarks:
        if entry.present:
            x, y, z = entry.position
            lines.append(f"{entry.label} {x:.17g} {y:.17g} {z:.17g}")
        else:
            lines.append(f"{entry.label} -")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
