"""Minimal PLY reader/writer for triangle meshes.

Supports ``ascii 1.0``, ``binary_little_endian 1.0`` and ``binary_big_endian 1.0``
bodies.  Only the ``vertex`` (x, y, z plus any extra scalar properties) and
``face`` (a list property of vertex indices) elements are interpreted; other
elements are parsed and returned untouched.
"""

import os

import numpy as np

from .errors import PLYFormatError

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_FORMATS = {
    "ascii": None,
    "binary_little_endian": "<",
    "binary_big_endian": ">",
}


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
        self.properties = []

    @property
    def has_lists(self):
        return any(len(p) == 3 for p in self.properties)


def _parse_header(data):
    if not data.startswith(b"ply"):
        raise PLYFormatError("missing 'ply' magic number", offset=0)
    offset = 0
    elements = []
    fmt = None
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise PLYFormatError("header is not terminated by 'end_header'", offset=offset)
        line = data[offset:end].decode("ascii", errors="replace").strip()
        line_offset = offset
        offset = end + 1
        if not line or line == "ply":
            continue
        words = line.split()
        key = words[0]
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(words) != 3 or words[1] not in _FORMATS:
                raise PLYFormatError(f"unsupported format line {line!r}", offset=line_offset)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3:
                raise PLYFormatError(f"malformed element line {line!r}", offset=line_offset)
            try:
                count = int(words[2])
            except ValueError:
                raise PLYFormatError(f"non-integer element count in {line!r}", offset=line_offset)
            elements.append(_Element(words[1], count))
        elif key == "property":
            if not elements:
                raise PLYFormatError("property declared before any element", offset=line_offset)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _TYPES or words[3] not in _TYPES:
                    raise PLYFormatError(f"unknown list types in {line!r}", offset=line_offset)
                elements[-1].properties.append((words[4], _TYPES[words[2]], _TYPES[words[3]]))
            elif len(words) == 3 and words[1] in _TYPES:
                elements[-1].properties.append((words[2], _TYPES[words[1]]))
            else:
                raise PLYFormatError(f"malformed property line {line!r}", offset=line_offset)
        elif key == "end_header":
            break
        else:
            raise PLYFormatError(f"unexpected header keyword {key!r}", offset=line_offset)
    if fmt is None:
        raise PLYFormatError("header has no format line", offset=0)
    return fmt, elements, offset


def _read_ascii(body, elements, body_offset):
    tokens = body.split()
    pos = 0
    out = {}
    for el in elements:
        if not el.has_lists:
            n = len(el.properties)
            chunk = tokens[pos:pos + n * el.count]
            if len(chunk) != n * el.count:
                raise PLYFormatError(f"truncated body in element {el.name!r}", offset=body_offset)
            try:
                arr = np.array(chunk, dtype=float).reshape(el.count, n)
            except ValueError:
                raise PLYFormatError(f"non-numeric value in element {el.name!r}", offset=body_offset)
            pos += n * el.count
            out[el.name] = {p[0]: arr[:, i].astype(p[1]) for i, p in enumerate(el.properties)}
            continue
        cols = {p[0]: [] for p in el.properties}
        try:
            for _ in range(el.count):
                for p in el.properties:
                    if len(p) == 2:
                        cols[p[0]].append(float(tokens[pos]))
                        pos += 1
                    else:
                        k = int(tokens[pos])
                        cols[p[0]].append([int(t) for t in tokens[pos + 1:pos + 1 + k]])
                        if len(cols[p[0]][-1]) != k:
                            raise IndexError
                        pos += 1 + k
        except (IndexError, ValueError):
            raise PLYFormatError(f"malformed or truncated element {el.name!r}", offset=body_offset)
        out[el.name] = {
            p[0]: (np.asarray(cols[p[0]], dtype=p[1]) if len(p) == 2 else cols[p[0]])
            for p in el.properties
        }
    return out


def _read_binary(data, elements, offset, endian):
    out = {}
    for el in elements:
        if not el.has_lists:
            dt = np.dtype([(p[0], endian + p[1]) for p in el.properties])
            nbytes = dt.itemsize * el.count
            if offset + nbytes > len(data):
                raise PLYFormatError(f"truncated body in element {el.name!r}", offset=offset)
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=offset)
            offset += nbytes
            out[el.name] = {p[0]: np.array(arr[p[0]]) for p in el.properties}
            continue
        # fast path: every list has exactly three entries (the common triangle case)
        fields = []
        for p in el.properties:
            if len(p) == 2:
                fields.append((p[0], endian + p[1]))
            else:
                fields.append((p[0] + "__n", endian + p[1]))
                fields.append((p[0], endian + p[2], (3,)))
        dt = np.dtype(fields)
        if offset + dt.itemsize * el.count <= len(data):
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=offset)
            counts_ok = all(
                np.all(arr[p[0] + "__n"] == 3) for p in el.properties if len(p) == 3
            )
            if counts_ok:
                offset += dt.itemsize * el.count
                out[el.name] = {
                    p[0]: (np.array(arr[p[0]]).astype(p[1]) if len(p) == 2
                           else np.array(arr[p[0]]).astype(np.int64))
                    for p in el.properties
                }
                continue
        cols = {p[0]: [] for p in el.properties}
        for _ in range(el.count):
            for p in el.properties:
                if len(p) == 2:
                    dt1 = np.dtype(endian + p[1])
                    if offset + dt1.itemsize > len(data):
                        raise PLYFormatError(f"truncated element {el.name!r}", offset=offset)
                    cols[p[0]].append(np.frombuffer(data, dt1, 1, offset)[0])
                    offset += dt1.itemsize
                else:
                    cdt = np.dtype(endian + p[1])
                    idt = np.dtype(endian + p[2])
                    if offset + cdt.itemsize > len(data):
                        raise PLYFormatError(f"truncated element {el.name!r}", offset=offset)
                    k = int(np.frombuffer(data, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    if offset + k * idt.itemsize > len(data):
                        raise PLYFormatError(f"truncated element {el.name!r}", offset=offset)
                    cols[p[0]].append(np.frombuffer(data, idt, k, offset).astype(np.int64).tolist())
                    offset += k * idt.itemsize
        out[el.name] = {
            p[0]: (np.asarray(cols[p[0]], dtype=p[1]) if len(p) == 2 else cols[p[0]])
            for p in el.properties
        }
    return out


def read_ply_elements(path):
    """Parse a PLY file into ``{element: {property: values}}``.

    Scalar properties become 1-D arrays.  List properties become an ``(n, 3)``
    integer array when every list has length three, otherwise a list of lists.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, elements, offset = _parse_header(data)
    if fmt == "ascii":
        body = data[offset:].decode("ascii", errors="replace")
        return _read_ascii(body, elements, offset)
    return _read_binary(data, elements, offset, _FORMATS[fmt])


def read_ply_arrays(path):
    """Return ``(vertices, faces, vertex_properties)`` from a triangle-mesh PLY file.

    ``vertex_properties`` holds every vertex property other than x, y, z.
    A face list of length other than three raises :class:`PLYFormatError`
    naming the first offending face.
    """
    elements = read_ply_elements(path)
    if "vertex" not in elements:
        raise PLYFormatError("no 'vertex' element")
    vert = elements["vertex"]
    for axis in "xyz":
        if axis not in vert:
            raise PLYFormatError(f"vertex element lacks property {axis!r}")
    vertices = np.column_stack([vert["x"], vert["y"], vert["z"]]).astype(float)
    extra = {k: np.asarray(v) for k, v in vert.items() if k not in ("x", "y", "z")}
    if "face" not in elements:
        raise PLYFormatError("no 'face' element")
    face = elements["face"]
    key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
    if key not in face:
        raise PLYFormatError("face element lacks a 'vertex_indices' list")
    raw = face[key]
    if isinstance(raw, np.ndarray) and raw.ndim == 2 and raw.shape[1] == 3:
        faces = raw.astype(np.int64)
    else:
        for i, f in enumerate(raw):
            if len(f) != 3:
                raise PLYFormatError(f"face {i} has {len(f)} vertices; only triangles are supported")
        faces = np.asarray(raw, dtype=np.int64).reshape(-1, 3)
    return vertices, faces, extra


def write_ply(path, vertices, faces, vertex_attributes=None, binary=False, comments=()):
    """Write a triangle mesh, optionally with extra per-vertex float properties."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    attrs = dict(vertex_attributes or {})
    for name, val in attrs.items():
        val = np.asarray(val, dtype=float)
        if val.shape != (len(vertices),):
            raise ValueError(f"attribute {name!r} must have one value per vertex")
        attrs[name] = val
    lines = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines += [f"element vertex {len(vertices)}",
              "property double x", "property double y", "property double z"]
    lines += [f"property double {name}" for name in attrs]
    lines += [f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    header = ("\n".join(lines) + "\n").encode("ascii")
    cols = [vertices] + [v[:, None] for v in attrs.values()]
    vdata = np.hstack(cols) if cols else vertices
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(np.ascontiguousarray(vdata, dtype="<f8").tobytes())
            fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
            frec = np.empty(len(faces), dtype=fdt)
            frec["n"] = 3
            frec["idx"] = faces
            fh.write(frec.tobytes())
        else:
            for row in vdata:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))
    os.replace(tmp, path)
