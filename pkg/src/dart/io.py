"""File formats: binary array container, echograms, manifests and configs."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import DirectionGrid, PatchSet
from .materials import MaterialModel, model_from_state
from .precompute import DelayBank, Precomputed, SparseOperator
from .transport import ReceiverConfig, SourceConfig

MAGIC = b"DARTBIN1"
_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1, np.dtype("<i8"): 2, np.dtype("u1"): 3}
_DTYPES = {v: k for k, v in _CODES.items()}


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# container


def write_container(path, arrays: dict) -> None:
    """Write named arrays in insertion order; output depends only on content."""
    out = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype == bool:
            a = a.astype("u1")
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        if np.dtype(dt) not in _CODES:
            raise FormatError(f"unsupported dtype {a.dtype} for {name!r}")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<BB", _CODES[np.dtype(dt)], a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(np.ascontiguousarray(a, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(out))


def read_container(path) -> dict:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a container file")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(data[pos:pos + size], dtype=dt).reshape(shape).copy()
        pos += size
    return out


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype="u1")


def _untext(a) -> str:
    return bytes(np.asarray(a, dtype="u1")).decode("utf-8")


# --------------------------------------------------------------------------
# operator cache and checkpoints


def save_precomputed(pre: Precomputed, path) -> None:
    p = pre.patches
    write_container(path, {
        "triangles": p.triangles,
        "frames": p.frames,
        "group": p.group,
        "parent": p.parent,
        "group_names": _text("\n".join(p.group_names)),
        "grid": np.array([pre.grid.n_ele, pre.grid.n_azi], dtype=np.int64),
        "sampling": np.array([pre.K, pre.M, pre.M_geometry, pre.seed], dtype=np.int64),
        "constants": np.array([pre.c, pre.dt]),
        "vis_shape": np.array(pre.visibility.shape, dtype=np.int64),
        "vis_rows": pre.visibility.rows,
        "vis_cols": pre.visibility.cols,
        "vis_vals": pre.visibility.vals.astype("<f4"),
        "delay": pre.delays.delay.astype("<f4"),
        "delay_valid": pre.delays.valid,
        "geometry": pre.geometry.astype("<f4"),
    })


def load_precomputed(path) -> Precomputed:
    a = read_container(path)
    patches = PatchSet(a["triangles"], a["frames"], a["group"], a["parent"],
                       tuple(_untext(a["group_names"]).split("\n")))
    grid = DirectionGrid(int(a["grid"][0]), int(a["grid"][1]))
    vis = SparseOperator(tuple(int(s) for s in a["vis_shape"]), a["vis_rows"], a["vis_cols"],
                         a["vis_vals"].astype(np.float64))
    K, M, Mg, seed = (int(x) for x in a["sampling"])
    return Precomputed(patches, grid, vis,
                       DelayBank(a["delay"].astype(np.float64), a["delay_valid"].astype(bool)),
                       a["geometry"].astype(np.float64), K, M, Mg, seed,
                       float(a["constants"][0]), float(a["constants"][1]))


def save_checkpoint(model: MaterialModel, path) -> None:
    arrays = {"variant": _text(model.variant), "components": _text(",".join(model.components))}
    for k, v in model.state().items():
        arrays[k] = np.asarray(v, dtype=np.int64 if k == "block" else np.float64)
    write_container(path, arrays)


def load_checkpoint(path) -> MaterialModel:
    a = read_container(path)
    comps = tuple(c for c in _untext(a.pop("components")).split(",") if c)
    return model_from_state(_untext(a.pop("variant")), a, comps)


def write_alpha_csv(model: MaterialModel, patches: PatchSet, path) -> None:
    """Per-patch reflection coefficient with centroid and group for plotting."""
    alpha = model.alphas()
    cen = patches.centroids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["patch", "group", "cx", "cy", "cz", "alpha"])
        for i in range(patches.n_patches):
            wr.writerow([i, patches.group_names[patches.group[i]], *(repr(float(x)) for x in cen[i]),
                         repr(float(alpha[i]))])


# --------------------------------------------------------------------------
# echograms


def write_echogram_csv(e, path, dt: float = 1e-3) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "time_ms", "energy"])
        for n, v in enumerate(np.asarray(e, dtype=np.float64)):
            wr.writerow([n, repr(n * dt * 1e3), repr(float(v))])


def read_echogram_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["n", "time_ms", "energy"]:
        raise FormatError(f"{path}: expected header n,time_ms,energy")
    return np.array([float(r[2]) for r in rows[1:] if r], dtype=np.float64)


def write_echogram_bin(e, path) -> None:
    e = np.asarray(e, dtype="<f8")
    Path(path).write_bytes(struct.pack("<Q", e.size) + e.tobytes())


def read_echogram_bin(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (n,) = struct.unpack_from("<Q", data, 0)
    if len(data) != 8 + 8 * n:
        raise FormatError(f"{path}: truncated echogram")
    return np.frombuffer(data, dtype="<f8", offset=8).copy()


def read_echogram(path) -> np.ndarray:
    path = Path(path)
    return read_echogram_bin(path) if path.suffix in (".bin", ".f64") else read_echogram_csv(path)


def write_edc_db(e, path, dt: float = 1e-3) -> None:
    from .metrics import edc_db
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "time_ms", "edc_db"])
        for n, v in enumerate(edc_db(e)):
            wr.writerow([n, repr(n * dt * 1e3), repr(float(v))])


# --------------------------------------------------------------------------
# manifests and configs


def read_manifest(path, n_ray: int = 10000):
    """Rows of ``(id, SourceConfig, ReceiverConfig, echogram_path)``."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 11:
                raise FormatError(f"{path}:{lineno}: expected 11 fields, got {len(parts)}")
            try:
                nums = [float(x) for x in parts[1:10]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            src = SourceConfig(tuple(nums[0:3]), tuple(nums[3:6]), n_ray)
            rcv = ReceiverConfig(tuple(nums[6:9]), n_ray=n_ray)
            out.append((parts[0], src, rcv, (path.parent / parts[10]).resolve()))
    return out


def write_manifest(rows, path) -> None:
    """Rows of ``(id, SourceConfig, ReceiverConfig, echogram_path)``."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for mid, src, rcv, epath in rows:
            rel = Path(epath)
            try:
                rel = rel.resolve().relative_to(path.parent.resolve())
            except ValueError:
                pass
            vals = [*src.position, *src.orientation, *rcv.position]
            fh.write(", ".join([str(mid), *(repr(float(v)) for v in vals), str(rel)]) + "\n")


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
