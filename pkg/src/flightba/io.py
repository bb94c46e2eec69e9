"""Text file formats: JSON scene/config documents and CSV tables.

Tables use 1-based frame numbers and ``%.17g`` floats, so every value
round-trips exactly and re-serialization is byte-identical. Readers raise
:class:`~flightba.errors.FormatError` naming the offending line.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import fields, is_dataclass
from pathlib import Path

import numpy as np

from .association import DEFAULT_CAP, ObservationTable
from .dynamics import ControlSequence, LatentSequence, QuadParams, Trajectory
from .errors import FormatError
from .scene import Camera, Intrinsics

SCHEMA_VERSION = 1

DETECTION_HEADER = ("camera_id", "frame", "candidate_index", "px", "py")
TRAJECTORY_HEADER = ("frame", "x", "y", "z")
LATENT_HEADER = ("frame", "phi", "theta", "u")
CONTROLS_HEADER = ("frame", "u_phi", "u_theta")
ASSIGNMENT_HEADER = ("frame", "camera_id", "candidate_index")
TRACE_HEADER = (
    "iteration", "accepted", "retries", "damping", "before_total",
    "data", "consistency", "anchor_phi", "anchor_theta", "anchor_u", "total",
)


def fmt(x):
    return "%.17g" % x


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# JSON documents


def dump_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, str(path), exc.lineno) from None
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", str(path)) from None


def _check_keys(d, allowed, where, path, required=None):
    if not isinstance(d, dict):
        raise FormatError(f"{where}: expected an object", str(path))
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise FormatError(f"{where}: unknown key(s) {extra}", str(path))
    missing = sorted(set(required if required is not None else allowed) - set(d))
    if missing:
        raise FormatError(f"{where}: missing key(s) {missing}", str(path))


def dataclass_to_dict(obj):
    """Nested dataclass -> plain dict (tuples become lists)."""
    if is_dataclass(obj):
        out = {f.name: dataclass_to_dict(getattr(obj, f.name)) for f in fields(obj)}
        name = getattr(type(obj), "name", None)
        if isinstance(name, str):
            out = {"kind": name, **out}
        return out
    if isinstance(obj, (tuple, list)):
        return [dataclass_to_dict(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dataclass_from_dict(cls, d, path="<config>", where=None):
    """Build ``cls`` from ``d`` recursively, rejecting unknown keys.

    Missing keys keep their defaults.
    """
    where = where or cls.__name__
    names = {f.name: f for f in fields(cls)}
    allowed = set(names) | ({"kind"} if isinstance(getattr(cls, "name", None), str) else set())
    _check_keys(d, allowed, where, path, required=())
    kw = {}
    for k, v in d.items():
        if k == "kind":
            continue
        default = getattr(cls(), k) if _has_defaults(cls) else None
        if isinstance(v, dict) and isinstance(getattr(type(default), "name", None), str):
            from .priors import prior_from_name

            rest = {a: b for a, b in v.items() if a != "kind"}
            try:
                kw[k] = prior_from_name(v.get("kind", default.name), **rest)
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{where}.{k}: {exc}", str(path)) from None
        elif is_dataclass(default) and isinstance(v, dict):
            kw[k] = dataclass_from_dict(type(default), v, path, f"{where}.{k}")
        elif isinstance(default, tuple):
            kw[k] = _to_tuple(v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}", str(path)) from None


def _has_defaults(cls):
    try:
        cls()
        return True
    except TypeError:
        return False


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v


# scene --------------------------------------------------------------------

_INTR_KEYS = ("fx", "fy", "cx", "cy", "k1", "k2", "width", "height")
_QUAD_KEYS = ("m", "Ix", "Iy", "Iz", "g", "Jtp")


def scene_to_dict(cameras, params, volume):
    return {
        "schema_version": SCHEMA_VERSION,
        "fps": 1.0 / params.dt,
        "quad": {k: getattr(params, k) for k in _QUAD_KEYS},
        "volume": [list(map(float, v)) for v in volume],
        "cameras": [
            {
                "id": int(c.id),
                "intrinsics": {k: getattr(c.intrinsics, k) for k in _INTR_KEYS},
                "rotation": [float(v) for v in c.quat],
                "translation": [float(v) for v in c.translation],
            }
            for c in cameras
        ],
    }


def write_scene(path, cameras, params, volume):
    dump_json(scene_to_dict(cameras, params, volume), path)


def read_scene(path):
    """Returns ``(cameras, QuadParams, volume)``."""
    d = load_json(path)
    _check_keys(d, ("schema_version", "fps", "quad", "volume", "cameras"), "scene", path)
    if d["schema_version"] != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {d['schema_version']!r}", str(path))
    _check_keys(d["quad"], _QUAD_KEYS, "scene.quad", path)
    try:
        params = QuadParams(dt=1.0 / float(d["fps"]), **d["quad"])
        cams = []
        for i, c in enumerate(d["cameras"]):
            _check_keys(c, ("id", "intrinsics", "rotation", "translation"), f"scene.cameras[{i}]", path)
            _check_keys(c["intrinsics"], _INTR_KEYS, f"scene.cameras[{i}].intrinsics", path)
            if c["id"] != i:
                raise FormatError(f"camera ids must be 0..M-1 in order (got {c['id']} at {i})", str(path))
            cams.append(Camera(c["id"], Intrinsics(**c["intrinsics"]), c["rotation"], c["translation"]))
        volume = tuple(tuple(float(x) for x in v) for v in d["volume"])
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid scene: {exc}", str(path)) from None
    return cams, params, volume


# ---------------------------------------------------------------------------
# CSV tables


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_rows(path, header):
    """Yield ``(line_number, fields)`` after checking the header."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", str(path)) from None
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(first) != header:
            raise FormatError(f"expected header {','.join(header)}", str(path), 1)
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(row)}", str(path), line)
            yield line, row


def _int(s, path, line):
    try:
        return int(s)
    except ValueError:
        raise FormatError(f"not an integer: {s!r}", str(path), line) from None


def _float(s, path, line):
    try:
        v = float(s)
    except ValueError:
        raise FormatError(f"not a number: {s!r}", str(path), line) from None
    if not np.isfinite(v):
        raise FormatError(f"non-finite value: {s!r}", str(path), line)
    return v


def _read_frame_table(path, header):
    """Rows of ``frame, v1, v2, ...``; frames must run 1, 2, 3, ..."""
    vals = []
    for line, row in _read_rows(path, header):
        frame = _int(row[0], path, line)
        if frame != len(vals) + 1:
            raise FormatError(f"frame {frame} out of sequence (expected {len(vals) + 1})", str(path), line)
        vals.append([_float(v, path, line) for v in row[1:]])
    if not vals:
        raise FormatError("table has no rows", str(path))
    return np.array(vals)


def write_detections(path, obs):
    rows = []
    for j in range(obs.n_cameras):
        for t in range(obs.n_frames):
            for k, (px, py) in enumerate(obs.get(j, t)):
                rows.append((str(j), str(t + 1), str(k), fmt(px), fmt(py)))
    _write_rows(path, DETECTION_HEADER, rows)


def read_detections(path, n_cameras, n_frames=None, cap=DEFAULT_CAP):
    """Read a detections table; ``n_frames`` defaults to the largest frame seen."""
    sets = {}
    last = None
    for line, row in _read_rows(path, DETECTION_HEADER):
        j, f, k = (_int(v, path, line) for v in row[:3])
        px, py = _float(row[3], path, line), _float(row[4], path, line)
        if not 0 <= j < n_cameras:
            raise FormatError(f"camera_id {j} out of range", str(path), line)
        if f < 1 or (n_frames is not None and f > n_frames):
            raise FormatError(f"frame {f} out of range", str(path), line)
        key = (j, f, k)
        if last is not None and key <= last:
            raise FormatError("rows must be sorted by (camera, frame, index)", str(path), line)
        expect = last[2] + 1 if last is not None and last[:2] == (j, f) else 0
        if k != expect:
            raise FormatError(f"candidate_index {k} not contiguous (expected {expect})", str(path), line)
        if k >= cap:
            raise FormatError(f"more than {cap} candidates", str(path), line)
        sets.setdefault((j, f - 1), []).append((px, py))
        last = key
    if n_frames is None:
        n_frames = max((t for _, t in sets), default=-1) + 1
    return ObservationTable(n_cameras, n_frames, sets, cap)


def write_trajectory(path, X):
    pos = np.asarray(getattr(X, "positions", X), dtype=float)
    _write_rows(path, TRAJECTORY_HEADER, ((str(t + 1), *map(fmt, p)) for t, p in enumerate(pos)))


def read_trajectory(path, dt):
    return Trajectory(dt, _read_frame_table(path, TRAJECTORY_HEADER))


def write_latent(path, latent):
    _write_rows(path, LATENT_HEADER, ((str(t + 1), *map(fmt, r)) for t, r in enumerate(latent.as_array())))


def read_latent(path):
    return LatentSequence.from_array(_read_frame_table(path, LATENT_HEADER))


def write_controls(path, controls):
    a = np.stack([controls.u_phi, controls.u_theta], axis=1)
    _write_rows(path, CONTROLS_HEADER, ((str(t + 1), *map(fmt, r)) for t, r in enumerate(a)))


def read_controls(path):
    a = _read_frame_table(path, CONTROLS_HEADER)
    return ControlSequence(a[:, 0], a[:, 1])


def write_assignment(path, assignment):
    """Rows for every (frame, camera) with a chosen candidate."""
    a = np.asarray(assignment)
    rows = [
        (str(t + 1), str(j), str(int(a[t, j])))
        for t in range(a.shape[0])
        for j in range(a.shape[1])
        if a[t, j] >= 0
    ]
    _write_rows(path, ASSIGNMENT_HEADER, rows)


def read_assignment(path, n_frames, n_cameras):
    a = np.full((n_frames, n_cameras), -1, dtype=np.int64)
    for line, row in _read_rows(path, ASSIGNMENT_HEADER):
        t, j, k = (_int(v, path, line) for v in row)
        if not (1 <= t <= n_frames and 0 <= j < n_cameras and k >= 0):
            raise FormatError(f"assignment entry ({t}, {j}, {k}) out of range", str(path), line)
        a[t - 1, j] = k
    return a


def write_trace(path, trace):
    rows = []
    for e in trace:
        a = e.after
        rows.append(
            (
                str(e.iteration), str(int(e.accepted)), str(e.retries), fmt(e.damping), fmt(e.before.total),
                fmt(a.data), fmt(a.consistency), fmt(a.anchor_phi), fmt(a.anchor_theta), fmt(a.anchor_u), fmt(a.total),
            )
        )
    _write_rows(path, TRACE_HEADER, rows)


def read_trace(path):
    """Trace rows as a list of dicts."""
    out = []
    for line, row in _read_rows(path, TRACE_HEADER):
        d = {}
        for key, v in zip(TRACE_HEADER, row):
            d[key] = _int(v, path, line) if key in ("iteration", "accepted", "retries") else _float(v, path, line)
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# sweep tables

RESULTS_HEADER = ("method", "sigma_px", "sigma_p", "sigma_o", "seed", "rmse", "runtime")


def write_results(path, rows, runtime=True):
    """Sweep rows; ``runtime=False`` blanks the wall-clock column for reproducible files."""
    out = []
    for r in rows:
        out.append(
            (
                r["method"], fmt(r["sigma_px"]), fmt(r["sigma_p"]), fmt(r["sigma_o"]), str(r["seed"]),
                fmt(r["rmse"]), fmt(r["runtime"]) if runtime else "",
            )
        )
    _write_rows(path, RESULTS_HEADER, out)


def read_results(path):
    rows = []
    for line, row in _read_rows(path, RESULTS_HEADER):
        rows.append(
            {
                "method": row[0],
                "sigma_px": _float(row[1], path, line),
                "sigma_p": _float(row[2], path, line),
                "sigma_o": _float(row[3], path, line),
                "seed": _int(row[4], path, line),
                "rmse": _float(row[5], path, line),
                "runtime": _float(row[6], path, line) if row[6] else float("nan"),
            }
        )
    return rows


def write_manifest(path, command, config, seed, outputs, inputs=()):
    """Record the command, its configuration and SHA-256 hashes of files."""
    path = Path(path)
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {Path(p).name: sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
    }
    dump_json(doc, path)
    return doc
