"""File formats: binary fields, ray-family manifests, sinogram CSV, reports.

Field files are a small self-describing binary format ("STF1"); ray
families are stored as JSON manifests holding exactly the parameters their
builders need, so geometry regenerates bit-identically; sinograms are CSV
with one row per ray plus a JSON sidecar manifest; reports and material
parameters are plain JSON.
"""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .fields import CovectorField, Domain, Grid3, ScalarField, SymField2
from .forward import Sinogram
from .geometry import PlaneFamily, SphereFamily, _cell_centered_offsets, fibonacci_sphere
from .inversion import ReconReport
from .material import MaterialParams

_MAGIC = b"STF1"
_RANK_CODES = {ScalarField: 0, CovectorField: 1, SymField2: 2}
_RANK_CLASSES = {0: ScalarField, 1: CovectorField, 2: SymField2}
_RANK_COMPS = {0: 1, 1: 3, 2: 6}
_DOMAIN_CODES = {"box": 0, "ball": 1}
_DOMAIN_KINDS = {0: "box", 1: "ball"}


# ---------------------------------------------------------------------------
# binary field files


def write_field(path, fld):
    """Binary field file: magic, rank code, dims, spacing, origin, domain,
    then little-endian float64 components in C order."""
    code = _RANK_CODES.get(type(fld))
    if code is None:
        raise ValueError(f"cannot serialize field of type {type(fld).__name__}")
    grid = fld.grid
    vals = np.ascontiguousarray(fld.values, dtype="<f8")
    expect = grid.dims + (() if code == 0 else (_RANK_COMPS[code],))
    if vals.shape != expect:
        raise ValueError(f"field values have shape {vals.shape}, expected {expect}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", code))
        fh.write(struct.pack("<3I", *grid.dims))
        fh.write(struct.pack("<3d", *grid.spacing))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<B", _DOMAIN_CODES[grid.domain.kind]))
        if grid.domain.kind == "ball":
            fh.write(struct.pack("<4d", *grid.domain.center, grid.domain.radius))
        fh.write(vals.tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a field file (bad magic)")
        (code,) = struct.unpack("<B", fh.read(1))
        if code not in _RANK_CLASSES:
            raise ValueError(f"{path}: unknown rank code {code}")
        dims = struct.unpack("<3I", fh.read(12))
        spacing = struct.unpack("<3d", fh.read(24))
        origin = struct.unpack("<3d", fh.read(24))
        (dcode,) = struct.unpack("<B", fh.read(1))
        if dcode not in _DOMAIN_KINDS:
            raise ValueError(f"{path}: unknown domain code {dcode}")
        if _DOMAIN_KINDS[dcode] == "ball":
            params = struct.unpack("<4d", fh.read(32))
            domain = Domain("ball", tuple(params[:3]), params[3])
        else:
            domain = Domain("box")
        ncomp = _RANK_COMPS[code]
        count = int(np.prod(dims)) * ncomp
        data = np.fromfile(fh, dtype="<f8", count=count)
        if data.size != count:
            raise ValueError(f"{path}: truncated field data")
    grid = Grid3(dims, spacing, origin, domain)
    shape = dims + (() if code == 0 else (ncomp,))
    return _RANK_CLASSES[code](grid, data.reshape(shape).astype(float))


# ---------------------------------------------------------------------------
# ray-family manifests


def family_manifest(family):
    """JSON-ready description sufficient to regenerate the family exactly."""
    base = {
        "kind": family.kind,
        "offset_count": len(family.offsets),
        "center": list(np.asarray(family.center, dtype=float)),
        "radius": float(family.radius),
        "step": float(family.step),
    }
    if isinstance(family, PlaneFamily):
        base["axis"] = int(family.axis)
        base["angle_count"] = len(family.thetas)
        base["slices"] = [float(s) for s in family.slices]
    elif isinstance(family, SphereFamily):
        base["direction_count"] = len(family.directions)
        fib = fibonacci_sphere(len(family.directions))
        if not np.array_equal(fib, family.directions):
            base["directions"] = [list(map(float, d)) for d in family.directions]
    else:
        raise ValueError(f"cannot serialize family of type {type(family).__name__}")
    return base


def family_from_manifest(man):
    offs = _cell_centered_offsets(man["radius"], man["offset_count"])
    if man["kind"] == "plane":
        n = man["angle_count"]
        thetas = np.arange(n) * np.pi / n
        return PlaneFamily(
            man["axis"],
            thetas,
            offs,
            np.asarray(man["slices"], dtype=float),
            np.asarray(man["center"], dtype=float),
            man["radius"],
            man["step"],
        )
    if man["kind"] == "sphere":
        if "directions" in man:
            dirs = np.asarray(man["directions"], dtype=float)
        else:
            dirs = fibonacci_sphere(man["direction_count"])
        return SphereFamily(
            dirs, offs, np.asarray(man["center"], dtype=float), man["radius"], man["step"]
        )
    raise ValueError(f"unknown family kind {man['kind']!r}")


def write_family_manifest(path, family):
    with open(path, "w") as fh:
        json.dump(family_manifest(family), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_family_manifest(path):
    with open(path) as fh:
        return family_from_manifest(json.load(fh))


# ---------------------------------------------------------------------------
# sinogram CSV + sidecar manifest

_KIND_COLUMNS = {
    "scalar": ["value"],
    "propagator": [
        "u11_re", "u11_im", "u12_re", "u12_im",
        "u21_re", "u21_im", "u22_re", "u22_im",
    ],
    "lmatrix": ["l11", "l12", "l21", "l22"],
    "kpair": ["d", "o"],
}


def _flatten_records(kind, values):
    """(..., record) -> (..., columns) real view of the per-ray records."""
    if kind == "scalar":
        return np.asarray(values)[..., None]
    if kind == "propagator":
        flat = np.asarray(values).reshape(values.shape[:-2] + (4,))
        out = np.empty(flat.shape[:-1] + (8,))
        out[..., 0::2] = flat.real
        out[..., 1::2] = flat.imag
        return out
    if kind == "lmatrix":
        return np.asarray(values).reshape(values.shape[:-2] + (4,))
    if kind == "kpair":
        return np.asarray(values)
    raise ValueError(f"unknown sinogram kind {kind!r}")


def _unflatten_records(kind, cols):
    if kind == "scalar":
        return cols[..., 0]
    if kind == "propagator":
        return (cols[..., 0::2] + 1j * cols[..., 1::2]).reshape(cols.shape[:-1] + (2, 2))
    if kind == "lmatrix":
        return cols.reshape(cols.shape[:-1] + (2, 2))
    if kind == "kpair":
        return cols
    raise ValueError(f"unknown sinogram kind {kind!r}")


def write_sinogram(path, sino: Sinogram, family_id=None):
    """CSV with one row per ray plus a JSON sidecar manifest.

    Plane families index rows by (slice, angle, offset); sphere families
    use the direction index in the angle column and the two transverse
    offsets in the offset and slice columns.
    """
    fam = sino.family
    if family_id is None:
        family_id = f"plane{fam.axis}" if fam.kind == "plane" else "sphere"
    flat = _flatten_records(sino.kind, sino.values)
    cols = _KIND_COLUMNS[sino.kind]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "slice", "angle", "offset", "kind"] + cols)
        if fam.kind == "plane":
            A, O, S = len(fam.thetas), len(fam.offsets), len(fam.slices)
            for a in range(A):
                for o in range(O):
                    for s in range(S):
                        w.writerow(
                            [family_id, s, a, o, sino.kind]
                            + [repr(float(v)) for v in flat[a, o, s]]
                        )
        else:
            D, O = len(fam.directions), len(fam.offsets)
            for d in range(D):
                for o1 in range(O):
                    for o2 in range(O):
                        w.writerow(
                            [family_id, o2, d, o1, sino.kind]
                            + [repr(float(v)) for v in flat[d, o1, o2]]
                        )
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(
            {"family_id": family_id, "kind": sino.kind, "family": family_manifest(fam)},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def read_sinogram(path):
    with open(str(path) + ".manifest.json") as fh:
        man = json.load(fh)
    fam = family_from_manifest(man["family"])
    kind = man["kind"]
    ncol = len(_KIND_COLUMNS[kind])
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:5] != ["family", "slice", "angle", "offset", "kind"]:
            raise ValueError(f"{path}: bad sinogram header")
        rows = list(rd)
    if fam.kind == "plane":
        shape = (len(fam.thetas), len(fam.offsets), len(fam.slices))
        order = lambda r: (int(r[2]), int(r[3]), int(r[1]))
    else:
        shape = (len(fam.directions), len(fam.offsets), len(fam.offsets))
        order = lambda r: (int(r[2]), int(r[3]), int(r[1]))
    if len(rows) != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} rows, got {len(rows)}")
    flat = np.empty(shape + (ncol,))
    for r in rows:
        if r[4] != kind:
            raise ValueError(f"{path}: record kind {r[4]!r} does not match manifest")
        flat[order(r)] = [float(v) for v in r[5 : 5 + ncol]]
    return Sinogram(fam, kind, _unflatten_records(kind, flat))


# ---------------------------------------------------------------------------
# parameters and reports


def write_params(path, params: MaterialParams):
    if not params.constants_mode:
        raise ValueError("only constants-mode parameters serialize to JSON")
    with open(path, "w") as fh:
        json.dump(
            {
                "lam": params.lam,
                "mu": params.mu,
                "rho": params.rho,
                "nu": list(params.nu),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def read_params(path) -> MaterialParams:
    with open(path) as fh:
        d = json.load(fh)
    return MaterialParams(d["lam"], d["mu"], d["rho"], tuple(d["nu"]))


def write_report(path, report: ReconReport):
    with open(path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def read_report(path) -> ReconReport:
    with open(path) as fh:
        return ReconReport.from_json(fh.read())
