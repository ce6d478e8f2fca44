"""Result persistence: CSV summaries, a small binary array format, JSON.

The binary format is deliberately minimal: magic ``SMP1``, then version,
kind and shape as little-endian uint32, then the payload as little-endian
float64.  One array per file.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from .bsde import BasisTransform, BsdeSolution, RegressionBasis
from .forward import PathEnsemble
from .reports import VerificationReport

Array = np.ndarray

MAGIC = b"SMP1"
FORMAT_VERSION = 1

KIND_GENERIC = 0
KIND_STATES = 1
KIND_CONTROLS = 2
KIND_COSTATE = 3
KIND_Z = 4


def write_array(path, arr: Array, kind: int = KIND_GENERIC) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float), dtype="<f8")
    header = np.array([FORMAT_VERSION, kind, arr.ndim, *arr.shape], dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.tobytes())
        fh.write(arr.tobytes())


def read_array(path):
    """Read one array file; returns (kind, array)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise IOError(f"{path}: not an SMP1 array file")
        head = np.frombuffer(fh.read(12), dtype="<u4")
        version, kind, ndim = (int(v) for v in head)
        if version != FORMAT_VERSION:
            raise IOError(f"{path}: unsupported format version {version}")
        shape = tuple(int(v) for v in np.frombuffer(fh.read(4 * ndim), dtype="<u4"))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if data.size != count:
            raise IOError(f"{path}: truncated payload")
    return kind, data.reshape(shape).copy()


def save_ensemble(prefix, ensemble: PathEnsemble) -> List[Path]:
    """Write states and controls next to each other; returns the paths."""
    prefix = Path(prefix)
    paths = [
        prefix.with_name(prefix.name + "_states.smp"),
        prefix.with_name(prefix.name + "_controls.smp"),
    ]
    write_array(paths[0], ensemble.states, KIND_STATES)
    write_array(paths[1], ensemble.controls, KIND_CONTROLS)
    return paths


def save_costates(prefix, solution: BsdeSolution) -> List[Path]:
    prefix = Path(prefix)
    paths = [
        prefix.with_name(prefix.name + "_y.smp"),
        prefix.with_name(prefix.name + "_z.smp"),
    ]
    write_array(paths[0], solution.Y, KIND_COSTATE)
    write_array(paths[1], solution.Z, KIND_Z)
    return paths


def write_curves_csv(path, curves: Dict[str, Array]) -> None:
    """Column-per-curve CSV; shorter curves leave trailing cells empty."""
    names = sorted(curves)
    cols = [np.atleast_1d(np.asarray(curves[k])) for k in names]
    length = max((c.shape[0] for c in cols), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow(
                [repr(float(c[i])) if i < c.shape[0] else "" for c in cols]
            )


def write_paths_csv(path, ensemble: PathEnsemble, max_paths: int = 100) -> None:
    """Long-format trajectory dump of the first ``max_paths`` paths."""
    times = ensemble.grid.times()
    P = min(ensemble.n_paths, max_paths)
    n = ensemble.state_dim
    k = ensemble.controls.shape[2]
    header = ["path", "step", "time"]
    header += [f"x{j}" for j in range(n)]
    header += [f"u{j}" for j in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in range(P):
            for i in range(times.shape[0]):
                row = [p, i, repr(float(times[i]))]
                row += [repr(float(v)) for v in ensemble.states[p, i]]
                if i < ensemble.controls.shape[1]:
                    row += [repr(float(v)) for v in ensemble.controls[p, i]]
                else:
                    row += [""] * k
                writer.writerow(row)


def write_reports_csv(path, reports: List[VerificationReport]) -> None:
    fields = ["check", "status", "statistic", "tolerance", "n_samples", "standard_error", "notes"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in reports:
            d = r.to_dict()
            writer.writerow([d.get(f, "") for f in fields])


def jsonable(obj):
    """Coerce numpy containers and scalars into JSON-ready structures."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_results_json(path, payload: dict) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline.

    With identical payloads this writes identical bytes, which is what the
    reproducibility check diffs (after dropping the metadata block).
    """
    with open(path, "w") as fh:
        json.dump(jsonable(payload), fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def _transform_to_dict(t: BasisTransform) -> dict:
    return {
        "shift": np.asarray(t.shift).tolist(),
        "scale": np.asarray(t.scale).tolist(),
        "degenerate": bool(t.degenerate),
        "laguerre_loc": t.laguerre_loc,
        "reciprocal_shift": t.reciprocal_shift,
        "reciprocal_scale": t.reciprocal_scale,
    }


def _transform_from_dict(d: dict) -> BasisTransform:
    return BasisTransform(
        shift=np.asarray(d["shift"], dtype=float),
        scale=np.asarray(d["scale"], dtype=float),
        degenerate=bool(d["degenerate"]),
        laguerre_loc=d.get("laguerre_loc"),
        reciprocal_shift=d.get("reciprocal_shift"),
        reciprocal_scale=d.get("reciprocal_scale"),
    )


def write_coefficients_json(path, solution: BsdeSolution) -> None:
    """Persist the fitted costate surfaces (not the per-path values)."""
    payload = {
        "basis": {
            "family": solution.basis.family,
            "degree": solution.basis.degree,
            "reciprocal": solution.basis.reciprocal,
        },
        "grid": {"horizon": solution.grid.horizon, "steps": solution.grid.steps},
        "state_dim": solution.state_dim,
        "terminal_kind": solution.terminal_kind,
        "condition_numbers": [float(c) for c in solution.condition_numbers],
        "ridge_steps": list(solution.ridge_steps),
        "steps": [
            {
                "transform": _transform_to_dict(solution.transforms[i]),
                "y": np.asarray(solution.y_coeffs[i]).tolist(),
                "y_cond": np.asarray(solution.y_cond_coeffs[i]).tolist(),
                "z": np.asarray(solution.z_coeffs[i]).tolist(),
            }
            for i in range(solution.grid.steps)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass
class CostateSurface:
    """Reloaded costate surfaces, evaluable without the original paths."""

    basis: RegressionBasis
    transforms: list
    y_coeffs: list
    state_dim: int

    def y_at(self, step: int, x) -> Array:
        x = np.asarray(x, dtype=float)
        design = self.basis.design(x, self.transforms[step])
        return design @ self.y_coeffs[step]


def load_costate_surface(path) -> CostateSurface:
    with open(path) as fh:
        payload = json.load(fh)
    basis = RegressionBasis(**payload["basis"])
    transforms = [_transform_from_dict(s["transform"]) for s in payload["steps"]]
    y_coeffs = [np.asarray(s["y"], dtype=float) for s in payload["steps"]]
    return CostateSurface(
        basis=basis,
        transforms=transforms,
        y_coeffs=y_coeffs,
        state_dim=int(payload["state_dim"]),
    )
