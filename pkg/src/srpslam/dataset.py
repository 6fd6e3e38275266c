"""On-disk dataset layout: write simulated runs, read them back.

A dataset directory holds ``manifest.txt`` (scenario metadata plus one line
per sweep file with its time span), ``imu.csv``, ``sweeps/sweep_%06d.csv``,
and ``ground_truth.tum``.  Writing is deterministic: the same scenario,
seed, and parameters produce byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from srpslam.errors import DatasetError, IoFailure
from srpslam.imu import ImuStream
from srpslam.scan import Sweep
from srpslam.simulator import (
    SimulatorParams,
    get_scenario,
    simulate_imu,
    simulate_sweeps,
)

SWEEP_NAME = "sweep_%06d.csv"


def write_tum(path, times: np.ndarray, positions: np.ndarray,
              quats: np.ndarray) -> None:
    """Plain-text trajectory: ``t x y z qx qy qz qw`` per line."""
    data = np.column_stack([times, positions, quats])
    with open(path, "w", encoding="utf-8") as fh:
        for row in data:
            fh.write(" ".join("%.9f" % v for v in row) + "\n")


def read_tum(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times, positions Nx3, quaternions Nx4 scalar-last)."""
    if not os.path.exists(path):
        raise DatasetError(f"missing trajectory file {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DatasetError(
                    f"{path} line {lineno}: expected 8 fields, got {len(parts)}"
                )
            rows.append([float(v) for v in parts])
    if not rows:
        raise DatasetError(f"trajectory file {path} has no poses")
    arr = np.asarray(rows)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8]


@dataclass
class SweepEntry:
    path: str
    t_start: float
    t_end: float


@dataclass
class Dataset:
    """Handle to a dataset directory; sweeps load lazily."""

    root: str
    meta: dict[str, str]
    sweeps: list[SweepEntry]
    imu: ImuStream
    ground_truth_path: str = ""
    _cache: dict[int, Sweep] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.sweeps)

    def sweep(self, index: int) -> Sweep:
        if index in self._cache:
            return self._cache[index]
        entry = self.sweeps[index]
        path = os.path.join(self.root, entry.path)
        if not os.path.exists(path):
            raise DatasetError(f"missing sweep file {path}")
        df = pd.read_csv(path)
        for col in ("t", "x", "y", "z", "ring"):
            if col not in df.columns:
                raise DatasetError(f"{path}: missing column '{col}'")
        sweep = Sweep(
            index=index,
            t_start=entry.t_start,
            t_end=entry.t_end,
            times=df["t"].to_numpy(float),
            points=df[["x", "y", "z"]].to_numpy(float),
            rings=df["ring"].to_numpy(np.int64),
        )
        self._cache[index] = sweep
        return sweep

    def iter_sweeps(self):
        for i in range(len(self.sweeps)):
            yield self.sweep(i)

    def ground_truth(self):
        return read_tum(self.ground_truth_path)


def make_dataset(scenario: str, seed: int, out_dir,
                 params: SimulatorParams | None = None) -> str:
    """Simulate a scenario and write it as a dataset directory."""
    params = params if params is not None else SimulatorParams()
    building, traj = get_scenario(scenario)
    rng = np.random.default_rng(seed)
    t_imu, gyro, accel = simulate_imu(traj, params, rng)
    sweeps = simulate_sweeps(traj, building, params, rng)

    out_dir = str(out_dir)
    sweep_dir = os.path.join(out_dir, "sweeps")
    try:
        os.makedirs(sweep_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create dataset directory: {exc}") from exc

    imu_df = pd.DataFrame(
        np.column_stack([t_imu, gyro, accel]),
        columns=["t", "gx", "gy", "gz", "ax", "ay", "az"],
    )
    imu_df.to_csv(
        os.path.join(out_dir, "imu.csv"), index=False, float_format="%.9f"
    )

    manifest = [
        f"scenario = {scenario}",
        f"seed = {seed}",
        f"sweep_hz = {params.sweep_hz!r}",
        f"imu_hz = {params.imu_hz!r}",
        f"n_azimuth = {params.n_azimuth}",
        "extrinsic_t = 0.0 0.0 0.0",
        "extrinsic_q = 0.0 0.0 0.0 1.0",
        "imu_file = imu.csv",
        "ground_truth = ground_truth.tum",
    ]
    for sw in sweeps:
        rel = os.path.join("sweeps", SWEEP_NAME % sw.index)
        df = pd.DataFrame(
            {
                "t": sw.times,
                "x": sw.points[:, 0],
                "y": sw.points[:, 1],
                "z": sw.points[:, 2],
                "ring": sw.rings,
            }
        )
        # x/y/z quantized to 0.1 mm — far below sensor noise; timestamps
        # keep ns-scale digits so column times stay strictly ordered
        df["t"] = df["t"].map(lambda v: "%.9f" % v)
        for col in ("x", "y", "z"):
            df[col] = df[col].map(lambda v: "%.4f" % v)
        df.to_csv(os.path.join(out_dir, rel), index=False)
        manifest.append(f"sweep = {rel} %.9f %.9f" % (sw.t_start, sw.t_end))

    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest) + "\n")

    t_ends = np.array([0.0] + [sw.t_end for sw in sweeps])
    out = traj.sample(t_ends)
    write_tum(
        os.path.join(out_dir, "ground_truth.tum"), t_ends, out["p"], out["q"]
    )
    return out_dir


def load_dataset(root) -> Dataset:
    root = str(root)
    manifest_path = os.path.join(root, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise DatasetError(f"missing manifest.txt in {root}")
    meta: dict[str, str] = {}
    entries: list[SweepEntry] = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rhs = line.partition("=")
            key, rhs = key.strip(), rhs.strip()
            if not _ or not key:
                raise DatasetError(
                    f"manifest.txt line {lineno}: expected key = value"
                )
            if key == "sweep":
                parts = rhs.split()
                if len(parts) != 3:
                    raise DatasetError(
                        f"manifest.txt line {lineno}: expected "
                        "'sweep = path t_start t_end'"
                    )
                entries.append(
                    SweepEntry(parts[0], float(parts[1]), float(parts[2]))
                )
            else:
                meta[key] = rhs

    imu_path = os.path.join(root, meta.get("imu_file", "imu.csv"))
    if not os.path.exists(imu_path):
        raise DatasetError(f"missing {os.path.basename(imu_path)} in {root}")
    df = pd.read_csv(imu_path)
    for col in ("t", "gx", "gy", "gz", "ax", "ay", "az"):
        if col not in df.columns:
            raise DatasetError(f"{imu_path}: missing column '{col}'")
    imu = ImuStream(
        df["t"].to_numpy(float),
        df[["gx", "gy", "gz"]].to_numpy(float),
        df[["ax", "ay", "az"]].to_numpy(float),
    )
    if not entries:
        raise DatasetError(f"manifest.txt in {root} lists no sweeps")
    return Dataset(
        root=root,
        meta=meta,
        sweeps=entries,
        imu=imu,
        ground_truth_path=os.path.join(
            root, meta.get("ground_truth", "ground_truth.tum")
        ),
    )


__all__ = [
    "Dataset",
    "SweepEntry",
    "load_dataset",
    "make_dataset",
    "read_tum",
    "write_tum",
]
