"""Persistence: clouds (PLY), images (PNG / NPY), scenes, traces, metrics.

The PLY layout matches the splatting ecosystem's de-facto convention — a
binary little-endian vertex table with positions, per-channel DC and rest SH
coefficients, opacity logit, log sizes and quaternion — so clouds trained
here open in standard viewers and vice versa.  Properties are float32 on
disk; round-trips are exact to ~1e-6 for desk-scale value ranges.

Images: 8-bit PNG with a gamma-2.2 transfer curve for anything meant for
eyes, and raw float64 ``.npy`` for anything meant for arithmetic (scene
ground truth goes through .npy so training targets survive bit-exactly).

A scene directory is a ``scene.json`` manifest (cameras with intrinsics,
4x4 world-to-camera, image paths relative to the manifest, and a disjoint
train/test split) plus its image files and optional PLY clouds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from .core import (
    FLOAT,
    Camera,
    FormatError,
    GaussianCloud,
    InvalidParameterError,
    sh_degree_from_count,
)

GAMMA = 2.2


# ---------------------------------------------------------------------------
# cloud <-> PLY
# ---------------------------------------------------------------------------

def _ply_property_names(sh_k: int) -> List[str]:
    names = ["x", "y", "z"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (sh_k - 1))]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write ``cloud`` as a binary little-endian PLY vertex table.

    Sizes are stored as logs (ecosystem convention: positive sizes become
    unbounded scale properties); SH rest coefficients are laid out
    channel-major (all of channel R's higher-order terms, then G, then B).
    """
    cloud.validate()
    k = cloud.sh_coeffs.shape[1]
    names = _ply_property_names(k)
    n = cloud.count

    cols = [cloud.positions,
            cloud.sh_coeffs[:, 0, :]]                      # DC: (N, 3)
    if k > 1:
        # (N, K-1, 3) -> channel-major (N, 3*(K-1))
        rest = cloud.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)
        cols.append(rest)
    cols.append(cloud.opacity_logits[:, None])
    cols.append(np.log(cloud.sizes))
    cols.append(cloud.rotations)
    table = np.concatenate(cols, axis=1).astype("<f4")

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(table).tobytes())


def load_ply(path) -> GaussianCloud:
    """Read a cloud written by :func:`save_ply` (or a compatible viewer file).

    Unknown extra properties are ignored.  Raises FormatError for a missing
    or truncated header, a non-float/little-endian layout, missing required
    properties, an SH coefficient count that is not 3*((L+1)^2 - 1), or
    non-finite values (the error names the first offending vertex index).
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read PLY: {exc}") from exc

    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError("not a PLY file (missing header)")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    n_vertex: Optional[int] = None
    props: List[str] = []
    in_vertex = False
    for line in header_lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise FormatError(f"unsupported PLY format {parts[1]!r}")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] != "float":
                raise FormatError(f"unsupported property type {parts[1]!r}")
            props.append(parts[2])
    if n_vertex is None:
        raise FormatError("PLY has no vertex element")

    dtype = np.dtype([(p, "<f4") for p in props])
    want = n_vertex * dtype.itemsize
    if len(body) < want:
        raise FormatError(f"PLY body truncated: {len(body)} < {want} bytes")
    data = np.frombuffer(body[:want], dtype=dtype)

    def col(name: str) -> np.ndarray:
        if name not in props:
            raise FormatError(f"PLY is missing property {name!r}")
        return data[name].astype(FLOAT)

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise FormatError(f"f_rest count {n_rest} is not divisible by 3")
    k = n_rest // 3 + 1
    try:
        sh_degree_from_count(k)
    except InvalidParameterError as exc:
        raise FormatError(str(exc)) from exc

    positions = np.stack([col("x"), col("y"), col("z")], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    sh = np.zeros((n_vertex, k, 3), dtype=FLOAT)
    sh[:, 0, :] = dc
    if k > 1:
        rest = np.stack([col(f"f_rest_{i}") for i in range(3 * (k - 1))], axis=1)
        sh[:, 1:, :] = rest.reshape(n_vertex, 3, k - 1).transpose(0, 2, 1)
    sizes = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rotations = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    opacity = col("opacity")

    for name, arr in (("positions", positions), ("sizes", sizes),
                      ("rotations", rotations), ("opacity", opacity),
                      ("sh", sh)):
        bad = ~np.isfinite(arr.reshape(n_vertex, -1)).all(axis=1)
        if bad.any():
            raise FormatError(
                f"non-finite {name} at vertex {int(np.flatnonzero(bad)[0])}")
    return GaussianCloud(positions=positions, sizes=sizes, rotations=rotations,
                         opacity_logits=opacity, sh_coeffs=sh)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def save_image(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1]: 8-bit gamma-encoded PNG, or raw .npy."""
    image = np.asarray(image, dtype=FLOAT)
    if image.ndim != 3 or image.shape[2] != 3 or not np.all(np.isfinite(image)):
        raise InvalidParameterError("expected a finite (H, W, 3) image")
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, image)
        return
    encoded = np.clip(image, 0.0, 1.0) ** (1.0 / GAMMA)
    quantized = np.round(encoded * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Read an image to float64 (H, W, 3) in [0, 1], undoing PNG gamma."""
    path = Path(path)
    if path.suffix == ".npy":
        try:
            arr = np.load(path)
        except (OSError, ValueError) as exc:
            raise FormatError(f"cannot read image {path}: {exc}") from exc
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise FormatError(f"array image {path} has shape {arr.shape}")
        return np.asarray(arr, dtype=FLOAT)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=FLOAT) / 255.0
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return arr ** GAMMA


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

@dataclass
class Scene:
    """Cameras (with loaded ground truth) plus a train/test split and clouds."""

    cameras: List[Camera]
    train_ids: List[int]
    test_ids: List[int]
    init_cloud: Optional[GaussianCloud] = None
    gt_cloud: Optional[GaussianCloud] = None

    def camera_by_id(self, camera_id: int) -> Camera:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise InvalidParameterError(f"no camera with id {camera_id}")

    @property
    def train_cameras(self) -> List[Camera]:
        return [self.camera_by_id(i) for i in self.train_ids]

    @property
    def test_cameras(self) -> List[Camera]:
        return [self.camera_by_id(i) for i in self.test_ids]

    def validate(self) -> None:
        ids = [cam.camera_id for cam in self.cameras]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate camera ids in scene")
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise FormatError(f"cameras {sorted(overlap)} are in both train and test")
        known = set(ids)
        for i in list(self.train_ids) + list(self.test_ids):
            if i not in known:
                raise FormatError(f"split references unknown camera id {i}")
        for cam in self.cameras:
            cam.validate()


def save_scene(scene: Scene, out_dir, image_format: str = "npy",
               png_previews: bool = True) -> Path:
    """Write a scene directory; returns the manifest path.

    Ground-truth images go to ``images/`` in ``image_format`` ("npy" keeps
    them lossless and is what the manifest references); optional PNG previews
    are written alongside for quick inspection.  Clouds, when present, are
    saved as ``init.ply`` / ``gt.ply``.
    """
    scene.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    cams_json = []
    for cam in sorted(scene.cameras, key=lambda c: c.camera_id):
        entry = {
            "id": cam.camera_id,
            "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "world_to_camera": cam.world_to_camera.tolist(),
        }
        if cam.gt_image is not None:
            rel = f"images/cam_{cam.camera_id:04d}.{image_format}"
            save_image(out_dir / rel, cam.gt_image)
            entry["image"] = rel
            if png_previews and image_format != "png":
                save_image(out_dir / f"images/cam_{cam.camera_id:04d}.png",
                           cam.gt_image)
        cams_json.append(entry)
    manifest = {
        "cameras": cams_json,
        "train_ids": sorted(int(i) for i in scene.train_ids),
        "test_ids": sorted(int(i) for i in scene.test_ids),
    }
    if scene.init_cloud is not None:
        save_ply(scene.init_cloud, out_dir / "init.ply")
        manifest["init_cloud"] = "init.ply"
    if scene.gt_cloud is not None:
        save_ply(scene.gt_cloud, out_dir / "gt.ply")
        manifest["gt_cloud"] = "gt.ply"
    path = out_dir / "scene.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_scene(manifest_path) -> Scene:
    """Read a scene directory back; image paths resolve against the manifest.

    Raises FormatError for malformed JSON, duplicate ids, overlapping splits,
    unreadable images, or an image whose size disagrees with its camera.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "scene.json"
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read scene manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"scene manifest is not valid JSON: {exc}") from exc

    base = manifest_path.parent
    cameras = []
    for entry in manifest.get("cameras", []):
        try:
            gt = load_image(base / entry["image"]) if "image" in entry else None
            cam = Camera(
                camera_id=int(entry["id"]),
                width=int(entry["width"]), height=int(entry["height"]),
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                world_to_camera=np.array(entry["world_to_camera"], dtype=FLOAT),
                gt_image=gt,
                image_name=entry.get("image"))
        except KeyError as exc:
            raise FormatError(f"camera entry missing field {exc}") from exc
        except InvalidParameterError as exc:
            raise FormatError(f"camera {entry.get('id')}: {exc}") from exc
        cameras.append(cam)
    cameras.sort(key=lambda c: c.camera_id)

    scene = Scene(cameras=cameras,
                  train_ids=[int(i) for i in manifest.get("train_ids", [])],
                  test_ids=[int(i) for i in manifest.get("test_ids", [])])
    if "init_cloud" in manifest:
        scene.init_cloud = load_ply(base / manifest["init_cloud"])
    if "gt_cloud" in manifest:
        scene.gt_cloud = load_ply(base / manifest["gt_cloud"])
    scene.validate()
    return scene


# ---------------------------------------------------------------------------
# traces and metrics
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("iteration", "n_gaussians", "loss", "psnr_probe",
                 "n_pruned", "n_split")


def write_trace_csv(path, rows: Sequence[dict]) -> None:
    """Write per-iteration training rows; floats keep full repr precision."""
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            out = []
            for name in TRACE_COLUMNS:
                val = row.get(name)
                if val is None:
                    out.append("")
                elif isinstance(val, float):
                    out.append(repr(val))
                else:
                    out.append(str(int(val)))
            writer.writerow(out)


def read_trace_csv(path) -> List[dict]:
    """Read a trace written by :func:`write_trace_csv` (floats bit-exact)."""
    import csv as _csv
    try:
        with open(path, newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader, None)
            if header != list(TRACE_COLUMNS):
                raise FormatError(f"unexpected trace header: {header}")
            rows = []
            for line in reader:
                row: dict = {}
                for name, val in zip(TRACE_COLUMNS, line):
                    if val == "":
                        row[name] = None
                    elif name in ("iteration", "n_gaussians", "n_pruned", "n_split"):
                        row[name] = int(val)
                    else:
                        row[name] = float(val)
                rows.append(row)
    except OSError as exc:
        raise FormatError(f"cannot read trace: {exc}") from exc
    return rows


def write_metrics_json(path, metrics: dict) -> None:
    """Write an evaluation report with stable key order (idempotent bytes)."""
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read metrics: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"metrics file is not valid JSON: {exc}") from exc
