"""On-disk dataset layout: ``images/*.pgm``, ``poses.json`` and ``meta.json``.

16-bit images hold raw counts and are mapped through the calibration and
sequence extrema recorded in ``meta.json``; 8-bit images already hold
normalized thermal values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, Pose, SceneBox
from .thermal_image import (
    RawThermalImage,
    ThermalImage,
    calibration_from_meta,
    encode_pgm8,
    encode_pgm16,
    read_thermal_pgm,
    stats_from_meta,
    thermal_map,
)


class DatasetError(ValueError):
    pass


@dataclass
class DatasetBundle:
    images: list[ThermalImage]
    poses: list[Pose]
    intrinsics: Intrinsics
    scene_box: SceneBox
    near: float
    far: float
    meta: dict = field(default_factory=dict)
    splits: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.poses):
            raise DatasetError(f"{len(self.images)} images but {len(self.poses)} poses")
        if not self.splits:
            self.splits = ["train"] * len(self.images)
        if not self.names:
            self.names = [f"{i:03d}.pgm" for i in range(len(self.images))]
        if not 0 <= self.near < self.far:
            raise DatasetError(f"invalid near/far {self.near}/{self.far}")

    def indices(self, split: str = "train") -> list[int]:
        if split == "all":
            return list(range(len(self.images)))
        return [i for i, s in enumerate(self.splits) if s == split]

    def stack(self, split: str = "train") -> np.ndarray:
        return np.stack([self.images[i].values for i in self.indices(split)])


def save_dataset(bundle: DatasetBundle, root: str | Path, bit_depth: int = 16) -> None:
    """Write the standard layout.

    16-bit mode stores counts = round(value * 65535) with k=1, b=0 and
    recorded extrema (0, 65535), so reloading maps counts straight back.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    for img, pose, name, split in zip(bundle.images, bundle.poses, bundle.names, bundle.splits):
        path = root / "images" / name
        if bit_depth == 16:
            counts = np.round(np.clip(img.values, 0, 1) * 65535).astype(np.uint16)
            path.write_bytes(encode_pgm16(RawThermalImage(img.width, img.height, counts)))
        elif bit_depth == 8:
            path.write_bytes(encode_pgm8(img))
        else:
            raise ValueError("bit_depth must be 8 or 16")
        frames.append({"image": f"images/{name}", "transform": pose.matrix().ravel().tolist(), "split": split})
    poses = {
        "intrinsics": bundle.intrinsics.to_dict(),
        "scene_box": {"min": bundle.scene_box.min_corner.tolist(), "max": bundle.scene_box.max_corner.tolist()},
        "near": bundle.near,
        "far": bundle.far,
        "frames": frames,
    }
    (root / "poses.json").write_text(json.dumps(poses, indent=1))
    meta = dict(bundle.meta)
    if bit_depth == 16:
        meta.update(k=1.0, b=0.0, t_min=0.0, t_max=65535.0)
    (root / "meta.json").write_text(json.dumps(meta, indent=1))


def validate_layout(root: str | Path) -> list[str]:
    """Every problem with a dataset directory, empty when it is usable."""
    root = Path(root)
    errors = []
    if not (root / "poses.json").is_file():
        return [f"{root}: missing poses.json"]
    if not (root / "meta.json").is_file():
        errors.append(f"{root}: missing meta.json")
    try:
        poses = json.loads((root / "poses.json").read_text())
    except json.JSONDecodeError as exc:
        return errors + [f"poses.json: {exc}"]
    for key in ("intrinsics", "scene_box", "near", "far", "frames"):
        if key not in poses:
            errors.append(f"poses.json: missing {key!r}")
    if errors:
        return errors
    try:
        Intrinsics(**poses["intrinsics"])
    except (TypeError, ValueError) as exc:
        errors.append(f"poses.json intrinsics: {exc}")
    if not 0 <= poses["near"] < poses["far"]:
        errors.append("poses.json: need 0 <= near < far")
    if not poses["frames"]:
        errors.append("poses.json: no frames")
    for i, fr in enumerate(poses["frames"]):
        if not (root / fr.get("image", "")).is_file():
            errors.append(f"frame {i}: image {fr.get('image')!r} not found")
        if len(fr.get("transform", [])) != 16:
            errors.append(f"frame {i}: transform must have 16 numbers")
    return errors


def load_dataset(root: str | Path) -> DatasetBundle:
    root = Path(root)
    errors = validate_layout(root)
    if errors:
        raise DatasetError("; ".join(errors))
    poses = json.loads((root / "poses.json").read_text())
    meta = json.loads((root / "meta.json").read_text())
    frames = poses["frames"]
    decoded = [read_thermal_pgm((root / fr["image"]).read_bytes()) for fr in frames]
    raw = [d for d in decoded if isinstance(d, RawThermalImage)]
    if raw and len(raw) != len(decoded):
        raise DatasetError("dataset mixes 16-bit raw and 8-bit normalized images")
    if raw:
        images, stats = thermal_map(raw, calibration_from_meta(meta), stats_from_meta(meta))
        meta = meta | {"t_min": stats.t_min, "t_max": stats.t_max}
    else:
        images = decoded
    box = poses["scene_box"]
    return DatasetBundle(
        images=images,
        poses=[Pose.from_matrix(np.reshape(fr["transform"], (4, 4))) for fr in frames],
        intrinsics=Intrinsics(**poses["intrinsics"]),
        scene_box=SceneBox(np.array(box["min"], float), np.array(box["max"], float)),
        near=float(poses["near"]),
        far=float(poses["far"]),
        meta=meta,
        splits=[fr.get("split", "train") for fr in frames],
        names=[Path(fr["image"]).name for fr in frames],
    )
