"""Blendshape-to-mesh transform, synthetic rig templates, vertex-error metrics.

The rig is a neutral mesh plus 52 template meshes sharing one topology.
"literal" blending reproduces the published linear-weighting form
V = sum_i beta_i * V_i; "delta" blending (the default) anchors at the
neutral shape, V = V_neutral + sum_i beta_i * (V_i - V_neutral), so a zero
coefficient vector yields a valid resting face.

Geometry is in meters internally; metrics are reported in millimeters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .data import (BlendshapeSequence, N_CHANNELS, LIP_CHANNELS, BROW_CHANNELS,
                   read_mask, write_mask)

METERS_TO_MM = 1000.0
PAPER_VERTEX_COUNT = 5023


@dataclass
class RigTemplateSet:
    neutral: np.ndarray                 # V x 3, meters
    templates: np.ndarray               # 52 x V x 3
    lip_vertices: np.ndarray            # index set
    eye_forehead_vertices: np.ndarray   # index set
    faces: np.ndarray | None = None     # F x 3, for OBJ export

    def __post_init__(self):
        self.neutral = np.asarray(self.neutral, dtype=np.float64)
        self.templates = np.asarray(self.templates, dtype=np.float64)
        V = self.neutral.shape[0]
        if self.neutral.shape != (V, 3):
            raise ValueError("neutral must be V x 3")
        if self.templates.shape != (N_CHANNELS, V, 3):
            raise ValueError(f"templates must be {N_CHANNELS} x V x 3")
        for name in ("lip_vertices", "eye_forehead_vertices"):
            mask = np.asarray(getattr(self, name), dtype=np.int64)
            setattr(self, name, mask)
            if len(mask) == 0:
                raise ValueError(f"{name} must be nonempty")
            if mask.min() < 0 or mask.max() >= V:
                raise ValueError(f"{name} references invalid vertex indices")

    @property
    def n_vertices(self) -> int:
        return self.neutral.shape[0]


def blend(rig: RigTemplateSet, coeffs: np.ndarray, mode: str = "delta") -> np.ndarray:
    """Blend the 52 templates under one coefficient vector."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (N_CHANNELS,):
        raise ValueError(f"need exactly {N_CHANNELS} coefficients, got {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("coefficients must be finite")
    if mode == "literal":
        return np.einsum("i,ivx->vx", coeffs, rig.templates)
    if mode == "delta":
        deltas = rig.templates - rig.neutral[None]
        return rig.neutral + np.einsum("i,ivx->vx", coeffs, deltas)
    raise ValueError(f"unknown blend mode: {mode!r}")


def blend_sequence(rig: RigTemplateSet, seq: BlendshapeSequence,
                   mode: str = "delta") -> np.ndarray:
    """Frame-wise blending; returns a T x V x 3 vertex sequence."""
    if mode == "literal":
        return np.einsum("ti,ivx->tvx", seq.coeffs, rig.templates)
    if mode == "delta":
        deltas = rig.templates - rig.neutral[None]
        return rig.neutral[None] + np.einsum("ti,ivx->tvx", seq.coeffs, deltas)
    raise ValueError(f"unknown blend mode: {mode!r}")


def _check_vertex_args(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> np.ndarray:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError("pred and gt must be matching T x V x 3 arrays")
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValueError("vertex mask is empty")
    return mask


def lve(pred: np.ndarray, gt: np.ndarray, lip_mask: np.ndarray) -> float:
    """Per-frame max Euclidean error over lip vertices, averaged; millimeters."""
    mask = _check_vertex_args(pred, gt, lip_mask)
    dist = np.linalg.norm(pred[:, mask] - gt[:, mask], axis=2)
    return float(dist.max(axis=1).mean() * METERS_TO_MM)


def eve(pred: np.ndarray, gt: np.ndarray, eye_forehead_mask: np.ndarray) -> float:
    """Same max-error statistic over the eye/forehead vertex set; millimeters."""
    return lve(pred, gt, eye_forehead_mask)


def lip_avg_error(pred: np.ndarray, gt: np.ndarray, lip_mask: np.ndarray) -> float:
    """Mean Euclidean error over lip vertices and frames; millimeters."""
    mask = _check_vertex_args(pred, gt, lip_mask)
    dist = np.linalg.norm(pred[:, mask] - gt[:, mask], axis=2)
    return float(dist.mean() * METERS_TO_MM)


def _fibonacci_sphere(V: int, radius: float = 0.1) -> np.ndarray:
    # Deterministic, roughly uniform point set on a head-sized sphere.
    i = np.arange(V, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / V
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return radius * pts


def make_synthetic_rig(V: int = 600, seed: int = 0,
                       with_faces: bool = True) -> RigTemplateSet:
    """Desk-scale stand-in for a sculpted 52-template head rig.

    Vertex regions follow the channel grouping: the first third of the index
    range hosts the lip templates, the next third the brow/eye templates, the
    rest everything else. Template i differs from the neutral mesh only by a
    smooth localized bump inside its designated region.
    """
    region_bounds = (0, V // 3, 2 * V // 3, V)
    if region_bounds[1] < 4:
        raise ValueError(f"V={V} is too small to carve vertex regions")
    lip_region = np.arange(region_bounds[0], region_bounds[1])
    eye_region = np.arange(region_bounds[1], region_bounds[2])
    other_region = np.arange(region_bounds[2], region_bounds[3])

    neutral = _fibonacci_sphere(V)
    rng = np.random.default_rng(seed)
    templates = np.empty((N_CHANNELS, V, 3))
    for i in range(N_CHANNELS):
        if i in LIP_CHANNELS:
            region = lip_region
        elif i in BROW_CHANNELS:
            region = eye_region
        else:
            region = other_region
        center = neutral[rng.choice(region)]
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        amp = rng.uniform(0.005, 0.02)  # 5-20 mm bumps
        sigma = rng.uniform(0.02, 0.05)
        d2 = np.sum((neutral[region] - center) ** 2, axis=1)
        bump = amp * np.exp(-d2 / (2.0 * sigma ** 2))
        template = neutral.copy()
        template[region] += bump[:, None] * direction
        templates[i] = template

    faces = ConvexHull(neutral).simplices if with_faces else None
    return RigTemplateSet(neutral=neutral, templates=templates,
                          lip_vertices=lip_region, eye_forehead_vertices=eye_region,
                          faces=faces)


def save_rig(path: str | os.PathLike, rig: RigTemplateSet) -> None:
    np.savez_compressed(
        path, neutral=rig.neutral, templates=rig.templates,
        lip_vertices=rig.lip_vertices,
        eye_forehead_vertices=rig.eye_forehead_vertices,
        faces=rig.faces if rig.faces is not None else np.zeros((0, 3), dtype=np.int64))


def load_rig(path: str | os.PathLike, lip_mask_file: str | None = None,
             eye_mask_file: str | None = None) -> RigTemplateSet:
    """Load a rig archive; external mask files override the stored index sets."""
    with np.load(path) as z:
        faces = z["faces"]
        rig = RigTemplateSet(
            neutral=z["neutral"], templates=z["templates"],
            lip_vertices=(read_mask(lip_mask_file) if lip_mask_file
                          else z["lip_vertices"]),
            eye_forehead_vertices=(read_mask(eye_mask_file) if eye_mask_file
                                   else z["eye_forehead_vertices"]),
            faces=faces if len(faces) else None)
    return rig


def write_mask_files(out_dir: str | os.PathLike, rig: RigTemplateSet) -> None:
    write_mask(os.path.join(out_dir, "lip_vertices.txt"), rig.lip_vertices)
    write_mask(os.path.join(out_dir, "eye_forehead_vertices.txt"),
               rig.eye_forehead_vertices)


def write_obj(path: str | os.PathLike, vertices: np.ndarray,
              faces: np.ndarray | None = None) -> None:
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValueError("vertices must be V x 3")
    with open(path, "w") as f:
        for v in vertices:
            f.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
        if faces is not None:
            for face in np.asarray(faces):
                f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


def export_obj_sequence(out_dir: str | os.PathLike, rig: RigTemplateSet,
                        seq: BlendshapeSequence, mode: str = "delta") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    verts = blend_sequence(rig, seq, mode=mode)
    paths = []
    for t in range(verts.shape[0]):
        path = os.path.join(str(out_dir), f"frame_{t:05d}.obj")
        write_obj(path, verts[t], rig.faces)
        paths.append(path)
    return paths
