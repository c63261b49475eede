"""Synthetic crowd generators for demos and tests.

Real benchmark corpora are external inputs; these generators produce files
in the same delimited format so the full pipeline can run without them.
Constant-velocity crowds use power-of-two friendly steps so linear
extrapolation is exact in floating point.
"""

from __future__ import annotations

import numpy as np

from .data import Scene, TrackPoint


def constant_velocity_scene(n_peds=4, n_frames=24, frame_stride=10, seed=0, scene_id="cv"):
    """Pedestrians walking in exact straight lines at constant speed.

    Starts and velocities are multiples of 1/64 m so every future position
    is exactly representable and exactly reachable by repeated addition.
    """
    rng = np.random.default_rng(seed)
    points = []
    for ped in range(1, n_peds + 1):
        start = rng.integers(-256, 256, size=2) / 64.0 * 4.0
        vel = rng.integers(-32, 33, size=2) / 64.0
        pos = start.copy()
        for k in range(n_frames):
            points.append(TrackPoint(frame_id=k * frame_stride, ped_id=ped,
                                     x=float(pos[0]), y=float(pos[1])))
            pos = pos + vel
    points.sort(key=lambda p: (p.frame_id, p.ped_id))
    return Scene(points=points, frame_stride=frame_stride, scene_id=scene_id)


def wandering_crowd_scene(n_peds=6, n_frames=40, frame_stride=10, seed=0,
                          scene_id="crowd", speed=0.5, turn=0.15):
    """Smoothly wandering pedestrians with mildly varying headings."""
    rng = np.random.default_rng(seed)
    points = []
    for ped in range(1, n_peds + 1):
        pos = rng.uniform(-6.0, 6.0, size=2)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        step_speed = speed * rng.uniform(0.6, 1.4)
        for k in range(n_frames):
            points.append(TrackPoint(frame_id=k * frame_stride, ped_id=ped,
                                     x=float(pos[0]), y=float(pos[1])))
            heading += turn * rng.standard_normal()
            pos = pos + step_speed * np.array([np.cos(heading), np.sin(heading)])
    points.sort(key=lambda p: (p.frame_id, p.ped_id))
    return Scene(points=points, frame_stride=frame_stride, scene_id=scene_id)


def scene_to_text(scene):
    """Render a scene in the default frame/ped/x/y column order."""
    lines = [f"{p.frame_id}\t{p.ped_id}\t{p.x!r}\t{p.y!r}" for p in scene.points]
    return "\n".join(lines) + "\n"


def write_scene(scene, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(scene_to_text(scene))
