#!/usr/bin/env python3
"""Preprocessing walkthrough: write a synthetic face, rotate it flat, resize.

Draws a crude 'face' with deliberately tilted eyes, runs pose
normalization (note the 10-degree cap) and saves before/after PGMs next to
this script so they can be eyeballed with any image viewer.
"""

from pathlib import Path

import numpy as np

from mtfer.preprocess import (
    EyePair,
    applied_rotation_deg,
    eye_angle_deg,
    normalize_pixels,
    pose_normalize,
    resize_bilinear,
    write_pnm,
)

out_dir = Path(__file__).resolve().parent / "output"
out_dir.mkdir(exist_ok=True)

# a 120x100 'face': bright oval plus two dark eye blobs, tilted
h, w = 100, 120
yy, xx = np.mgrid[0:h, 0:w]
face = (((xx - 60) / 45.0) ** 2 + ((yy - 50) / 40.0) ** 2 < 1.0) * 180 + 30
left_eye, right_eye = (40, 38), (82, 52)   # strongly tilted eye line
for (ex, ey) in (left_eye, right_eye):
    face[((xx - ex) ** 2 + (yy - ey) ** 2) < 36] = 10
img = face.astype(np.uint8)
write_pnm(out_dir / "face_raw.pgm", img)

eyes = EyePair(left_eye, right_eye)
theta = eye_angle_deg(eyes)
applied = applied_rotation_deg(eyes)
print(f"measured eye angle: {theta:.2f} deg; applied rotation: {-applied:.2f} deg "
      f"(cap is 10)")

rotated = pose_normalize(img, eyes)
write_pnm(out_dir / "face_rotated.pgm", rotated)

small = resize_bilinear(rotated, 50, 50)
write_pnm(out_dir / "face_50x50.pgm", small)

tensor = normalize_pixels(small)
print(f"model input: shape {tensor.shape}, range [{tensor.min():.3f}, {tensor.max():.3f}]")
print(f"wrote face_raw.pgm, face_rotated.pgm, face_50x50.pgm under {out_dir}")
