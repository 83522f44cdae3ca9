"""Procedural face-like corpus for desk-scale runs and tests.

Identity lives mostly in mid-frequency texture (two oriented gratings with
identity-locked phase) and facial geometry, with colors drawn from a
narrow shared band; that is the regime where plain interpolation loses the
discriminative detail. Per-image variation is low-frequency (placement,
brightness, illumination gradient, noise) so sharp detail is stable within
an identity while genuine pairs stay non-trivial.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import HIGH_RES, save_image


@dataclass(frozen=True)
class IdentityParams:
    background: np.ndarray  # (3,)
    skin: np.ndarray  # (3,)
    face_center: tuple[float, float]
    face_radii: tuple[float, float]
    eye_dx: float
    eye_y: float
    eye_radius: float
    eye_color: np.ndarray
    mouth_y: float
    mouth_half_width: float
    mouth_color: np.ndarray
    grating_freqs: tuple[float, float]
    grating_angles: tuple[float, float]
    grating_amps: tuple[float, float]
    grating_phases: tuple[float, float]


def _identity_params(rng: np.random.Generator) -> IdentityParams:
    return IdentityParams(
        background=0.5 + rng.uniform(-0.04, 0.04, size=3),
        skin=0.62 + rng.uniform(-0.05, 0.05, size=3),
        face_center=(56.0 + rng.uniform(-4, 4), 58.0 + rng.uniform(-4, 4)),
        face_radii=(rng.uniform(28, 40), rng.uniform(36, 48)),
        eye_dx=rng.uniform(10, 18),
        eye_y=rng.uniform(-20, -6),
        eye_radius=rng.uniform(3.5, 7.0),
        eye_color=rng.uniform(0.0, 0.2, size=3),
        mouth_y=rng.uniform(12, 26),
        mouth_half_width=rng.uniform(7, 17),
        mouth_color=np.array(
            [rng.uniform(0.25, 0.55), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)]
        ),
        grating_freqs=(rng.uniform(4.0, 8.0), rng.uniform(8.0, 14.0)),
        grating_angles=(rng.uniform(0.0, np.pi), rng.uniform(0.0, np.pi)),
        grating_amps=(rng.uniform(0.12, 0.2), rng.uniform(0.08, 0.14)),
        grating_phases=(rng.uniform(0.0, 2 * np.pi), rng.uniform(0.0, 2 * np.pi)),
    )


def render_face(
    params: IdentityParams, rng: np.random.Generator, size: int = HIGH_RES
) -> np.ndarray:
    """Render one jittered image of the identity as size x size x 3.

    High-frequency content (texture phase, feature shapes) is locked to the
    identity and moves rigidly with the face; per-image variation is
    low-frequency: slight placement (the corpus is pre-aligned, as face
    verification crops are), brightness, a soft illumination gradient, and
    mild noise.
    """
    shift = rng.uniform(-1.5, 1.5, size=2)
    brightness = rng.uniform(0.92, 1.08)
    geom = rng.uniform(0.97, 1.03, size=3)  # eye radius, mouth width, face radii

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = params.face_center[0] + shift[0]
    cy = params.face_center[1] + shift[1]
    rx = params.face_radii[0] * geom[2]
    ry = params.face_radii[1] * geom[2]

    img = np.empty((size, size, 3))
    img[:] = params.background

    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    img[face] = params.skin

    # texture coordinates follow the face center, so the identity signature
    # is invariant to the placement jitter
    texture = np.zeros((size, size))
    for freq, angle, amp, phase in zip(
        params.grating_freqs,
        params.grating_angles,
        params.grating_amps,
        params.grating_phases,
    ):
        coord = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
        texture += amp * np.sin(2.0 * np.pi * freq * coord / size + phase)
    img[face] += texture[face, None]

    eye_r = params.eye_radius * geom[0]
    for side in (-1.0, 1.0):
        ex = cx + side * params.eye_dx
        ey = cy + params.eye_y
        eye = (xx - ex) ** 2 + (yy - ey) ** 2 <= eye_r**2
        img[eye] = params.eye_color

    mouth = (
        (np.abs(xx - cx) <= params.mouth_half_width * geom[1])
        & (np.abs(yy - (cy + params.mouth_y)) <= 2.5)
        & face
    )
    img[mouth] = params.mouth_color

    # low-frequency illumination gradient, direction varies per image
    grad_angle = rng.uniform(0.0, 2.0 * np.pi)
    grad = ((xx - 56.0) * np.cos(grad_angle) + (yy - 56.0) * np.sin(grad_angle)) / size
    img += rng.uniform(0.0, 0.06) * grad[:, :, None]

    img *= brightness
    img += rng.normal(0.0, 0.004, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def build_corpus(
    out_dir: "str | Path",
    n_identities: int = 32,
    images_per_identity: int = 6,
    seed: int = 0,
    size: int = HIGH_RES,
) -> Path:
    """Write an identity-foldered PNG corpus; returns its root directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root_rng = np.random.default_rng(seed)
    for i in range(n_identities):
        params = _identity_params(root_rng)
        ident_dir = out_dir / f"id{i:04d}"
        ident_dir.mkdir(exist_ok=True)
        for j in range(images_per_identity):
            image = render_face(params, root_rng, size=size)
            save_image(ident_dir / f"img{j:03d}.png", image)
    return out_dir


def main(argv: "list[str] | None" = None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a procedural face-like corpus for desk-scale runs."
    )
    parser.add_argument("out", help="output corpus directory")
    parser.add_argument("--identities", type=int, default=32)
    parser.add_argument("--images", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    root = build_corpus(args.out, args.identities, args.images, args.seed)
    print(f"wrote {args.identities} identities x {args.images} images to {root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
