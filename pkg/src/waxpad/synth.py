"""Desk-scale synthetic corpus: textured "real" faces paired with smoothed,
highlight-overlaid "wax" counterparts.

The generator is a pure function of (config, seed): the same inputs produce
byte-identical images and manifest. Attack images are the paired real texture
after Gaussian smoothing plus a specular highlight; both effects scale with
blur_strength, so blur_strength=0 makes the two generators statistically
identical and any detector should sit at chance level.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DatasetManifest, FaceRecord, Label, Scenario, Split, save_manifest


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_pairs: int
    image_size: int = 64
    blur_strength: float = 1.5
    noise_level: float = 4.0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise SynthError("n_pairs must be >= 1")
        if self.image_size < 8:
            raise SynthError("image_size must be >= 8")
        if self.blur_strength < 0 or self.noise_level < 0:
            raise SynthError("blur_strength and noise_level must be non-negative")


_GENDERS = ("male", "male", "male", "female", "female")  # ~60/40
_ETHNICITIES = ("white", "white", "white", "asian", "black", "indian")
_HIGHLIGHT_GAIN = 45.0


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image
    radius = max(1, int(round(3 * sigma)))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(image, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(padded)
    for k, w in zip(offsets, kernel):
        out += w * np.roll(padded, -k, axis=0)
    out2 = np.zeros_like(out)
    for k, w in zip(offsets, kernel):
        out2 += w * np.roll(out, -k, axis=1)
    return out2[radius:-radius, radius:-radius, :]


def _base_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Skin-like base: smooth color gradient + sinusoidal gratings + pore noise."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    base = np.zeros((size, size, 3))
    tint = rng.uniform(90, 170, size=3)
    slope = rng.uniform(-0.4, 0.4, size=(2, 3))
    for ch in range(3):
        base[:, :, ch] = tint[ch] + slope[0, ch] * yy + slope[1, ch] * xx
    for _ in range(4):
        freq = rng.uniform(0.05, 0.45, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(4, 14)
        wave = amp * np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx) + phase)
        base += wave[:, :, np.newaxis] * rng.uniform(0.5, 1.0, size=3)
    pores = rng.normal(0, 9.0, size=(size, size, 3))
    return base + pores


def _specular_highlight(size: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    # Loosely centered with small jitter: waxy sheen sits on the cheek/forehead
    # region rather than wandering to the frame edge.
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy = rng.uniform(0.38, 0.62) * size
    cx = rng.uniform(0.38, 0.62) * size
    radius = rng.uniform(0.14, 0.2) * size
    blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2)))
    return amplitude * blob[:, :, np.newaxis]


def _to_png(array: np.ndarray, path: Path) -> None:
    data = np.clip(np.rint(array), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def _split_for(index: int, n_pairs: int) -> Split:
    n_train = int(n_pairs * 0.6)
    n_valid = int(n_pairs * 0.2)
    if index < n_train:
        return Split.TRAIN
    if index < n_train + n_valid:
        return Split.VALID
    return Split.TEST


def synth_generate(config: SynthConfig, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Write images plus manifest.jsonl under out_dir and return the manifest.

    Per pair: a textured real image and its wax counterpart built from the
    same texture. Splits are 60/20/20 by pair; scenarios alternate so all
    three protocols are populated.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SynthError(f"cannot create output directory {image_dir}: {exc}") from exc

    records: list[FaceRecord] = []
    size = config.image_size
    highlight_amp = _HIGHLIGHT_GAIN * min(1.0, config.blur_strength)
    for index in range(config.n_pairs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
        texture = _base_texture(rng, size)

        real = texture + rng.normal(0, config.noise_level, size=texture.shape)

        wax = _gaussian_blur(texture, config.blur_strength)
        wax = wax + _specular_highlight(size, rng, highlight_amp)
        wax = wax + rng.normal(0, config.noise_level, size=texture.shape)

        pair_id = f"p{index:05d}"
        subject_id = f"s{index:05d}"
        scenario = Scenario.HETEROGENEOUS if index % 2 == 0 else Scenario.HOMOGENEOUS
        split = _split_for(index, config.n_pairs)
        meta = {
            "gender": _GENDERS[int(rng.integers(len(_GENDERS)))],
            "ethnicity": _ETHNICITIES[int(rng.integers(len(_ETHNICITIES)))],
            "age": int(rng.integers(18, 80)),
            "resolution": f"{size}x{size}",
        }
        for suffix, label, array in (("r", Label.BONA_FIDE, real), ("w", Label.ATTACK, wax)):
            face_id = f"f{index:05d}{suffix}"
            rel_path = f"images/{face_id}.png"
            _to_png(array, out_dir / rel_path)
            records.append(
                FaceRecord(
                    face_id=face_id,
                    pair_id=pair_id,
                    subject_id=subject_id,
                    image_path=rel_path,
                    label=label,
                    scenario=scenario,
                    split=split,
                    meta=dict(meta),
                )
            )

    manifest = DatasetManifest(root_dir=out_dir, records=records, strict_pairing=True)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
