"""
Synthetic inversion-recovery cardiac phantom with known T1, masks and motion
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config.constants import (
    LABEL_BACKGROUND, LABEL_BLOOD, LABEL_MYOCARDIUM, PHANTOM_BUMP_COUNT, PHANTOM_BUMP_SIGMA_PX, PHANTOM_FRAMES,
    PHANTOM_HEIGHT, PHANTOM_SIGNAL_A, PHANTOM_SIGNAL_B, PHANTOM_T1_BACKGROUND_MS, PHANTOM_T1_BLOOD_MS,
    PHANTOM_T1_MYO_MS, PHANTOM_TI_MAX_MS, PHANTOM_TI_MIN_MS, PHANTOM_WIDTH
)
from imaging.containers import DisplacementField, Image2D, LabelMask, T1Series
from registration.warp import folding_count, warp_image, warp_labels
from utils.errors import InvalidSpecError
from utils.logger import moco_logger

PHANTOM_NUM_CLASSES = 3

# Translation draws from this share of the motion amplitude; rotation adds at most
# ROTATION_SHARE of it at the outer ring radius, so the rigid part stays within the amplitude
TRANSLATION_RANGE = (0.75, 0.9)
ROTATION_SHARE = 0.1

# Default ring radii as fractions of the short grid side
RING_INNER_FRACTION = 20.0 / 144.0
RING_OUTER_FRACTION = 26.0 / 144.0


def default_inversion_times(frames: int) -> List[float]:
    """Geometrically spaced TIs from 100 to 3000 ms, rounded to whole ms"""
    return [float(v) for v in np.round(np.geomspace(PHANTOM_TI_MIN_MS, PHANTOM_TI_MAX_MS, frames))]


class PhantomSpec(BaseModel):
    """Geometry, tissue, motion and noise parameters of a phantom series"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    height: int = PHANTOM_HEIGHT
    width: int = PHANTOM_WIDTH
    frames: int = PHANTOM_FRAMES
    inversion_times: Optional[List[float]] = None
    t1_myo: float = PHANTOM_T1_MYO_MS
    t1_blood: float = PHANTOM_T1_BLOOD_MS
    t1_background: float = PHANTOM_T1_BACKGROUND_MS
    ring_center: Optional[Tuple[float, float]] = None
    ring_radii: Optional[Tuple[float, float]] = None
    motion_amplitude: float = 3.0
    noise_sigma: float = 0.0
    seed: int = 0
    signal_a: float = PHANTOM_SIGNAL_A
    signal_b: float = PHANTOM_SIGNAL_B
    bump_count: int = Field(default=PHANTOM_BUMP_COUNT, ge=0)
    bump_sigma: float = Field(default=PHANTOM_BUMP_SIGMA_PX, gt=0.0)

    @model_validator(mode="after")
    def _check_spec(self):
        if self.height < 16 or self.width < 16:
            raise InvalidSpecError(f"Phantom grid must be at least 16x16, got {self.height}x{self.width}")
        if self.frames < 2:
            raise InvalidSpecError(f"Phantom needs at least 2 frames, got {self.frames}")
        inner, outer = self.radii()
        if not 0 < inner < outer:
            raise InvalidSpecError(f"Ring radii must satisfy 0 < inner < outer, got {(inner, outer)}")
        if outer >= min(self.height, self.width) / 2:
            raise InvalidSpecError(f"Outer radius {outer} does not fit a {self.height}x{self.width} grid")
        if self.motion_amplitude < 0 or self.noise_sigma < 0:
            raise InvalidSpecError("motion_amplitude and noise_sigma must be non-negative")
        if min(self.t1_myo, self.t1_blood, self.t1_background) <= 0:
            raise InvalidSpecError("T1 values must be positive")
        if not 0 < self.signal_a < self.signal_b:
            raise InvalidSpecError("Signal model needs 0 < A < B")
        if self.inversion_times is not None:
            tis = np.asarray(self.inversion_times, dtype=np.float64)
            if len(tis) != self.frames:
                raise InvalidSpecError(f"{len(tis)} inversion times for {self.frames} frames")
            if not np.isfinite(tis).all() or tis.min() <= 0 or np.any(np.diff(tis) <= 0):
                raise InvalidSpecError("Inversion times must be positive and strictly increasing")
        return self

    def resolved_inversion_times(self) -> List[float]:
        return list(self.inversion_times) if self.inversion_times is not None else default_inversion_times(self.frames)

    def center(self) -> Tuple[float, float]:
        """Ring center (x, y)"""
        if self.ring_center is not None:
            return self.ring_center
        return (self.width / 2.0, self.height / 2.0)

    def radii(self) -> Tuple[float, float]:
        """(inner, outer) ring radii; by default 20 and 26 px on a 144-pixel short side, scaled with the grid"""
        if self.ring_radii is not None:
            return self.ring_radii
        short = min(self.height, self.width)
        return (short * RING_INNER_FRACTION, short * RING_OUTER_FRACTION)

    def t1_star(self, t1: float) -> float:
        """Apparent relaxation time with T1 = T1* (B/A - 1)"""
        return t1 * self.signal_a / (self.signal_b - self.signal_a)


class PhantomCase(BaseModel):
    """Generated series with its ground truth"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    spec: PhantomSpec
    series: T1Series
    t1_map: Image2D
    fields: List[DisplacementField]
    masks: List[LabelMask]
    reference_mask: LabelMask


class PhantomGenerator:
    """
    Renders a phantom series in reference geometry and moves each frame
    """

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        ys, xs = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
        self.xs, self.ys = xs, ys

    def labels(self) -> np.ndarray:
        """Reference-geometry labels: blood pool inside an annular myocardium"""
        cx, cy = self.spec.center()
        radius = np.hypot(self.xs - cx, self.ys - cy)
        inner, outer = self.spec.radii()
        labels = np.full(radius.shape, LABEL_BACKGROUND, dtype=np.uint8)
        labels[radius <= outer] = LABEL_MYOCARDIUM
        labels[radius < inner] = LABEL_BLOOD
        return labels

    def t1_map(self, labels: np.ndarray) -> np.ndarray:
        t1 = np.full(labels.shape, self.spec.t1_background, dtype=np.float64)
        t1[labels == LABEL_MYOCARDIUM] = self.spec.t1_myo
        t1[labels == LABEL_BLOOD] = self.spec.t1_blood
        return t1

    def signal(self, t1: np.ndarray, ti: float) -> np.ndarray:
        """Signed signal A - B exp(-TI / T1*)"""
        t1_star = self.spec.t1_star(1.0) * t1
        return self.spec.signal_a - self.spec.signal_b * np.exp(-ti / t1_star)

    def motion(self) -> np.ndarray:
        """
        One random motion field: rigid rotation about the ring center plus a
        translation, and a sum of Gaussian bumps

        Returns:
            (H, W, 2) displacement in pixels
        """
        spec = self.spec
        amplitude = spec.motion_amplitude
        cx, cy = spec.center()

        direction = self.rng.uniform(0.0, 2.0 * np.pi)
        shift = amplitude * self.rng.uniform(*TRANSLATION_RANGE)
        max_angle = ROTATION_SHARE * amplitude / spec.radii()[1]
        angle = self.rng.uniform(-max_angle, max_angle)

        dx, dy = self.xs - cx, self.ys - cy
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        ux = cos_a * dx - sin_a * dy - dx + shift * np.cos(direction)
        uy = sin_a * dx + cos_a * dy - dy + shift * np.sin(direction)

        bumps = np.zeros(self.xs.shape + (2,), dtype=np.float64)
        inner, outer = spec.radii()
        for _ in range(spec.bump_count):
            bx = cx + self.rng.uniform(-outer, outer)
            by = cy + self.rng.uniform(-outer, outer)
            vector = self.rng.normal(size=2)
            weight = np.exp(-((self.xs - bx) ** 2 + (self.ys - by) ** 2) / (2.0 * spec.bump_sigma ** 2))
            bumps += weight[..., None] * vector
        peak = np.sqrt((bumps ** 2).sum(axis=-1)).max() if spec.bump_count else 0.0
        if peak > 0:
            bumps *= self.rng.uniform(0.5, 1.0) * (amplitude / 2.0) / peak

        return np.stack([ux, uy], axis=-1) + bumps

    def generate(self) -> PhantomCase:
        spec = self.spec
        tis = spec.resolved_inversion_times()
        reference = spec.frames - 1
        labels = self.labels()
        reference_mask = LabelMask(labels=labels, num_classes=PHANTOM_NUM_CLASSES)
        t1 = self.t1_map(labels)

        fields, frames, masks = [], [], []
        for index, ti in enumerate(tis):
            if index == reference or spec.motion_amplitude == 0:
                field = DisplacementField.zeros(spec.height, spec.width)
            else:
                field = DisplacementField(u=self.motion())
                folds = folding_count(field)
                if folds:
                    raise InvalidSpecError(f"Motion for frame {index} folds {folds} pixels; lower motion_amplitude")

            clean = Image2D(data=self.signal(t1, ti))
            moved = warp_image(clean, field)
            data = moved.data.astype(np.float64)
            if spec.noise_sigma > 0:
                data = data + self.rng.normal(0.0, spec.noise_sigma * spec.signal_b, size=data.shape)

            fields.append(field)
            frames.append(Image2D(data=data))
            masks.append(warp_labels(reference_mask, field))

        series = T1Series(frames=frames, inversion_times=tis, masks=masks, reference_index=reference)
        moco_logger.info(
            f"Phantom generated - Grid: {spec.height}x{spec.width}, Frames: {spec.frames}, "
            f"Motion: {spec.motion_amplitude} px, Noise: {spec.noise_sigma}, Seed: {spec.seed}"
        )
        return PhantomCase(
            spec=spec,
            series=series,
            t1_map=Image2D(data=t1),
            fields=fields,
            masks=masks,
            reference_mask=reference_mask,
        )


def generate(spec: Optional[PhantomSpec] = None) -> PhantomCase:
    """Generate a phantom series and its ground truth (bit-identical per seed)"""
    return PhantomGenerator(spec or PhantomSpec()).generate()


def blood_null_ti(spec: PhantomSpec) -> float:
    """TI at which the blood signal crosses zero: T1* ln(B/A)"""
    return spec.t1_star(spec.t1_blood) * float(np.log(spec.signal_b / spec.signal_a))
