import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Circle(BaseModel):
    """Boundary model: sub-pixel center plus radius, all in pixels"""
    model_config = ConfigDict(frozen=True)

    cx: float
    cy: float
    r: float

    @field_validator('r')
    def validate_radius(cls, v):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError('Circle radius must be positive and finite')
        return v

    @property
    def center(self) -> Tuple[float, float]:
        return (self.cx, self.cy)

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.cx <= width - 1 and 0 <= self.cy <= height - 1


class PupilParams(BaseModel):
    t1: float = 0.2
    t2: float = 0.5
    r_avg: float
    lambda_a: float = 0.6
    grow_tolerance: float = 0.05
    open_radius: int = 5
    min_radius_factor: float = 0.5
    max_radius_factor: float = 2.0

    @field_validator('r_avg')
    def validate_r_avg(cls, v):
        if v < 2:
            raise ValueError('r_avg must be at least 2 pixels')
        return v

    @field_validator('lambda_a')
    def validate_lambda_a(cls, v):
        if not 0.5 < v < 1:
            raise ValueError('lambda_a must lie in (0.5, 1)')
        return v

    @field_validator('grow_tolerance')
    def validate_grow_tolerance(cls, v):
        if not 0 < v < 1:
            raise ValueError('grow_tolerance must lie in (0, 1)')
        return v

    @field_validator('open_radius')
    def validate_open_radius(cls, v):
        if v < 1:
            raise ValueError('open_radius must be at least 1 pixel')
        return v

    @model_validator(mode='after')
    def validate_thresholds(self):
        if not 0 < self.t1 < self.t2 < 1:
            raise ValueError('thresholds must satisfy 0 < t1 < t2 < 1')
        if not 0 < self.min_radius_factor < 1 < self.max_radius_factor:
            raise ValueError('pupil radius factors must satisfy 0 < min < 1 < max')
        return self


class EdgeParams(BaseModel):
    sigma_zc: float = 2.0
    lambda_c: float = 0.15
    min_component: int = 50

    @field_validator('sigma_zc')
    def validate_sigma(cls, v):
        if v <= 0:
            raise ValueError('sigma_zc must be positive')
        return v

    @field_validator('lambda_c')
    def validate_lambda_c(cls, v):
        if v < 0:
            raise ValueError('lambda_c must be non-negative')
        return v

    @field_validator('min_component')
    def validate_min_component(cls, v):
        if v < 1:
            raise ValueError('min_component must be at least 1')
        return v


class BoundaryParams(BaseModel):
    stable_halfwidth: float = math.pi / 6
    n_angles: int = 360
    radial_step: float = 0.5
    inlier_tol: float = 2.0
    limbic_min_factor: float = 1.2
    limbic_max_factor: float = 4.0
    pupil_exclusion: float = 3.0
    limbic_band: float = 0.15
    trim_fraction: float = 0.1
    min_stable_coverage: float = 0.25
    min_iris_ratio: float = 1.5
    max_iris_ratio: float = 4.0

    @field_validator('stable_halfwidth')
    def validate_halfwidth(cls, v):
        if not 0 < v < math.pi / 4:
            raise ValueError('stable_halfwidth must lie in (0, pi/4)')
        return v

    @field_validator('n_angles')
    def validate_n_angles(cls, v):
        if v < 8:
            raise ValueError('n_angles must be at least 8')
        return v

    @field_validator('radial_step', 'inlier_tol', 'pupil_exclusion')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError('value must be positive')
        return v

    @field_validator('limbic_band', 'trim_fraction', 'min_stable_coverage')
    def validate_fraction(cls, v):
        if not 0 <= v <= 1:
            raise ValueError('fraction must lie in [0, 1]')
        return v

    @model_validator(mode='after')
    def validate_factors(self):
        if not 1 < self.limbic_min_factor < self.limbic_max_factor:
            raise ValueError('limbic factors must satisfy 1 < min < max')
        if not 1 < self.min_iris_ratio < self.max_iris_ratio:
            raise ValueError('iris ratios must satisfy 1 < min < max')
        if self.trim_fraction >= 0.5:
            raise ValueError('trim_fraction must be below 0.5')
        return self


class PipelineConfig(BaseModel):
    pupil: PupilParams
    edges: EdgeParams = EdgeParams()
    boundary: BoundaryParams = BoundaryParams()

    def to_flat(self) -> Dict[str, object]:
        """Flatten to the key/value form used by config files and --print-config"""
        flat = {}
        for section in (self.pupil, self.edges, self.boundary):
            flat.update(section.model_dump())
        return flat

    @classmethod
    def from_flat(cls, values: Dict[str, object]) -> "PipelineConfig":
        unknown = set(values) - set(PupilParams.model_fields) - set(EdgeParams.model_fields) \
            - set(BoundaryParams.model_fields)
        if unknown:
            raise ValueError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        return cls(
            pupil=PupilParams(**{k: v for k, v in values.items() if k in PupilParams.model_fields}),
            edges=EdgeParams(**{k: v for k, v in values.items() if k in EdgeParams.model_fields}),
            boundary=BoundaryParams(**{k: v for k, v in values.items() if k in BoundaryParams.model_fields}),
        )


class ZonePartition(BaseModel):
    """Four angular sectors around the eye's major axis (image coordinates, y down)"""
    model_config = ConfigDict(frozen=True)

    orientation: float
    stable_halfwidth: float

    def _offset(self, angle: float) -> float:
        # angle relative to the major axis, wrapped to (-pi, pi]
        d = math.remainder(angle - self.orientation, 2 * math.pi)
        return math.pi if d == -math.pi else d

    def zone_of(self, angle: float) -> str:
        d = self._offset(angle)
        if abs(d) <= self.stable_halfwidth:
            return "right_stable"
        if math.pi - abs(d) <= self.stable_halfwidth:
            return "left_stable"
        return "upper_occlusion" if d < 0 else "lower_occlusion"

    def is_stable(self, angle: float) -> bool:
        return self.zone_of(angle).endswith("stable")

    @property
    def sectors(self) -> Dict[str, Tuple[float, float]]:
        """Sector bounds (start, end) in radians with end > start, angles increasing from +x towards +y"""
        o, h = self.orientation, self.stable_halfwidth
        return {
            "right_stable": (o - h, o + h),
            "lower_occlusion": (o + h, o + math.pi - h),
            "left_stable": (o + math.pi - h, o + math.pi + h),
            "upper_occlusion": (o + math.pi + h, o + 2 * math.pi - h),
        }


class SegmentationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image_id: str = ""
    pupil: Circle
    iris: Circle
    orientation: float
    orientation_confident: bool = True
    pupil_refined: bool = True
    gap_runs: List[Tuple[float, float]] = []
    gap_angles: List[float] = Field(default=[], exclude=True)
    occlusion_mask: Optional[np.ndarray] = Field(default=None, exclude=True)
    stage_timings_ms: Dict[str, float] = {}

    def record_json(self, include_timings: bool = True) -> str:
        exclude = None if include_timings else {"stage_timings_ms"}
        return self.model_dump_json(exclude=exclude, indent=2)


class EvalRecord(BaseModel):
    image_id: str
    ae: float
    success: bool
    total_ms: float = 0.0
    stage_timings_ms: Dict[str, float] = {}
    error: Optional[str] = None
    pupil_center_error: Optional[float] = None
    iris_radius_error: Optional[float] = None
    gap_overlap: Optional[float] = None

    @model_validator(mode='after')
    def validate_success(self):
        if self.ae < 0:
            raise ValueError('ae must be non-negative')
        if self.success != (self.ae < 10):
            raise ValueError('success must hold exactly when ae < 10')
        return self


class EvalReport(BaseModel):
    records: List[EvalRecord]
    ar: float
    mean_ae: float
    median_ae: float
    mean_ms: float
    mean_pupil_center_error: Optional[float] = None
    mean_iris_radius_error: Optional[float] = None
    mean_gap_overlap: Optional[float] = None


NoiseKind = Literal["none", "gaussian", "salt-pepper", "speckle", "poisson"]


class NoiseSpec(BaseModel):
    kind: NoiseKind = "none"
    strength: float = 0.0

    @field_validator('strength')
    def validate_strength(cls, v):
        if v < 0:
            raise ValueError('noise strength must be non-negative')
        return v


class IntensityLevels(BaseModel):
    pupil: float = 0.08
    iris: float = 0.38
    sclera: float = 0.62
    skin: float = 0.82
    lash: float = 0.12
    reflection: float = 1.0

    @model_validator(mode='after')
    def validate_levels(self):
        for name, value in self.model_dump().items():
            if not 0 <= value <= 1:
                raise ValueError(f'level {name} must lie in [0, 1]')
        return self


class EyelidOcclusion(BaseModel):
    """Occluded angular run (about the pupil center) covering the iris from `depth` pixels inside the limbus outward"""
    center_angle: float
    span: float
    depth: float

    @field_validator('span')
    def validate_span(cls, v):
        if not 0 < v < 2 * math.pi:
            raise ValueError('span must lie in (0, 2*pi)')
        return v

    @field_validator('depth')
    def validate_depth(cls, v):
        if v <= 0:
            raise ValueError('depth must be positive')
        return v


class SyntheticEyeSpec(BaseModel):
    width: int = 320
    height: int = 240
    pupil: Circle
    iris: Circle
    eyelids: List[EyelidOcclusion] = []
    levels: IntensityLevels = IntensityLevels()
    noise: NoiseSpec = NoiseSpec()
    reflection_count: int = 0
    reflection_radius: float = 3.0
    lash_count: int = 0
    eye_tilt: float = 0.0
    seed: int = 0

    @model_validator(mode='after')
    def validate_geometry(self):
        if self.width < 16 or self.height < 16:
            raise ValueError('synthetic image must be at least 16x16')
        p, i = self.pupil, self.iris
        if math.hypot(p.cx - i.cx, p.cy - i.cy) + p.r >= i.r:
            raise ValueError('pupil must lie inside the iris')
        if i.cx - i.r < 0 or i.cy - i.r < 0 or i.cx + i.r > self.width - 1 or i.cy + i.r > self.height - 1:
            raise ValueError('iris must lie inside the image')
        return self


class SyntheticPlan(BaseModel):
    """Recipe for a generated corpus; every image is derived from `seed` and its index"""
    count: int = 100
    width: int = 320
    height: int = 240
    pupil_min: float = 18
    pupil_max: float = 35
    iris_min: float = 50
    iris_max: float = 90
    max_offset: float = 3.0
    noise: NoiseSpec = NoiseSpec()
    eyelid_span_deg: float = 0.0
    reflection_count: int = 0
    lash_count: int = 0
    seed: int = 1234

    @field_validator('count')
    def validate_count(cls, v):
        if v < 1:
            raise ValueError('plan must contain at least one image')
        return v

    @model_validator(mode='after')
    def validate_ranges(self):
        if not 0 < self.pupil_min <= self.pupil_max:
            raise ValueError('pupil range is invalid')
        if not 0 < self.iris_min <= self.iris_max:
            raise ValueError('iris range is invalid')
        if 2 * self.iris_max + 10 > min(self.width, self.height):
            raise ValueError('iris_max does not fit the image')
        return self


Command = Literal["segment", "eval", "synth", "bench"]


class CliConfig(BaseModel):
    command: Command
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    pipeline: PipelineConfig
    debug: bool = False
    jobs: int = 1
    seed: int = 1234
    budget_ms: float = 500.0

    @field_validator('jobs')
    def validate_jobs(cls, v):
        if v < 1:
            raise ValueError('jobs must be at least 1')
        return v

    @field_validator('budget_ms')
    def validate_budget(cls, v):
        if v < 0:
            raise ValueError('budget must be non-negative')
        return v
