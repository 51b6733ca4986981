import math

import numpy as np
import pytest

from schemas.models import Circle, PipelineConfig, PupilParams, SyntheticEyeSpec
from services.edges import EdgeMap
from services.synthetic import generate_eye


def ring_edges(shape, cx, cy, r, missing=None):
    """One-pixel digital circle: pixel centers within 0.5 px of radius r.

    `missing` is an optional (start_deg, end_deg) run of angles about the center left blank.
    """
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    ring = np.abs(np.hypot(x - cx, y - cy) - r) <= 0.5
    if missing is not None:
        start, end = missing
        phi = np.degrees(np.arctan2(y - cy, x - cx))
        ring &= ~(np.mod(phi - start, 360.0) < (end - start))
    return ring


@pytest.fixture
def pipeline_config():
    return PipelineConfig(pupil=PupilParams(r_avg=25))


@pytest.fixture
def clean_eye_spec():
    return SyntheticEyeSpec(
        pupil=Circle(cx=160, cy=120, r=25),
        iris=Circle(cx=160, cy=120, r=60),
    )


@pytest.fixture
def clean_eye(clean_eye_spec):
    return generate_eye(clean_eye_spec)


@pytest.fixture
def concentric_edges():
    """Pupil ring r=25 and limbus ring r=60 around (160, 120) on a 320x240 raster"""
    shape = (240, 320)
    return EdgeMap(ring_edges(shape, 160, 120, 25) | ring_edges(shape, 160, 120, 60))


@pytest.fixture
def upper_lid_edges():
    """Same rings with the limbus blank over the upper 100 degrees (-140..-40)"""
    shape = (240, 320)
    return EdgeMap(ring_edges(shape, 160, 120, 25) | ring_edges(shape, 160, 120, 60, missing=(-140.0, -40.0)))


def disc(shape, cx, cy, r):
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    return (x - cx) ** 2 + (y - cy) ** 2 <= r * r


def ellipse(shape, cx, cy, a, b, angle=0.0):
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(float)
    u = (x - cx) * math.cos(angle) + (y - cy) * math.sin(angle)
    v = -(x - cx) * math.sin(angle) + (y - cy) * math.cos(angle)
    return (u / a) ** 2 + (v / b) ** 2 <= 1
