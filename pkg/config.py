import os
import math
import logging
from pathlib import Path
from typing import Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from schemas.models import PipelineConfig

load_dotenv()


class Settings:
    # Pupil stage
    T1: float = float(os.getenv("IRIS_T1", "0.2"))
    T2: float = float(os.getenv("IRIS_T2", "0.5"))
    R_AVG: float = float(os.getenv("IRIS_R_AVG", "25"))
    LAMBDA_A: float = float(os.getenv("IRIS_LAMBDA_A", "0.6"))
    GROW_TOL: float = float(os.getenv("IRIS_GROW_TOL", "0.05"))
    OPEN_RADIUS: int = int(os.getenv("IRIS_OPEN_RADIUS", "5"))

    # Zero-crossing stage
    SIGMA_ZC: float = float(os.getenv("IRIS_SIGMA_ZC", "2"))
    LAMBDA_C: float = float(os.getenv("IRIS_LAMBDA_C", "0.15"))
    MIN_COMPONENT: int = int(os.getenv("IRIS_MIN_COMPONENT", "50"))

    # Boundary stage
    STABLE_HALFWIDTH: float = float(os.getenv("IRIS_STABLE_HALFWIDTH", str(math.pi / 6)))
    N_ANGLES: int = int(os.getenv("IRIS_N_ANGLES", "360"))
    INLIER_TOL: float = float(os.getenv("IRIS_INLIER_TOL", "2.0"))

    # Runs
    JOBS: int = int(os.getenv("IRIS_JOBS", str(min(8, os.cpu_count() or 1))))
    SEED: int = int(os.getenv("IRIS_SEED", "1234"))
    BUDGET_MS: float = float(os.getenv("IRIS_BUDGET_MS", "500"))
    SYNTH_COUNT: int = int(os.getenv("IRIS_SYNTH_COUNT", "100"))
    DEBUG: bool = os.getenv("IRIS_DEBUG", "false").lower() in ("1", "true", "yes")
    LOG_LEVEL: str = os.getenv("IRIS_LOG_LEVEL", "INFO")


settings = Settings()


def setup_logging(level: str = settings.LOG_LEVEL):
    """Configure root logging once for the CLI process"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )


def settings_flat() -> dict:
    """Pipeline parameters from the environment, in PipelineConfig's flat key form"""
    return {
        "t1": settings.T1,
        "t2": settings.T2,
        "r_avg": settings.R_AVG,
        "lambda_a": settings.LAMBDA_A,
        "grow_tolerance": settings.GROW_TOL,
        "open_radius": settings.OPEN_RADIUS,
        "sigma_zc": settings.SIGMA_ZC,
        "lambda_c": settings.LAMBDA_C,
        "min_component": settings.MIN_COMPONENT,
        "stable_halfwidth": settings.STABLE_HALFWIDTH,
        "n_angles": settings.N_ANGLES,
        "inlier_tol": settings.INLIER_TOL,
    }


RUN_KEYS = {"jobs": int, "seed": int, "budget_ms": float}


def settings_run() -> dict:
    """Run defaults (parallelism, synthetic seed, benchmark budget) from the environment"""
    return {"jobs": settings.JOBS, "seed": settings.SEED, "budget_ms": settings.BUDGET_MS}


def build_config(config_file: Optional[str] = None, overrides: Optional[dict] = None) -> Tuple[PipelineConfig, dict]:
    """Defaults and environment, then the key=value config file, then explicit overrides.

    Returns the pipeline configuration and the run defaults; the config file may carry both.
    """
    values = settings_flat()
    run = settings_run()
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise FileNotFoundError(f"Config file not found: {path}")
        values.update({k.lower(): v for k, v in dotenv_values(path).items() if v not in (None, "")})
    for key, cast in RUN_KEYS.items():
        if key in values:
            run[key] = cast(values.pop(key))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_flat(values), run


def format_flat(values: dict) -> str:
    return "\n".join(f"{key}={value}" for key, value in values.items())
