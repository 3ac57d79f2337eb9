"""
Run configuration models.
Every section has defaults, so an empty JSON object is a valid config.
"""

import json
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from src.data_structures.catalog import ClassCatalog, default_catalog
from src.data_structures.geometry import BevConfig, BoxPrior
from src.algorithms.simulator import LayoutPrior
from src.utils.errors import ValidationError


class AlignConfig(BaseModel):
    """
    Settings for aligning a rasterized OSM map with an initial BEV map.

    Attributes:
        lambda2: Weight of the flow smoothness penalty
        lambda3: Weight of the squared l2 norm of all warp parameters
        max_iters: Iteration budget per restart
        step_size: Initial step of the backtracking line search
        convergence_tol: Stop when the relative objective decrease falls below
        restarts: Extra jittered restarts besides the identity start
        flow_rows, flow_cols: Resolution of the coarse flow field
        warp_mode: Which warp components may move
        method: "gd" (gradient descent + backtracking) or "lbfgs" (scipy)
        box_fraction: Share of iterations spent on box parameters only
        jitter_translation, jitter_rotation_deg, jitter_log_scale: Restart spread
        seed: Seed for the restart jitter
    """

    model_config = ConfigDict(frozen=True)

    lambda2: float = Field(default=0.1, ge=0)
    lambda3: float = Field(default=1e-3, ge=0)
    max_iters: int = Field(default=150, ge=1)
    step_size: float = Field(default=50.0, gt=0)
    convergence_tol: float = Field(default=1e-7, ge=0)
    restarts: int = Field(default=4, ge=0)
    flow_rows: int = Field(default=8, ge=1)
    flow_cols: int = Field(default=4, ge=1)
    warp_mode: Literal["box", "flow", "box+flow"] = "box+flow"
    method: Literal["gd", "lbfgs"] = "gd"
    box_fraction: float = Field(default=1.0 / 3.0, ge=0, le=1)
    jitter_translation: float = Field(default=2.0, ge=0)
    jitter_rotation_deg: float = Field(default=3.0, ge=0)
    jitter_log_scale: float = Field(default=0.03, ge=0)
    seed: int = 0


class LossWeights(BaseModel):
    """
    Weights and rates for adversarial refinement training.

    Attributes:
        lam: Trade-off lambda in L = L_sim + lambda * L_reconst (JSON key "lambda")
        clip_c: Critic weights are clamped to [-clip_c, clip_c]
        critic_lr: Ascent step of the critic
        gen_lr: Adam step of the refiner
        batch_size: Maps per critic/refiner batch
        reconstruction_target: Reconstruct B_init, aligned B_osm, or both
        critic_hidden: Hidden layer widths of the critic
        refiner_hidden: Bottleneck width of the refiner
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(default=1.0, ge=0, alias="lambda")
    clip_c: float = Field(default=0.01, gt=0)
    critic_lr: float = Field(default=5e-3, gt=0)
    gen_lr: float = Field(default=1e-4, gt=0)
    batch_size: int = Field(default=64, ge=1)
    reconstruction_target: Literal["init", "osm", "both"] = "init"
    critic_hidden: Tuple[int, ...] = (32, 32)
    refiner_hidden: int = Field(default=32, ge=1)


class SyntheticCamera(BaseModel):
    """
    Ground-plane camera used to fabricate perspective fixtures.

    Attributes:
        image_height, image_width: Image size in pixels
        fx, fy, cx, cy: Intrinsics
        camera_height: Height of the camera above the ground in meters
        object_height: Height of occluding objects in meters
        min_occluders, max_occluders: Number of cars placed per scene
    """

    model_config = ConfigDict(frozen=True)

    image_height: int = Field(default=128, gt=0)
    image_width: int = Field(default=256, gt=0)
    fx: float = Field(default=128.0, gt=0)
    fy: float = Field(default=128.0, gt=0)
    cx: float = 127.5
    cy: float = 40.0
    camera_height: float = Field(default=1.65, gt=0)
    object_height: float = Field(default=1.5, gt=0)
    min_occluders: int = Field(default=1, ge=0)
    max_occluders: int = Field(default=3, ge=0)

    @model_validator(mode="after")
    def _check_occluders(self) -> "SyntheticCamera":
        if self.max_occluders < self.min_occluders:
            raise ValueError("max_occluders must be >= min_occluders")
        return self


class PipelineConfig(BaseModel):
    """
    Top-level configuration loaded from --config.

    Attributes:
        catalog_path: Optional JSON catalog; the default catalog otherwise
        bev, align, loss, prior, camera, box_prior: Component settings
        seed: Base seed for every stochastic stage
    """

    model_config = ConfigDict(frozen=True)

    catalog_path: Optional[str] = None
    bev: BevConfig = BevConfig()
    align: AlignConfig = AlignConfig()
    loss: LossWeights = LossWeights()
    prior: LayoutPrior = LayoutPrior()
    camera: SyntheticCamera = SyntheticCamera()
    box_prior: BoxPrior = BoxPrior()
    seed: int = Field(default=0, ge=0)

    @field_validator("catalog_path")
    @classmethod
    def _catalog_exists(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and not Path(value).exists():
            raise ValueError(f"catalog file not found: {value}")
        return value

    def catalog(self) -> ClassCatalog:
        """The configured catalog."""
        if self.catalog_path is None:
            return default_catalog()
        return ClassCatalog.load(self.catalog_path)


def load_pipeline_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """
    Load a PipelineConfig from JSON.

    Args:
        path: JSON file, or None for all defaults

    Raises:
        FileNotFoundError: If the file does not exist
        ValidationError: If the JSON or any field is invalid
    """
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        return PipelineConfig.model_validate(payload)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    except PydanticValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
