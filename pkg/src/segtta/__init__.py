"""Gated, hypothesis-conditioned test-time logit refinement for binary 3D
segmentation, with a synthetic phantom benchmark suite."""

from .gatekeeper import GateThresholds, GateVerdict, gate
from .losses import (
    CompactWeights,
    DiffuseWeights,
    EdgeMapConfig,
    LossTermResult,
    anchor_term,
    compact_loss,
    diffuse_loss,
    edge_map,
    entropy_term,
    geodesic_term,
    gravity_term,
    inflation_term,
    tv_term,
)
from .metrics import (
    CohortStats,
    MetricSet,
    WilcoxonResult,
    aggregate,
    dice,
    hd95,
    holm_bonferroni,
    precision,
    wilcoxon_holm,
)
from .optim import AdamState, NumericalFailure, OptimizerProtocol, RefinementTrace, adam_step, refine
from .phantom import GeneratedPhantom, PhantomAnnotations, PhantomSpec, cohort, generate, scenario_spec
from .pipeline import MODES, PipelineConfig, RunReport, run_case, run_cohort
from .selector import SelectionResult, SelectorConfig, expansion_region, select, texture_score
from .volume import (
    Case,
    EmptyRegionError,
    Mask,
    MaskStats,
    Volume,
    forward_diff,
    logit,
    mask_stats,
    sigmoid,
    threshold,
)

__version__ = "0.1.0"
