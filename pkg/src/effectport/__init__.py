"""Effect-measure portability toolkit.

2x2 effect measures with compatibility intervals, binomial GLMs, two-stage
random-effects meta-analysis, a bivariate binomial mixed model conditioning
effects on baseline risk, and corpus-scale rank-correlation screening.
"""

from .errors import EffectPortError
from .tables import (
    CollapsibilityReport,
    EffectEstimate,
    EffectKind,
    TwoByTwoTable,
    collapsibility_report,
    correct_zero_cells,
    effect,
    or_from_rr_at_baseline,
    rr_from_or_at_baseline,
)
from .glm import Dataset, GlmFit, LrtResult, ModelSpec, StandardizedEffects
from .meta import PoolingMethod, ReMetaFit, StudyRow, study_effects, two_stage
from .bglmm import BglmmFit, BglmmParams, ConditionalCurve
from .rankcorr import SpearmanResult, correlate_meta, spearman
from .corpus import CorpusAnalysis, CorpusRecord, CorpusSummary, SimMechanism

__version__ = "0.1.0"

__all__ = [
    "BglmmFit",
    "BglmmParams",
    "CollapsibilityReport",
    "ConditionalCurve",
    "CorpusAnalysis",
    "CorpusRecord",
    "CorpusSummary",
    "Dataset",
    "EffectEstimate",
    "EffectKind",
    "EffectPortError",
    "GlmFit",
    "LrtResult",
    "ModelSpec",
    "PoolingMethod",
    "ReMetaFit",
    "SimMechanism",
    "SpearmanResult",
    "StandardizedEffects",
    "StudyRow",
    "TwoByTwoTable",
    "collapsibility_report",
    "correct_zero_cells",
    "correlate_meta",
    "effect",
    "or_from_rr_at_baseline",
    "rr_from_or_at_baseline",
    "spearman",
    "study_effects",
    "two_stage",
    "__version__",
]
