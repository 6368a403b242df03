"""segrel: reliability assessment toolkit for semantic segmentation."""

from .analytics import (
    ModelMetricVector,
    RegressionFit,
    SubsampleRow,
    confidence_band,
    frechet_distance,
    ols_fit,
    pearson,
    relative_to_reference,
    subsample_study,
)
from .calibration import (
    EceReport,
    TemperatureParams,
    apply_temperature,
    ece,
    ece_pooled,
    fit_temperature,
    relative_ece_improvement,
)
from .errors import (
    CapacityError,
    ConsistencyError,
    DataError,
    DegenerateInputError,
    EmptyInputError,
    FormatError,
    GeometryError,
    RejectionError,
    SegrelError,
    TransportError,
    UndefinedResultError,
    ZeroVarianceError,
)
from .genplan import (
    ALL_DOMAINS,
    OBJECT_VOCABULARY,
    ContextBox,
    GenerationParams,
    InpaintBox,
    InpaintPlan,
    build_training_manifest,
    plan_inpaint_generation,
    plan_shift_generation,
    run_inpaint,
    sample_inpaint_box,
    shift_prompt,
)
from .imaging import (
    read_image_png,
    read_label_png,
    read_mask_png,
    resize_bilinear,
    resize_nearest,
    write_image_png,
    write_label_png,
    write_mask_png,
)
from .manifest import DatasetManifest, ManifestEntry, load_manifest, save_manifest
from .ood import (
    OodEvalResult,
    entropy_score,
    evaluate_ood,
    evaluate_ood_pooled,
    maxlogit_score,
    region_mean_score,
)
from .seg_metrics import (
    CITYSCAPES_CLASSES,
    ConfusionMatrix,
    accumulate,
    iou_per_class,
    merge,
    miou,
)
from .service import (
    GenerativeServiceClient,
    LocalMockClient,
    MockGenerativeModel,
    MockServiceServer,
    make_client,
)
from .srt import read_embeddings, read_tensor, write_tensor
from .types import (
    BinaryMask,
    CurationRecord,
    EmbeddingSet,
    LabelMap,
    LogitStack,
    ProbStack,
    ScoreMap,
)

__version__ = "0.1.0"
