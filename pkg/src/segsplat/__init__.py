"""Feed-forward semantic Gaussian splatting.

Builds a compact semantic memory bank from per-view mask embeddings,
attaches discrete bank indices to 3D Gaussians, renders color plus blended
semantic-index buffers, recovers dense feature maps, and answers
open-vocabulary segmentation queries, all without per-scene optimization.
"""

from .annotation import (
    MaskAnnotation,
    ViewAnnotation,
    mask_iou,
    masks_from_label_map,
    nms_masks,
    prepare_view,
    rasterize_label_map,
)
from .bank import (
    BankProvenance,
    KMeansResult,
    SemanticBank,
    SemanticIndexMap,
    build_bank,
    compute_cluster_count,
    kmeans,
    normalize_rows,
)
from .core import (
    Camera,
    GaussianCloud,
    GaussianPrimitive,
    RenderBuffers,
    as_cloud,
    build_covariance,
    eval_sh,
    quat_multiply,
    quat_to_rotation,
)
from .evalkit import EvalReport, build_report, iou, psnr, ssim
from .lift import PixelAlignedScene, assign_by_projection, attach_pixel_aligned
from .query import (
    FeatureMap,
    QueryConfig,
    blend_features,
    recover_features,
    relevancy_map,
    segment,
)
from .rasterizer import (
    ProjectedGaussian,
    RenderSettings,
    project_gaussian,
    render,
    render_bruteforce,
    resolve_threads,
)

__version__ = "0.1.0"
