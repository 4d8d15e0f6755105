"""
Householder low-rank orthogonal projectors
"""

from .const import *
from .discovery import (
    DirectionSet,
    TraversalSpec,
    eigen_clusters,
    sefa_directions,
    slerp,
    traverse,
    variation_magnitude,
)
from .errors import *
from .householder import (
    ReflectorChain,
    apply_chain,
    apply_chain_transpose,
    chain_accumulate,
    chain_from_vectors,
    chain_vjp,
    decompose_orthogonal,
    identity_chain,
    reflector_apply,
    symmetric_orthogonal_chain,
)
from .linalg import SvdResult, frobenius_norm, matmul, orthogonality_error, sqrtm_psd, svd, sym_eig
from .metrics import (
    GaussianStats,
    MetricResult,
    RandomProjectionDistance,
    frechet_distance,
    mse_distance,
    pearson_correlation,
    pipl,
    ppl,
    squared_l2_distance,
    traversal_correlation,
)
from .projector import (
    ProjectorGrads,
    ProjectorParams,
    gradient_step,
    nearest_orthogonal,
    orthogonal_distance,
    projector_apply,
    projector_backward,
    projector_forward,
    projector_from_pretrained,
    projector_load,
    projector_new,
    projector_save,
    projector_spectrum,
    spectral_error,
)
from .toy import (
    AlignmentReport,
    GroundTruthFactors,
    ToyGenerator,
    ToyLayer,
    ToyTrainer,
    TrainConfig,
    TrainHistory,
    evaluate_recovery,
    make_ground_truth,
    random_subspace_baseline,
    steps_to_reach,
    toygen_forward,
    train_toy,
)
from .wy import BenchReport, WYForm, accumulate, bench_accumulation, wy_apply, wy_from_chain, wy_merge, wy_to_dense
