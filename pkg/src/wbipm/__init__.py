"""Warm-basis iterative projection solver for sparse linear inverse problems."""

__version__ = "0.1.0"

from .analysis import (
    BoundReport,
    ZSectionTable,
    angle_loss,
    closed_form_solution,
    distance_loss,
    gamma_alignment,
    lemma_bound_check,
    relative_error,
    rmse_by_zsection,
    theorem_bound,
)
from .errors import (
    AfgkBreakdown,
    NumericalError,
    RankDeficientUpdate,
    ValidationError,
    WbipmError,
)
from .forward import (
    DenseMatrixOperator,
    Ellipsoid,
    Grid3,
    LinearOperator,
    OpticalCoefficients,
    SourceDetectorLayout,
    add_noise,
    assemble_fmt_operator,
    generate_phantom,
)
from .gk import AfgkState, DeflatedSystem, afgk_init, afgk_step, qr_append, solve_c, solve_projected
from .reg import (
    MmConfig,
    Preconditioner,
    build_preconditioner,
    majorizer,
    mm_exact_solve,
    smoothed_objective,
    wgcv_select,
)
from .solver import (
    Decomposition,
    SolveResult,
    WarmBasis,
    deflate,
    fhybr_solve,
    warmstart_solve,
    wbipm_solve,
)
from .warmbasis import WarmBasisSpec, load_warm_basis, save_warm_basis, synthetic_warm_basis
