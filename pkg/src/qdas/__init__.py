"""qdas: a differentiable quantum readout head with factorized architecture
search over two 24-candidate circuit blocks, trained end to end on feature
sequences with exact simulated gradients."""

from .circuits import (
    CandidateDescriptor,
    CompiledCircuit,
    Entangler,
    GateSpec,
    Init,
    N_CANDIDATES,
    Rotation,
    build_candidate_unitary,
    candidate_index,
    compile_circuit,
    enumerate_candidates,
    param_count,
    rotation_gate,
)
from .data import (
    FeatureDataset,
    MetricsReport,
    ParamReport,
    compute_metrics,
    generate_synthetic,
    load_embeddings,
    param_report,
    save_embeddings,
)
from .head import (
    HeadConfig,
    HeadParams,
    classify,
    forward_fixed,
    init_head_params,
    lcu_mix,
    measure_pauli,
    pauli_expectations,
    project_features,
    qff_apply,
    timestep_block,
)
from .linalg import (
    ATOL,
    NormCollapse,
    basis_state,
    expectation,
    kron,
    matrix_polynomial,
    normalize_state,
)
from .search import (
    SearchState,
    StructuralWeights,
    discretize,
    ensemble_forward,
    init_structural_weights,
    joint_ensemble_oracle,
    mix_density,
    warmup_weights,
)
from .training import (
    AdamWState,
    TrainConfig,
    adamw_step,
    backward,
    cross_entropy,
    finite_difference_gradient,
    run_fixed,
    run_search,
)

__version__ = "0.1.0"
