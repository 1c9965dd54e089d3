"""arborabc: stochastic neuron growth models, morphometrics, and
likelihood-free calibration with an adaptive SMC-ABC sampler."""

__version__ = "0.1.0"

from .distances import (
    DistanceComputer,
    DistanceSpec,
    gamma_divergence,
    gaussian_w2_oracle,
    kl_knn,
    make_distance,
    sliced_wasserstein,
    standardize,
    wasserstein,
    wasserstein_error_study,
)
from .growth import (
    Agent,
    GrowthParams,
    GrowthRng,
    GuidanceField,
    NeuronTree,
    SomaSpec,
    init_neuron,
    simulate,
    step_model1,
    step_model2,
    walk_direction,
)
from .models import (
    GrowthModel,
    ToyGaussianModel,
    default_field,
    default_soma,
    model1_defaults,
    model2_defaults,
)
from .morphometrics import (
    MORPHOMETRIC_IDS,
    QoIExtractor,
    Section,
    assemble,
    extract,
    read_qoi_csv,
    sections,
    write_qoi_csv,
)
from .posterior import kde_marginals, pair_neurons, predictive_check
from .sensitivity import (
    ParamSpace,
    SobolResult,
    growth_param_space,
    ishigami,
    ishigami_analytic_s1,
    ISHIGAMI_SPACE,
    model_expectation,
    run_sa,
    saltelli_sample,
    sobol_indices,
)
from .smcabc import (
    Particle,
    Prior,
    SmcAbcSampler,
    SmcConfig,
    SmcTrace,
    ess,
    move_particle,
    next_epsilon,
    run_smcabc,
    systematic_resample,
)
from .swc import (
    MorphologyReport,
    SwcRecord,
    parse_swc,
    parse_swc_file,
    select_subtree,
    write_swc,
)

__all__ = [name for name in dir() if not name.startswith("_")]
