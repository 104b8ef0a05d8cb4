"""Complex-valued meta-learning toolkit.

Reverse-mode differentiation over complex tensors with dual adjoint
channels, complex-valued layers (convolution, fully connected, softmax,
attention, normalization), an exact second-order episodic meta-learner,
and synthetic modulated-signal data for desk-scale experiments.
"""

from .ctensor import CTensor, cmatmul, cmul, conj, hermitian
from .layers import (
    ArchConfig,
    MhaParams,
    NormState,
    c_act,
    c_attention,
    c_mha,
    c_norm,
    c_softmax,
    camel_forward,
    cconv1d,
    cfc,
    init_params,
)
from .meta import (
    AdaptiveBetaConfig,
    Episode,
    EpisodeTask,
    MetaConfig,
    ParamSet,
    QuadraticTask,
    adaptive_beta,
    evaluate,
    first_order_meta_gradient,
    inner_update,
    meta_gradient,
    meta_objective,
    outer_update,
    train_camel,
    train_meta,
)
from .signals import (
    FramePool,
    SignalFrame,
    add_awgn,
    generate_pool,
    load_frames,
    modulate,
    sample_episode,
    save_frames,
    scenario_split,
)
from .wirtinger import (
    DualCotangent,
    Tape,
    backward,
    complex_gradient,
    cr_check,
    hvp,
    opcount_compare,
)

__version__ = "0.1.0"
