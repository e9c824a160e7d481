"""sharpkit: sharpness estimation protocols for measurement black boxes.

A simulation library and experiment CLI around one separation: telling a
projective measurement in a hidden random basis apart from a classical
uniform random number generator needs on the order of sqrt(d) queries when
only classical outcomes are available (a birthday-style collision test),
but only a constant number of queries once post-measurement states are
returned (measure twice and count index matches, which estimates the
measurement's sharpness).  A Weingarten/total-variation verification suite
backs the classical-access side numerically at small sizes.
"""

from .qcore import (
    DensityState,
    DimensionError,
    PureState,
    ResourceLimitError,
    RngStream,
    ShapeError,
    UnitaryMatrix,
    maximally_mixed,
    sample_haar_state,
    sample_haar_unitary,
)
from .measure import (
    Access,
    AccessError,
    Backend,
    Device,
    DeviceKind,
    FixedPure,
    Instrument,
    MaximallyMixed,
    MeasurementOutcome,
    Povm,
    PostStateOf,
    UnsupportedBackendError,
    classical_device,
    custom_device,
    load_operator_file,
    operators_from_json,
    operators_to_json,
    povm_of,
    projective_haar_device,
    projective_instrument,
    random_hypothesis_device,
    sharpness,
)
from .protocols import (
    Decision,
    InsufficientSubsampleError,
    RobustReport,
    SharpnessEstimate,
    Verdict,
    collision_test,
    controlled_swap_equivalence_check,
    decide_sharpness,
    measure_twice,
    robust_measure_twice,
)
from .stats import (
    CollisionMoments,
    MomentPair,
    ScalingFit,
    ScalingPoint,
    SearchFailureError,
    SuccessEstimate,
    chebyshev_success,
    collision_moments,
    empirical_success,
    haar_mean_moments,
    minimal_query_search,
    scaling_exponent,
    uniform_moments,
    wilson_interval,
)
from .haarverify import (
    BoundViolationError,
    WeingartenTable,
    cycle_count,
    cycle_sum_identity,
    tv_iid_protocol,
    twirl_compare,
    weingarten_table,
    wg_identity_gap,
)

__version__ = "0.1.0"
