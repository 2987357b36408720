"""Contextual pointwise convolution (CPWC) in numpy."""
from .layer import (
    CheckReport,
    CpwcParams,
    GroupPlan,
    Variant,
    count_cpwc,
    cpwc_backward,
    cpwc_forward,
    finite_difference_check,
    init_params,
    macs_cpwc,
    plan_groups,
)
from .netspec import NetworkSpec, builtin_spec, count_network, parse_spec, serialize, surgery
from .tensor import ConvFilterBank, add_elementwise, conv2d_oracle

__version__ = "0.1.0"
