"""Backend selection for the hot numeric kernels.

By default the numba-compiled kernels are used; set ``ORDSS_NUMBA=0`` to
force the pure-numpy fallback (it is also used automatically when numba
cannot be imported).  Both backends implement the same contracts with
identical pre-drawn-randomness semantics; the selected backend is part of
the run configuration when exact reproducibility matters.
"""

import os

_DISABLED = {"0", "false", "off", "no"}


def numba_enabled() -> bool:
    return os.environ.get("ORDSS_NUMBA", "1").strip().lower() not in _DISABLED


if numba_enabled():
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl
        BACKEND = "numpy"
else:
    from . import _numpy as _impl
    BACKEND = "numpy"

mix64 = _impl.mix64
counter_normal = _impl.counter_normal
spectral_radius = _impl.spectral_radius
identification_sigma = _impl.identification_sigma
gr_loglik_shared = _impl.gr_loglik_shared
linear_loglik_shared = _impl.linear_loglik_shared
propagate_shared = _impl.propagate_shared
simulate_states = _impl.simulate_states
resample_from_uniforms = _impl.resample_from_uniforms
systematic_from_uniform = _impl.systematic_from_uniform
pf_gr = _impl.pf_gr
pf_linear = _impl.pf_linear
perturb_params = _impl.perturb_params
mif2_chunk_gr = _impl.mif2_chunk_gr
mif2_chunk_linear = _impl.mif2_chunk_linear

LOG2PI = _impl.LOG2PI
PROB_FLOOR = _impl.PROB_FLOOR


def backend_name() -> str:
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return BACKEND
