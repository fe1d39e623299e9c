"""Construction and (de)serialization glue for the three model groups."""

from __future__ import annotations

import numpy as np

from .entropy_model import EntropyModel, MixedModelConfig
from .errors import HeaderError
from .netcode import group_flat, set_group_flat
from .pipeline import Synthesis, Upsampler

GROUP_ORDER = ("entropy", "upsampler", "synthesis")


def build_models(header_like, rng=None):
    """Instantiate the entropy model, upsampler and synthesis networks.

    ``header_like`` needs the hyperparameter fields of bitstream.Header.
    With ``rng`` the networks get their training initialization; without it
    they are zero-filled shells waiting for decoded weights.
    """
    hl = header_like
    cfg = MixedModelConfig(
        levels=hl.levels,
        arm_levels=hl.arm_levels,
        aru_hidden=hl.aru_hidden,
        aru_pass1_kernel=hl.aru_pass1_kernel,
        aru_pass2_kernel=hl.aru_pass2_kernel,
        arm_context=hl.arm_context,
        arm_hidden=hl.arm_hidden,
    )
    em = EntropyModel(cfg, rng)
    ups = Upsampler(hl.ups_kernel, init="bicubic" if rng is not None else "zeros")
    syn = Synthesis(hl.levels, rng, layers=hl.synth_layers,
                    kernel=hl.synth_kernel, width=hl.synth_width)
    return em, ups, syn


def group_params(em, ups, syn):
    return {
        "entropy": em.parameters(),
        "upsampler": ups.parameters(),
        "synthesis": syn.parameters(),
    }


def group_flats(em, ups, syn):
    return {name: group_flat(ps) for name, ps in group_params(em, ups, syn).items()}


def group_counts(em, ups, syn):
    return {
        name: sum(p.data.size for p in ps)
        for name, ps in group_params(em, ups, syn).items()
    }


def load_group_weights(em, ups, syn, weights):
    params = group_params(em, ups, syn)
    for name in GROUP_ORDER:
        if name not in weights:
            raise HeaderError(f"missing weights for group {name}")
        set_group_flat(params[name], weights[name])


def check_weights_finite(weights):
    for name, flat in weights.items():
        if flat.size and not np.all(np.isfinite(flat)):
            raise HeaderError(f"non-finite weights decoded for group {name}")
