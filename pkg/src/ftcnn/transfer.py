"""Weight transfer, head replacement, and layer-wise fine-tune plans.

A plan names the contiguous suffix of layers that stays trainable
("FT:conv3-fc8" style); everything before it is frozen by zeroing its
learning rate.  "scratch" trains every layer from a fresh initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import optim
from .errors import ConfigError, TransferError
from .nn import (
    ArchitectureSpec,
    NetworkState,
    Param,
    infer_shapes,
    validate_spec,
    weight_shape,
)
from .optim import LearningSchedule

BASE_ALPHA = 0.001  # transferred / scratch layers
HEAD_ALPHA = 0.01   # freshly initialized last layer of a fine-tune plan


@dataclass(frozen=True)
class FineTunePlan:
    name: str
    trainable: tuple[str, ...]
    frozen: tuple[str, ...]

    def is_scratch(self) -> bool:
        return self.name == "scratch"


def transfer_weights(src: NetworkState, dst: NetworkState) -> NetworkState:
    """Copy every layer except the last from src onto a copy of dst.

    The two networks must agree layer-for-layer except possibly in the
    final (head) layer.
    """
    src_names = src.layer_names()
    dst_names = dst.layer_names()
    if src_names != dst_names:
        raise TransferError(f"layer sets differ: {src_names} vs {dst_names}")
    out = dst.copy()
    for name in dst_names[:-1]:
        s, d = src.layers[name], dst.layers[name]
        if s.w.shape != d.w.shape or s.b.shape != d.b.shape:
            raise TransferError(
                f"{name}: source shapes {s.w.shape}/{s.b.shape} do not match "
                f"destination {d.w.shape}/{d.b.shape}"
            )
        out.layers[name] = Param(s.w.copy(), s.b.copy())
    return out


def replace_head(
    net: NetworkState,
    spec: ArchitectureSpec,
    classes: int,
    init: str = "gaussian",
    seed: int = 0,
) -> tuple[NetworkState, ArchitectureSpec]:
    """Reallocate the final fully-connected layer for a new class count."""
    if classes < 2:
        raise ConfigError(f"class count must be >= 2, got {classes}")
    validate_spec(spec)
    last_name = spec.trainable_names()[-1]
    rows = list(spec.rows)
    idx = [i for i, r in enumerate(rows) if r.name == last_name][0]
    rows[idx] = replace(rows[idx], out_channels=int(classes))
    new_spec = ArchitectureSpec(rows=tuple(rows))
    validate_spec(new_spec)

    ins = [new_spec.rows[0].in_shape] + infer_shapes(new_spec)[:-1]
    in_shape = ins[idx]
    head = build_head_param(rows[idx], in_shape, init, seed)
    out = net.copy()
    out.layers[last_name] = head
    return out, new_spec


def build_head_param(row, in_shape, init: str, seed: int) -> Param:
    wshape = weight_shape(row, in_shape)
    rng = optim.rng_from(seed)
    w = optim.init_weights(wshape, init, rng)
    b = optim.init_weights((wshape[0],), init, rng)  # bias convention: zeros
    return Param(w, b)


def make_plan(name: str, spec: ArchitectureSpec) -> FineTunePlan:
    """Parse "scratch", "FT:only <last>", or "FT:<layer>-<last>" into a plan."""
    validate_spec(spec)
    names = spec.trainable_names()
    last = names[-1]
    if name == "scratch":
        return FineTunePlan(name=name, trainable=tuple(names), frozen=())
    if not name.startswith("FT:"):
        raise ConfigError(f"unknown plan name {name!r}")
    body = name[3:].strip()
    if body == f"only {last}":
        trainable = [last]
    elif body.startswith("only "):
        raise ConfigError(f"plan {name!r} must target the last layer {last!r}")
    else:
        first, sep, end = body.rpartition("-")
        if not sep or end != last:
            raise ConfigError(f"plan {name!r} must end at the last layer {last!r}")
        if first not in names:
            raise ConfigError(f"plan {name!r} names unknown layer {first!r}")
        trainable = names[names.index(first):]
    frozen = tuple(n for n in names if n not in trainable)
    return FineTunePlan(name=name, trainable=tuple(trainable), frozen=frozen)


def apply_plan(plan: FineTunePlan, base: LearningSchedule) -> LearningSchedule:
    """Zero the learning rate of every frozen layer; trainable layers keep base rates."""
    for layer in plan.trainable + plan.frozen:
        if layer not in base.alpha_per_layer:
            raise ConfigError(f"schedule has no rate for layer {layer!r}")
    alpha = dict(base.alpha_per_layer)
    for layer in plan.frozen:
        alpha[layer] = 0.0
    return LearningSchedule(
        mu=base.mu,
        gamma=base.gamma,
        alpha_per_layer=alpha,
        batch_size=base.batch_size,
        epoch_length=base.epoch_length,
        bias_rate_multiplier=base.bias_rate_multiplier,
    )


def plan_schedule(
    plan: FineTunePlan,
    spec: ArchitectureSpec,
    batch_size: int,
    epoch_length: int,
    mu: float = 0.9,
    gamma: float = 0.95,
    base_alpha: float = BASE_ALPHA,
    head_alpha: float = HEAD_ALPHA,
    bias_rate_multiplier: float = 2.0,
) -> LearningSchedule:
    """Standard schedule for a plan: fine-tune plans train transferred layers
    at ``base_alpha`` and the fresh head at ``head_alpha``; scratch uses
    ``base_alpha`` everywhere.  Frozen layers end up at exactly 0."""
    names = spec.trainable_names()
    alpha = {n: base_alpha for n in names}
    if not plan.is_scratch():
        alpha[names[-1]] = head_alpha
    base = LearningSchedule(
        mu=mu,
        gamma=gamma,
        alpha_per_layer=alpha,
        batch_size=batch_size,
        epoch_length=epoch_length,
        bias_rate_multiplier=bias_rate_multiplier,
    )
    return apply_plan(plan, base)
