"""The contextual pointwise convolution block.

A CPWC block keeps the 1x1 convolution and adds two context paths:

* stage 1: ``Z`` grouped 3x3 filters, filter ``i`` reading the input channels
  of group ``i`` (see :func:`plan_groups`),
* stage 2: a depthwise 3x3 filter on every stage-1 output channel.

The three path outputs are summed. There is no bias, normalization or
nonlinearity inside the block.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .tensor import (
    ConvFilterBank,
    as_tensor,
    conv2d_oracle,
    depthwise_conv2d,
    depthwise_conv2d_backward,
)


class Variant(str, enum.Enum):
    FULL = "full"
    NO_STAGE2 = "no-stage2"
    NO_PWC = "no-pwc"
    NO_PWC_NO_STAGE2 = "no-pwc-no-stage2"
    PWC_ONLY = "pwc-only"

    @property
    def has_pwc(self) -> bool:
        return self in (Variant.FULL, Variant.NO_STAGE2, Variant.PWC_ONLY)

    @property
    def has_stage1(self) -> bool:
        return self is not Variant.PWC_ONLY

    @property
    def has_stage2(self) -> bool:
        return self in (Variant.FULL, Variant.NO_PWC)

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for v in cls:
            if key in (v.value, v.name.lower().replace("_", "-")):
                return v
        raise ValueError(f"unknown CPWC variant {value!r}; "
                         f"choose from {[v.value for v in cls]}")


@dataclass(frozen=True)
class GroupPlan:
    """Assignment of the ``C`` input channels to the ``Z`` stage-1 groups."""

    in_channels: int
    out_channels: int
    groups: tuple[tuple[int, ...], ...]

    @property
    def case(self) -> int:
        if self.out_channels == self.in_channels:
            return 1
        return 2 if self.out_channels < self.in_channels else 3

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @cached_property
    def flat_channels(self) -> np.ndarray:
        return np.fromiter((c for g in self.groups for c in g), dtype=np.intp, count=self.total)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.intp)

    @cached_property
    def group_index(self) -> np.ndarray:
        """Group number of every entry of :attr:`flat_channels`."""
        return np.repeat(np.arange(self.out_channels), self.sizes)

    def share_counts(self) -> list[int]:
        counts = [0] * self.in_channels
        for g in self.groups:
            for c in g:
                counts[c] += 1
        return counts

    def describe(self) -> str:
        z, c = self.out_channels, self.in_channels
        sizes = self.sizes
        if self.case == 1:
            return f"case 1, {z} singleton groups"
        if self.case == 2:
            if len(set(sizes)) == 1:
                return f"case 2, {z} groups × {sizes[0]} channels"
            big, rm = sizes[0], c % z
            return (f"case 2, {z} groups: {rm} × {big} channels + "
                    f"{z - rm} × {big - 1} channels")
        shares = self.share_counts()
        if len(set(shares)) == 1:
            return f"case 3, {z} singleton groups, each channel shared by {shares[0]} groups"
        rm = z % c
        first = "first channel" if rm == 1 else f"first {rm} channels"
        return (f"case 3, {z} singleton groups, {first} shared by {shares[0]} "
                f"groups, remaining {c - rm} by {shares[-1]}")


def plan_groups(in_channels: int, out_channels: int) -> GroupPlan:
    """Build the stage-1 channel grouping for a ``C -> Z`` block.

    Z == C: one channel per group. Z < C: consecutive channel ranges, the first
    ``C mod Z`` groups one channel larger. Z > C: one channel per group, the
    first ``Z mod C`` channels shared by one more group than the rest, group
    indices ascending with channel index.
    """
    c, z = int(in_channels), int(out_channels)
    if c < 1 or z < 1:
        raise ValueError(f"channel counts must be positive, got C={in_channels}, Z={out_channels}")
    groups: list[tuple[int, ...]] = []
    if z <= c:
        base, rm = divmod(c, z)
        start = 0
        for i in range(z):
            size = base + 1 if i < rm else base
            groups.append(tuple(range(start, start + size)))
            start += size
    else:
        base, rm = divmod(z, c)
        for ch in range(c):
            groups.extend([(ch,)] * (base + 1 if ch < rm else base))
    return GroupPlan(c, z, tuple(groups))


@dataclass(frozen=True)
class CpwcParams:
    """Weight banks of one CPWC block.

    ``pwc`` has shape ``(Z, C)``; ``stage1`` packs every group's ``r_i x 3 x 3``
    block along axis 0 in group order (shape ``(sum r_i, 3, 3)``); ``stage2``
    has shape ``(Z, 3, 3)``. Banks not used by the variant are ``None``.
    """

    plan: GroupPlan
    variant: Variant
    stride: int = 1
    pwc: np.ndarray | None = None
    stage1: np.ndarray | None = None
    stage2: np.ndarray | None = None

    def __post_init__(self):
        c, z = self.plan.in_channels, self.plan.out_channels
        v = self.variant
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        expected = {
            "pwc": (z, c) if v.has_pwc else None,
            "stage1": (self.plan.total, 3, 3) if v.has_stage1 else None,
            "stage2": (z, 3, 3) if v.has_stage2 else None,
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if shape is None and arr is not None:
                raise ValueError(f"variant {v.value} has no {name} bank")
            if shape is not None and (arr is None or arr.shape != shape):
                got = None if arr is None else arr.shape
                raise ValueError(f"{name} bank must have shape {shape}, got {got}")

    def banks(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in BANKS if getattr(self, k) is not None}

    def stage1_blocks(self) -> list[np.ndarray]:
        off = self.plan.offsets
        return [self.stage1[off[i]:off[i + 1]] for i in range(self.plan.out_channels)]

    def num_params(self) -> int:
        return sum(a.size for a in self.banks().values())

    def with_banks(self, **banks) -> "CpwcParams":
        return replace(self, **banks)

    @property
    def dtype(self):
        return next(iter(self.banks().values())).dtype


BANKS = ("pwc", "stage1", "stage2")


def init_params(plan: GroupPlan, variant=Variant.FULL, stride: int = 1, seed: int = 0,
                precision: str = "double") -> CpwcParams:
    """Seeded zero-mean normal init, variance 1/fan_in per bank."""
    variant = Variant.parse(variant)
    dtype = np.float64 if precision == "double" else np.float32
    rng = np.random.default_rng(seed)
    c, z = plan.in_channels, plan.out_channels
    banks = {}
    if variant.has_pwc:
        banks["pwc"] = rng.normal(0.0, np.sqrt(1.0 / c), size=(z, c))
    if variant.has_stage1:
        fan_in = np.repeat(9.0 * np.array(plan.sizes), plan.sizes)
        banks["stage1"] = rng.normal(size=(plan.total, 3, 3)) / np.sqrt(fan_in)[:, None, None]
    if variant.has_stage2:
        banks["stage2"] = rng.normal(0.0, 1.0 / 3.0, size=(z, 3, 3))
    banks = {k: v.astype(dtype) for k, v in banks.items()}
    return CpwcParams(plan, variant, stride, **banks)


def _check_input(x, p: CpwcParams) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[1] != p.plan.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, block expects {p.plan.in_channels}")
    return x


def output_shape(x_shape, p: CpwcParams) -> tuple[int, int, int, int]:
    n, _, h, w = x_shape
    s = p.stride
    return (n, p.plan.out_channels, (h - 1) // s + 1, (w - 1) // s + 1)


def _forward(x: np.ndarray, p: CpwcParams):
    s = p.stride
    out = np.zeros(output_shape(x.shape, p), dtype=x.dtype)
    cache = {}
    if p.pwc is not None:
        out += np.einsum("zc,nchw->nzhw", p.pwc, x[:, :, ::s, ::s], optimize=True)
    if p.stage1 is not None:
        xg = x[:, p.plan.flat_channels]
        per_entry = depthwise_conv2d(xg, p.stage1, stride=s, padding=1)
        s1 = np.add.reduceat(per_entry, p.plan.offsets[:-1], axis=1)
        cache["xg"], cache["s1"] = xg, s1
        out += s1
        if p.stage2 is not None:
            out += depthwise_conv2d(s1, p.stage2, stride=1, padding=1)
    return out, cache


def cpwc_forward(x, p: CpwcParams) -> np.ndarray:
    """Sum of the PWC, stage-1 and stage-2 path outputs present in ``p``."""
    x = _check_input(x, p)
    return _forward(x, p)[0]


def cpwc_forward_cached(x, p: CpwcParams):
    """Forward pass that also returns the intermediates :func:`cpwc_backward` reuses."""
    x = _check_input(x, p)
    return _forward(x, p)


def cpwc_backward(x, p: CpwcParams, grad_out, cache=None):
    """Return ``(grad_x, grad_params)`` for the cotangent ``grad_out``.

    ``grad_params`` is a :class:`CpwcParams` holding the gradient of each bank.
    ``cache`` (from :func:`cpwc_forward_cached`) skips recomputing the forward.
    """
    x = _check_input(x, p)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    if grad_out.shape != output_shape(x.shape, p):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match output "
                         f"{output_shape(x.shape, p)}")
    s = p.stride
    if cache is None:
        _, cache = _forward(x, p)
    gx = np.zeros_like(x)
    grads = {}
    if p.pwc is not None:
        xs = x[:, :, ::s, ::s]
        grads["pwc"] = np.einsum("nzhw,nchw->zc", grad_out, xs, optimize=True)
        gx[:, :, ::s, ::s] += np.einsum("zc,nzhw->nchw", p.pwc, grad_out, optimize=True)
    if p.stage1 is not None:
        g_s1 = grad_out
        if p.stage2 is not None:
            g_from2, grads["stage2"] = depthwise_conv2d_backward(
                cache["s1"], p.stage2, grad_out, stride=1, padding=1)
            g_s1 = grad_out + g_from2
        g_entries = g_s1[:, p.plan.group_index]
        gxg, grads["stage1"] = depthwise_conv2d_backward(
            cache["xg"], p.stage1, g_entries, stride=s, padding=1)
        np.add.at(gx, (slice(None), p.plan.flat_channels), gxg)
    return gx, p.with_banks(**grads)


# Independent path evaluation through the reference kernel.

def pwc_bank(p: CpwcParams) -> ConvFilterBank:
    return ConvFilterBank.dense(p.pwc[:, :, None, None])


def stage1_bank(p: CpwcParams) -> ConvFilterBank:
    return ConvFilterBank.from_lists(p.plan.groups, p.stage1_blocks())


def stage2_bank(p: CpwcParams) -> ConvFilterBank:
    return ConvFilterBank.from_lists([[i] for i in range(p.plan.out_channels)],
                                     [w[None] for w in p.stage2])


def oracle_paths(x, p: CpwcParams) -> dict[str, np.ndarray]:
    """Each active path computed separately with :func:`conv2d_oracle`."""
    x = _check_input(x, p)
    paths = {}
    if p.pwc is not None:
        paths["pwc"] = conv2d_oracle(x, pwc_bank(p), stride=p.stride, padding=0)
    if p.stage1 is not None:
        paths["stage1"] = conv2d_oracle(x, stage1_bank(p), stride=p.stride, padding=1)
        if p.stage2 is not None:
            paths["stage2"] = conv2d_oracle(paths["stage1"], stage2_bank(p), stride=1, padding=1)
    return paths


@dataclass
class CheckReport:
    errors: dict[str, float]
    tolerance: float
    epsilon: float
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)

    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if e >= self.tolerance]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "epsilon": self.epsilon,
                "max_rel_error": dict(self.errors), "checked": dict(self.checked),
                "skipped": dict(self.skipped)}


def _pick(size: int, limit: int, rng) -> np.ndarray:
    if size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def _central_difference(loss_parts: Callable[[], np.ndarray], arr: np.ndarray,
                        flat_idx: int, eps: float) -> float:
    view = arr.reshape(-1)
    orig = view[flat_idx]
    view[flat_idx] = orig + eps
    up = loss_parts()
    view[flat_idx] = orig - eps
    down = loss_parts()
    view[flat_idx] = orig
    # difference taken per output element before summing limits cancellation
    return float(((up - down) * (up + down)).sum() / (2 * eps))


def finite_difference_check(p: CpwcParams, x, epsilon: float = 1e-5, tolerance: float = 1e-6,
                            max_entries: int = 256, seed: int = 0,
                            backward=cpwc_backward) -> CheckReport:
    """Compare analytic gradients of ``sum(cpwc_forward(x, p) ** 2)`` with
    central differences, per weight bank and for the input.

    Banks larger than ``max_entries`` are checked on a seeded random subset.
    ``backward`` can be swapped out to check a different gradient routine.
    """
    x = _check_input(x, p)
    if x.dtype != np.float64 or p.dtype != np.float64:
        raise ValueError("finite-difference checks need double precision inputs and weights")
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    rng = np.random.default_rng(seed)
    x = x.copy()
    banks = {k: v.copy() for k, v in p.banks().items()}
    p = p.with_banks(**banks)

    out = cpwc_forward(x, p)
    gx, gp = backward(x, p, 2.0 * out)
    analytic = dict(gp.banks())
    analytic["x"] = gx
    targets = dict(banks)
    targets["x"] = x

    def outputs():
        return cpwc_forward(x, p)

    errors, checked = {}, {}
    for name, arr in targets.items():
        idx = _pick(arr.size, max_entries, rng)
        a = analytic[name].reshape(-1)[idx]
        num = np.array([_central_difference(outputs, arr, int(i), epsilon) for i in idx])
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-12)
        errors[name] = float(np.max(np.abs(a - num) / denom))
        checked[name] = int(idx.size)
    return CheckReport(errors, tolerance, epsilon, checked)


def random_check_configs(trials: int, seed: int):
    """Random small CPWC configurations cycling through every grouping case,
    both strides and every variant."""
    rng = np.random.default_rng(seed)
    variants = list(Variant)
    for t in range(trials):
        case = t % 3
        c = int(rng.integers(1, 9))
        if case == 0:
            z = c
        elif case == 1:
            c = max(c, 2)
            z = int(rng.integers(1, c))
        else:
            z = int(rng.integers(c + 1, c + 9))
        stride = 1 + (t // 3) % 2
        variant = variants[t % len(variants)]
        h, w = (int(v) for v in rng.integers(3, 8, size=2))
        x = rng.normal(size=(2, c, h, w))
        yield t, init_params(plan_groups(c, z), variant, stride, seed=seed * 1000 + t), x


def count_cpwc(in_channels: int, out_channels: int, variant=Variant.FULL) -> int:
    c, z = int(in_channels), int(out_channels)
    if c < 1 or z < 1:
        raise ValueError("channel counts must be positive")
    v = Variant.parse(variant)
    return (c * z * v.has_pwc + 9 * max(c, z) * v.has_stage1 + 9 * z * v.has_stage2)


def macs_cpwc(in_channels: int, out_channels: int, variant, out_h: int, out_w: int) -> int:
    """Multiply-accumulates of one block at the given output resolution.

    Stage 2 runs at stride 1 on the already-strided stage-1 map, so every
    path shares the same output grid.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be positive")
    return out_h * out_w * count_cpwc(in_channels, out_channels, variant)
