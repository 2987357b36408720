"""Declarative network specs, CPWC surgery and parameter/MAC accounting.

A spec document is JSON::

    {
      "name": "resnet50",
      "input": {"channels": 3, "height": 224, "width": 224},
      "stages": [
        {"block": "conv", "params": {"out_channels": 64, "kernel": 7, "stride": 2}},
        {"block": "bottleneck", "params": {"mid_channels": 64, "out_channels": 256},
         "repeat": 3, "cpwc": "full"},
        ...
      ]
    }

Block types and their params:

``conv``        out_channels, kernel, stride=1, padding=kernel//2
``norm``        batch norm over the current channels, no params
``pool``        mode: max|avg|global, kernel, stride, padding=0
``fc``          out_features, bias=true
``bottleneck``  mid_channels, out_channels, stride=1, preact=false

Any block may declare ``in_channels``; it must match the channel count
flowing into it. ``stride`` of a repeated bottleneck applies to the first
repeat only. A projection shortcut (1x1 conv) is inserted whenever a
bottleneck changes channels or resolution. ``cpwc`` marks every 1x1 conv
expanded from that stage as a CPWC node of the given variant.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from .layer import Variant, count_cpwc, macs_cpwc
from .tensor import conv_output_size

NODE_KINDS = ("input", "conv", "fc", "norm", "pool", "add")
BLOCKS = ("conv", "norm", "pool", "fc", "bottleneck")
SCHEMA_VERSION = 1


class SpecError(ValueError):
    """Raised with every schema violation found in a spec document."""

    def __init__(self, violations: list[tuple[int | None, str]]):
        self.violations = violations
        msg = "; ".join(f"stage {i}: {r}" if i is not None else r for i, r in violations)
        super().__init__(msg)


@dataclass(frozen=True)
class LayerNode:
    kind: str
    label: str
    in_channels: int
    out_channels: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    bias: bool = False
    cpwc_variant: Variant | None = None
    repeat: int = 1

    @property
    def is_pwc(self) -> bool:
        return self.kind == "conv" and self.kernel == (1, 1)


@dataclass(frozen=True)
class Stage:
    block: str
    params: dict = field(default_factory=dict)
    repeat: int = 1
    cpwc: Variant | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"block": self.block, "params": dict(self.params)}
        if self.repeat != 1:
            d["repeat"] = self.repeat
        if self.cpwc is not None:
            d["cpwc"] = self.cpwc.value
        return d


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input: tuple[int, int, int]
    stages: tuple[Stage, ...]

    def nodes(self) -> list[LayerNode]:
        return expand(self)

    def to_dict(self) -> dict:
        c, h, w = self.input
        return {"name": self.name,
                "input": {"channels": c, "height": h, "width": w},
                "stages": [s.to_dict() for s in self.stages]}


def serialize(spec: NetworkSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2) + "\n"


def _int(params, key, where, errors, default=None, minimum=1):
    val = params.get(key, default)
    if val is None:
        errors.append((where, f"missing '{key}'"))
        return None
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        errors.append((where, f"'{key}' must be an integer >= {minimum}, got {val!r}"))
        return None
    return val


def parse_spec(text: str | dict) -> NetworkSpec:
    """Parse and validate a spec document (JSON text or an already-loaded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise SpecError([(None, f"malformed document: {e}")]) from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise SpecError([(None, "malformed document: top level must be an object")])

    errors: list[tuple[int | None, str]] = []
    inp = doc.get("input")
    if not isinstance(inp, dict):
        errors.append((None, "no input node"))
        shape = None
    else:
        vals = [_int(inp, k, None, errors) for k in ("channels", "height", "width")]
        shape = None if None in vals else tuple(vals)
    raw_stages = doc.get("stages")
    if not isinstance(raw_stages, list) or not raw_stages:
        errors.append((None, "empty node list"))
        raw_stages = []

    stages = []
    for i, raw in enumerate(raw_stages):
        if not isinstance(raw, dict):
            errors.append((i, "stage must be an object"))
            continue
        block = raw.get("block")
        if block not in BLOCKS:
            errors.append((i, f"unknown node kind {block!r}"))
            continue
        params = raw.get("params", {})
        if not isinstance(params, dict):
            errors.append((i, "params must be an object"))
            continue
        unknown = set(raw) - {"block", "params", "repeat", "cpwc"}
        if unknown:
            errors.append((i, f"unknown keys {sorted(unknown)}"))
        repeat = _int(raw, "repeat", i, errors, default=1)
        cpwc = raw.get("cpwc")
        if cpwc is not None:
            try:
                cpwc = Variant.parse(cpwc)
            except ValueError as e:
                errors.append((i, str(e)))
                cpwc = None
        stages.append(Stage(block, params, repeat or 1, cpwc))

    if errors:
        raise SpecError(errors)
    spec = NetworkSpec(str(doc.get("name", "unnamed")), shape, tuple(stages))
    expand(spec)  # channel/spatial validation
    return spec


def expand(spec: NetworkSpec) -> list[LayerNode]:
    """Expand stages into the flat node list, validating channel/spatial flow."""
    errors: list[tuple[int | None, str]] = []
    c, h, w = spec.input
    nodes = [LayerNode("input", "input", c, c, (h, w), (h, w))]
    flat = False  # after an fc the tensor has no spatial extent

    def conv(label, cin, cout, hw, k, s, pad, variant):
        oh = conv_output_size(hw[0], k, s, pad)
        ow = conv_output_size(hw[1], k, s, pad)
        return LayerNode("conv", label, cin, cout, hw, (oh, ow), (k, k), s, pad,
                         cpwc_variant=variant if k == 1 else None)

    for i, st in enumerate(spec.stages):
        p = st.params
        declared = p.get("in_channels")
        if declared is not None and declared != c:
            errors.append((i, f"channel chain broken: in_channels {declared} "
                              f"but the previous node produces {c}"))
            break
        if flat and st.block != "fc":
            errors.append((i, f"{st.block} after fc has no spatial input"))
            break
        n_err = len(errors)
        for r in range(st.repeat):
            tag = f"s{i}" if st.repeat == 1 else f"s{i}.{r}"
            hw = (h, w)
            if st.block == "conv":
                k = _int(p, "kernel", i, errors)
                cout = _int(p, "out_channels", i, errors)
                s = _int(p, "stride", i, errors, default=1)
                pad = _int(p, "padding", i, errors, default=(k or 1) // 2, minimum=0)
                if len(errors) > n_err:
                    break
                node = conv(f"{tag}.conv{k}x{k}", c, cout, hw, k, s, pad, st.cpwc)
                new = [node]
            elif st.block == "norm":
                new = [LayerNode("norm", f"{tag}.norm", c, c, hw, hw)]
            elif st.block == "pool":
                mode = p.get("mode", "max")
                if mode == "global":
                    new = [LayerNode("pool", f"{tag}.gpool", c, c, hw, (1, 1), hw)]
                elif mode in ("max", "avg"):
                    k = _int(p, "kernel", i, errors)
                    s = _int(p, "stride", i, errors, default=k)
                    pad = _int(p, "padding", i, errors, default=0, minimum=0)
                    if len(errors) > n_err:
                        break
                    out = (conv_output_size(h, k, s, pad), conv_output_size(w, k, s, pad))
                    new = [LayerNode("pool", f"{tag}.{mode}pool", c, c, hw, out, (k, k), s, pad)]
                else:
                    errors.append((i, f"unknown pool mode {mode!r}"))
                    break
            elif st.block == "fc":
                cout = _int(p, "out_features", i, errors)
                if len(errors) > n_err:
                    break
                cin = c * h * w
                new = [LayerNode("fc", f"{tag}.fc", cin, cout, hw, (1, 1),
                                 bias=bool(p.get("bias", True)))]
                flat = True
            else:  # bottleneck
                mid = _int(p, "mid_channels", i, errors)
                cout = _int(p, "out_channels", i, errors)
                s = _int(p, "stride", i, errors, default=1) if r == 0 else 1
                if len(errors) > n_err:
                    break
                v = st.cpwc
                c1 = conv(f"{tag}.conv1", c, mid, hw, 1, 1, 0, v)
                c2 = conv(f"{tag}.conv2", mid, mid, hw, 3, s, 1, v)
                ohw = c2.out_hw
                c3 = conv(f"{tag}.conv3", mid, cout, ohw, 1, 1, 0, v)
                proj = []
                if s != 1 or c != cout:
                    proj = [conv(f"{tag}.proj", c, cout, hw, 1, s, 0, v)]
                def bn(lbl, ch, at):
                    return LayerNode("norm", f"{tag}.{lbl}", ch, ch, at, at)
                if p.get("preact", False):
                    new = [bn("bn1", c, hw), c1, bn("bn2", mid, hw), c2,
                           bn("bn3", mid, ohw), c3, *proj]
                else:
                    new = [c1, bn("bn1", mid, hw), c2, bn("bn2", mid, ohw), c3,
                           bn("bn3", cout, ohw)]
                    if proj:
                        new += [proj[0], bn("proj_bn", cout, ohw)]
                new.append(LayerNode("add", f"{tag}.add", cout, cout, ohw, ohw))
            if any(n.out_hw[0] < 1 or n.out_hw[1] < 1 for n in new):
                errors.append((i, f"spatial size collapses below 1 at {new[-1].label}"))
                break
            nodes.extend(new)
            c = new[-1].out_channels
            h, w = new[-1].out_hw
        if errors:
            break
    if errors:
        raise SpecError(errors)
    return nodes


def surgery(spec: NetworkSpec, variant) -> NetworkSpec:
    """Mark every 1x1 conv in ``spec`` as a CPWC node of ``variant``."""
    variant = Variant.parse(variant)
    stages = []
    for st in spec.stages:
        has_pwc = st.block == "bottleneck" or (st.block == "conv" and st.params.get("kernel") == 1)
        stages.append(replace(st, cpwc=variant) if has_pwc else st)
    return replace(spec, stages=tuple(stages))


def node_params(node: LayerNode) -> int:
    if node.kind == "conv":
        if node.cpwc_variant is not None:
            return count_cpwc(node.in_channels, node.out_channels, node.cpwc_variant)
        kh, kw = node.kernel
        return kh * kw * node.in_channels * node.out_channels
    if node.kind == "fc":
        return node.in_channels * node.out_channels + (node.out_channels if node.bias else 0)
    if node.kind == "norm":
        return 2 * node.out_channels
    return 0


def node_macs(node: LayerNode) -> int:
    oh, ow = node.out_hw
    if node.kind == "conv":
        if node.cpwc_variant is not None:
            return macs_cpwc(node.in_channels, node.out_channels, node.cpwc_variant, oh, ow)
        kh, kw = node.kernel
        return oh * ow * kh * kw * node.in_channels * node.out_channels
    if node.kind == "fc":
        return node.in_channels * node.out_channels
    return 0


@dataclass
class NodeCount:
    index: int
    label: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: str
    out_hw: tuple[int, int]
    cpwc: str | None
    params: int
    macs: int


@dataclass
class CountReport:
    name: str
    nodes: list[NodeCount]
    baseline: "CountReport | None" = None

    @property
    def params(self) -> int:
        return sum(n.params for n in self.nodes)

    @property
    def macs(self) -> int:
        return sum(n.macs for n in self.nodes)

    def deltas(self) -> list[tuple[NodeCount, int, int]]:
        """Per-node ``(node, param delta, MAC delta)`` against the baseline."""
        if self.baseline is None:
            raise ValueError("report has no baseline to compare against")
        return [(n, n.params - b.params, n.macs - b.macs)
                for n, b in zip(self.nodes, self.baseline.nodes)]

    def to_dict(self, per_node: bool = True) -> dict:
        d: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "name": self.name,
                             "total_params": self.params, "total_macs": self.macs}
        if self.baseline is not None:
            d["baseline_params"] = self.baseline.params
            d["baseline_macs"] = self.baseline.macs
            d["delta_params"] = self.params - self.baseline.params
            d["delta_macs"] = self.macs - self.baseline.macs
        if per_node:
            d["nodes"] = [asdict(n) for n in self.nodes]
        return d

    def to_json(self, per_node: bool = True) -> str:
        return json.dumps(self.to_dict(per_node), indent=2, sort_keys=True) + "\n"

    def to_text(self, per_node: bool = False) -> str:
        rows = []
        if per_node:
            rows.append(f"{'#':>4}  {'node':<18} {'kind':<5} {'cin':>6} {'cout':>6} "
                        f"{'k':>3} {'cpwc':<17} {'params':>10} {'MACs':>13}")
            for n in self.nodes:
                if n.kind == "input":
                    continue
                rows.append(f"{n.index:>4}  {n.label:<18} {n.kind:<5} {n.in_channels:>6} "
                            f"{n.out_channels:>6} {n.kernel:>3} {n.cpwc or '-':<17} "
                            f"{n.params:>10,} {n.macs:>13,}")
            rows.append("")
        rows.append(f"{'Model':<32} {'Params':>10} {'FLOPS':>8}")
        if self.baseline is not None:
            rows.append(_summary_row(f"{self.baseline.name}", self.baseline))
        rows.append(_summary_row(self.name, self))
        return "\n".join(rows) + "\n"


def _summary_row(name: str, rep: CountReport) -> str:
    return f"{name:<32} {rep.params / 1e6:>9.2f}M {rep.macs / 1e9:>7.2f}G"


def count_network(spec: NetworkSpec, baseline: NetworkSpec | None = None) -> CountReport:
    """Per-node and total parameter/MAC counts.

    Convolutions and fc layers cost MACs; norm layers carry 2 parameters per
    channel and no MACs; pool and add nodes are free.
    """
    counts = []
    for i, n in enumerate(spec.nodes()):
        counts.append(NodeCount(i, n.label, n.kind, n.in_channels, n.out_channels,
                                f"{n.kernel[0]}" if n.kind in ("conv", "pool") else "-",
                                n.out_hw, n.cpwc_variant.value if n.cpwc_variant else None,
                                node_params(n), node_macs(n)))
    name = spec.name
    if any(n.cpwc for n in counts):
        variants = sorted({n.cpwc for n in counts if n.cpwc})
        name = f"{spec.name} cpwc={','.join(variants)}"
    base = count_network(baseline) if baseline is not None else None
    return CountReport(name, counts, base)


def _bottleneck_stage(mid, out, repeat, stride, preact):
    return Stage("bottleneck", {"mid_channels": mid, "out_channels": out, "stride": stride,
                                "preact": preact}, repeat)


def resnet164(classes: int = 100) -> NetworkSpec:
    """Pre-activation bottleneck ResNet-164 for 32x32 CIFAR inputs."""
    stages = [Stage("conv", {"out_channels": 16, "kernel": 3})]
    for i, mid in enumerate((16, 32, 64)):
        stages.append(_bottleneck_stage(mid, 4 * mid, 18, 1 if i == 0 else 2, True))
    stages += [Stage("norm"), Stage("pool", {"mode": "global"}),
               Stage("fc", {"out_features": classes})]
    return NetworkSpec("resnet164", (3, 32, 32), tuple(stages))


def resnet50(classes: int = 1000) -> NetworkSpec:
    """ImageNet ResNet-50 at 224x224, stride on the 3x3 conv of each bottleneck."""
    stages = [Stage("conv", {"out_channels": 64, "kernel": 7, "stride": 2, "padding": 3}),
              Stage("norm"),
              Stage("pool", {"mode": "max", "kernel": 3, "stride": 2, "padding": 1})]
    for i, (mid, reps) in enumerate(((64, 3), (128, 4), (256, 6), (512, 3))):
        stages.append(_bottleneck_stage(mid, 4 * mid, reps, 1 if i == 0 else 2, False))
    stages += [Stage("pool", {"mode": "global"}), Stage("fc", {"out_features": classes})]
    return NetworkSpec("resnet50", (3, 224, 224), tuple(stages))


BUILTINS = {"resnet164": resnet164, "resnet50": resnet50}


def builtin_spec(name: str) -> NetworkSpec:
    try:
        return BUILTINS[name.lower().replace("-", "")]()
    except KeyError:
        raise ValueError(f"unknown builtin spec {name!r}; choose from {sorted(BUILTINS)}") from None
