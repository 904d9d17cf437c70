"""Analytic FLOP accounting per layer, per model and per placement.

One multiply-accumulate counts as 2 FLOPs. Pooling, activations, softmax,
concatenation, skip additions and the EGC sum are counted as free.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument, PersistenceError
from .model import (
    N_CLASSES,
    LayerInfo,
    ModelSpec,
    decision_head_layers,
    feature_extractor_layers,
    feature_length,
)

UNITS = "FLOPs (1 multiply-accumulate = 2 FLOPs)"


def _positive(*dims):
    if any(int(d) < 1 for d in dims):
        raise InvalidArgument(f"layer dimensions must be positive, got {dims}")


def flops_dense(n_in: int, n_out: int) -> int:
    _positive(n_in, n_out)
    return 2 * n_in * n_out


def flops_conv(h_out: int, w_out: int, c_in: int, c_out: int, k_h: int, k_w: int) -> int:
    _positive(h_out, w_out, c_in, c_out, k_h, k_w)
    return 2 * h_out * w_out * c_out * k_h * k_w * c_in


def layer_flops(layer: LayerInfo) -> int:
    if layer.kind == "conv":
        h, w, c_out = layer.out_shape
        return flops_conv(h, w, layer.in_channels, c_out, *layer.kernel)
    if layer.kind == "dense":
        return flops_dense(layer.in_channels, layer.out_shape[0])
    return 0


@dataclass(frozen=True)
class LayerFlops:
    name: str
    kind: str
    out_shape: tuple
    flops: int
    placement: str


@dataclass
class FlopReport:
    spec: ModelSpec
    layers: list = field(default_factory=list)
    n_ru: int = 0

    def _sum(self, placement):
        return sum(l.flops for l in self.layers if l.placement == placement)

    @property
    def per_ru(self) -> int:
        """FLOPs of one RU replica."""
        return self._sum("RU")

    @property
    def du(self) -> int:
        return self._sum("DU")

    @property
    def grand_total(self) -> int:
        return self.n_ru * self.per_ru + self.du

    @property
    def mflops(self) -> float:
        return self.grand_total / 1e6

    def block_total(self, prefix: str) -> int:
        return sum(l.flops for l in self.layers if l.name.startswith(prefix))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.spec.tag}; units: {UNITS}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "type", "output_shape", "flops", "placement"])
        for l in self.layers:
            w.writerow([l.name, l.kind, "x".join(map(str, l.out_shape)), l.flops, l.placement])
        return buf.getvalue()

    def summary(self) -> str:
        return (f"model: {self.spec.tag}\nunits: {UNITS}\n"
                f"per_ru: {self.per_ru}\nn_ru: {self.n_ru}\ndu: {self.du}\n"
                f"grand_total: {self.grand_total}\nmflops: {self.mflops:.4f}\n")


def _tag(layers, placement, prefix=""):
    return [LayerFlops(prefix + l.name, l.kind, l.out_shape, layer_flops(l), placement)
            for l in layers]


def classifier_layers(input_size: int, n_stacks: int) -> list:
    return (feature_extractor_layers(input_size, n_stacks)
            + decision_head_layers(feature_length(input_size, n_stacks)))


def estimate_model_flops(spec: ModelSpec) -> FlopReport:
    spec.validate()
    k = spec.kind
    if k == "central":
        layers = _tag(classifier_layers(spec.input_size, spec.n_stacks), "DU")
        return FlopReport(spec, layers, n_ru=spec.n_ru)
    if k == "ru":
        return FlopReport(spec, _tag(classifier_layers(spec.input_size, spec.n_stacks), "RU"), 1)
    if k == "du_feature":
        return FlopReport(spec, _tag(feature_extractor_layers(spec.input_size, spec.n_stacks), "DU"), 0)
    if k == "voting":
        n_in = N_CLASSES * spec.n_ru
        if spec.du_input_size is not None:
            n_in += feature_length(spec.du_input_size, spec.du_n_stacks)
        return FlopReport(spec, _tag(decision_head_layers(n_in, prefix="voting"), "DU"), 0)
    ru = _tag(classifier_layers(spec.input_size, spec.n_stacks), "RU", "ru.")
    if k == "distributed_ensemble":
        voting = _tag(decision_head_layers(N_CLASSES * spec.n_ru, prefix="voting"), "DU")
        return FlopReport(spec, ru + voting, spec.n_ru)
    # hybrid_ensemble
    du = _tag(feature_extractor_layers(spec.du_input_size, spec.du_n_stacks), "DU", "du.")
    n_in = N_CLASSES * spec.n_ru + feature_length(spec.du_input_size, spec.du_n_stacks)
    voting = _tag(decision_head_layers(n_in, prefix="voting"), "DU")
    return FlopReport(spec, (ru if spec.n_ru else []) + du + voting, spec.n_ru)


def grid_rows(input_sizes, stacks, approaches=("central", "distributed"), n_ru: int = 3,
              du_pairs=()) -> list:
    """One summary row per (approach, grid point); hybrid rows use ``du_pairs``."""
    rows = []
    for approach in approaches:
        for n in input_sizes:
            for s in stacks:
                if approach == "central":
                    specs = [ModelSpec("central", n, s, n_ru)]
                elif approach == "distributed":
                    specs = [ModelSpec("distributed_ensemble", n, s, n_ru)]
                elif approach == "hybrid":
                    specs = [ModelSpec("hybrid_ensemble", n, s, n_ru, du_input_size=dn, du_n_stacks=ds)
                             for dn, ds in du_pairs]
                else:
                    raise InvalidArgument(f"unknown approach {approach!r}")
                for spec in specs:
                    r = estimate_model_flops(spec)
                    rows.append({
                        "approach": approach, "input_size": n, "n_stacks": s, "n_ru": r.n_ru,
                        "du_input_size": spec.du_input_size or "", "du_n_stacks": spec.du_n_stacks or "",
                        "per_ru_flops": r.per_ru, "du_flops": r.du,
                        "grand_total_flops": r.grand_total, "mflops": round(r.mflops, 4),
                    })
    return rows


def write_grid_csv(rows, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(f"# units: {UNITS}\n")
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    except OSError as e:
        raise PersistenceError(f"cannot write FLOP report: {e}", path) from e
    return path
