"""ResNet feature extractor, decision head and the three network topologies.

A frame of ``N`` complex samples enters as a ``(N, 1)`` grid with the I and Q
rails as two input channels, so the ``(3, 1)`` kernels slide along time. Each
residual stack is a linear 1x1 entry convolution, one residual unit
(conv -> ReLU -> conv, identity skip, ReLU) and a ``(2, 1)`` max-pool.
Frames are scaled to unit mean power in the input block, which makes every
classifier independent of the absolute gain of its input.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
from torch import nn

from .errors import (
    ContractViolation,
    CorruptDataError,
    IncompatibleSpecError,
    InvalidArgument,
    PersistenceError,
)
from .signal import IQFrame, ModulationScheme

N_CLASSES = len(ModulationScheme)
N_FILTERS = 32
HIDDEN = 128
INPUT_SIZES = (128, 256, 512, 1024)
STACK_RANGE = (4, 5, 6, 7)
KINDS = ("central", "ru", "du_feature", "voting", "distributed_ensemble", "hybrid_ensemble")
BLOCKS = ("feature_extraction", "decision", "voting")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one network or sub-network.

    ``input_size``/``n_stacks`` describe the classifier (central, RU) or the
    DU feature extractor (``du_feature``). Ensembles carry the RU pair in
    ``input_size``/``n_stacks`` and, for the hybrid, the DU pair in
    ``du_input_size``/``du_n_stacks``.
    """

    kind: str = "central"
    input_size: int = 128
    n_stacks: int = 4
    n_ru: int = 3
    du_input_size: Optional[int] = None
    du_n_stacks: Optional[int] = None
    n_classes: int = N_CLASSES
    activation: str = "relu"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}")
        if self.n_classes != N_CLASSES:
            raise InvalidArgument(f"n_classes must be {N_CLASSES}")
        if self.n_ru < 0:
            raise InvalidArgument("n_ru must be non-negative")
        check_pooling(self.input_size, self.n_stacks)
        if self.kind == "hybrid_ensemble":
            if self.du_input_size is None or self.du_n_stacks is None:
                raise InvalidArgument("hybrid spec needs du_input_size and du_n_stacks")
            check_pooling(self.du_input_size, self.du_n_stacks)

    @property
    def placement(self) -> str:
        return "RU" if self.kind == "ru" else "DU"

    @property
    def feature_length(self) -> int:
        return feature_length(self.input_size, self.n_stacks)

    @property
    def tag(self) -> str:
        base = f"{self.kind}(N={self.input_size},stacks={self.n_stacks}"
        if self.kind in ("distributed_ensemble", "hybrid_ensemble"):
            base += f",n_ru={self.n_ru}"
        if self.kind == "hybrid_ensemble":
            base += f",du_N={self.du_input_size},du_stacks={self.du_n_stacks}"
        return base + ")"

    def with_kind(self, kind: str, **kw) -> "ModelSpec":
        d = asdict(self)
        d.update(kind=kind, **kw)
        if kind != "hybrid_ensemble":
            d.update(du_input_size=None, du_n_stacks=None)
        return ModelSpec(**d)

    def ru_spec(self) -> "ModelSpec":
        return ModelSpec("ru", self.input_size, self.n_stacks, self.n_ru)

    def du_spec(self) -> "ModelSpec":
        return ModelSpec("du_feature", self.du_input_size, self.du_n_stacks, self.n_ru)

    def to_dict(self) -> dict:
        return asdict(self)


def check_pooling(input_size: int, n_stacks: int):
    if input_size < 1 or n_stacks < 1:
        raise InvalidArgument("input_size and n_stacks must be positive")
    if input_size % (1 << n_stacks):
        raise InvalidArgument(
            f"input size {input_size} cannot be pooled {n_stacks} times by 2")


def feature_length(input_size: int, n_stacks: int) -> int:
    check_pooling(input_size, n_stacks)
    return N_FILTERS * (input_size >> n_stacks)


# ---------------------------------------------------------------------------
# analytic layer graph (shared with the FLOP estimator)


@dataclass(frozen=True)
class LayerInfo:
    name: str
    kind: str                 # conv | dense | pool | add | activation | flatten | softmax ...
    out_shape: tuple          # channels-last (time, width, channels) or (units,)
    in_channels: int = 0
    kernel: tuple = ()

    @property
    def n_params(self) -> int:
        if self.kind == "conv":
            kh, kw = self.kernel
            return kh * kw * self.in_channels * self.out_shape[-1] + self.out_shape[-1]
        if self.kind == "dense":
            return self.in_channels * self.out_shape[0] + self.out_shape[0]
        return 0


def feature_extractor_layers(input_size: int, n_stacks: int, in_channels: int = 2,
                             prefix: str = "feature_extraction") -> list:
    check_pooling(input_size, n_stacks)
    layers = []
    t, c = input_size, in_channels
    for i in range(n_stacks):
        p = f"{prefix}.{i}"
        layers.append(LayerInfo(f"{p}.entry", "conv", (t, 1, N_FILTERS), c, (1, 1)))
        layers.append(LayerInfo(f"{p}.conv_a", "conv", (t, 1, N_FILTERS), N_FILTERS, (3, 1)))
        layers.append(LayerInfo(f"{p}.relu_a", "activation", (t, 1, N_FILTERS)))
        layers.append(LayerInfo(f"{p}.conv_b", "conv", (t, 1, N_FILTERS), N_FILTERS, (3, 1)))
        layers.append(LayerInfo(f"{p}.skip_add", "add", (t, 1, N_FILTERS)))
        layers.append(LayerInfo(f"{p}.relu_b", "activation", (t, 1, N_FILTERS)))
        t //= 2
        layers.append(LayerInfo(f"{p}.pool", "pool", (t, 1, N_FILTERS)))
        c = N_FILTERS
    layers.append(LayerInfo(f"{prefix}.flatten", "flatten", (t * N_FILTERS,)))
    return layers


def decision_head_layers(n_in: int, n_classes: int = N_CLASSES, prefix: str = "decision") -> list:
    return [
        LayerInfo(f"{prefix}.dense1", "dense", (HIDDEN,), n_in),
        LayerInfo(f"{prefix}.relu1", "activation", (HIDDEN,)),
        LayerInfo(f"{prefix}.dense2", "dense", (HIDDEN,), HIDDEN),
        LayerInfo(f"{prefix}.relu2", "activation", (HIDDEN,)),
        LayerInfo(f"{prefix}.out", "dense", (n_classes,), HIDDEN),
        LayerInfo(f"{prefix}.softmax", "softmax", (n_classes,)),
    ]


# ---------------------------------------------------------------------------
# torch building blocks


class ResidualStack(nn.Module):
    def __init__(self, in_channels: int):
        super().__init__()
        self.entry = nn.Conv2d(in_channels, N_FILTERS, (1, 1))
        self.conv_a = nn.Conv2d(N_FILTERS, N_FILTERS, (3, 1), padding=(1, 0))
        self.conv_b = nn.Conv2d(N_FILTERS, N_FILTERS, (3, 1), padding=(1, 0))
        self.pool = nn.MaxPool2d((2, 1), stride=(2, 1))

    def forward(self, x):
        x = self.entry(x)
        y = self.conv_b(torch.relu(self.conv_a(x)))
        return self.pool(torch.relu(x + y))


class FeatureExtractor(nn.Sequential):
    def __init__(self, input_size: int, n_stacks: int):
        check_pooling(input_size, n_stacks)
        super().__init__(*[ResidualStack(2 if i == 0 else N_FILTERS) for i in range(n_stacks)])
        self.input_size = input_size
        self.n_stacks = n_stacks
        self.out_features = feature_length(input_size, n_stacks)

    def forward(self, x):
        return torch.flatten(super().forward(x), 1)


class DecisionHead(nn.Module):
    """Two hidden dense layers of 128 units and a linear output; returns logits."""

    def __init__(self, n_in: int, n_classes: int = N_CLASSES):
        super().__init__()
        self.dense1 = nn.Linear(n_in, HIDDEN)
        self.dense2 = nn.Linear(HIDDEN, HIDDEN)
        self.out = nn.Linear(HIDDEN, n_classes)
        self.n_in = n_in

    def forward(self, x):
        return self.out(torch.relu(self.dense2(torch.relu(self.dense1(x)))))


def build_feature_extractor(input_size: int, n_stacks: int) -> FeatureExtractor:
    return FeatureExtractor(input_size, n_stacks)


def build_decision_head(n_in: int, n_classes: int = N_CLASSES) -> DecisionHead:
    return DecisionHead(n_in, n_classes)


def as_complex_tensor(x) -> torch.Tensor:
    if isinstance(x, IQFrame):
        x = x.samples
    if isinstance(x, torch.Tensor):
        return x if x.is_complex() else x.to(torch.complex64)
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        x = x.astype(np.complex64)
    return torch.from_numpy(np.ascontiguousarray(x))


def clip_input(frame, n: int):
    """First ``n`` samples of a frame (or of the last axis of a batch)."""
    samples = frame.samples if isinstance(frame, IQFrame) else frame
    length = samples.shape[-1]
    if not 1 <= n <= length:
        raise InvalidArgument(f"clip length {n} outside [1, {length}]")
    if isinstance(frame, IQFrame):
        return IQFrame(frame.samples[:n], frame.meta)
    return samples[..., :n]


def input_block(x: torch.Tensor, n: int) -> torch.Tensor:
    """Clip, scale to unit mean power and lay out as ``(B, 2, n, 1)`` reals."""
    x = clip_input(x, n)
    power = torch.mean(x.real ** 2 + x.imag ** 2, dim=-1, keepdim=True)
    x = x / torch.sqrt(power.clamp_min(1e-30))
    return torch.stack((x.real, x.imag), dim=1).unsqueeze(-1)


def egc(x: torch.Tensor) -> torch.Tensor:
    """Equal-gain combine over the RU axis of a ``(B, n_ru, L)`` batch."""
    return x.sum(dim=1) if x.dim() == 3 else x


class _Predictor(nn.Module):
    """Adds batched numpy inference on top of a logits-producing forward."""

    def predict_proba(self, x, batch_size: int = 512) -> np.ndarray:
        x = as_complex_tensor(x)
        param = next(self.parameters())
        if param.dtype == torch.float64:
            x = x.to(torch.complex128)
        out = []
        was_training = self.training
        self.eval()
        with torch.no_grad():
            for a in range(0, x.shape[0], batch_size):
                out.append(torch.softmax(self(x[a:a + batch_size]), dim=-1).cpu().numpy())
        self.train(was_training)
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        """Output layer: index of the most probable class."""
        return np.argmax(self.predict_proba(x, batch_size), axis=-1)


class Classifier(_Predictor):
    """Input block, feature extraction and decision head (the RU-model graph)."""

    def __init__(self, input_size: int, n_stacks: int, n_classes: int = N_CLASSES,
                 spec: ModelSpec | None = None):
        super().__init__()
        self.feature_extraction = FeatureExtractor(input_size, n_stacks)
        self.decision = DecisionHead(self.feature_extraction.out_features, n_classes)
        self.input_size = input_size
        self.spec = spec

    def forward(self, x):
        return self.decision(self.feature_extraction(input_block(x, self.input_size)))


class CentralModel(Classifier):
    """Non-trainable EGC block in front of a classifier; all of it runs at the DU."""

    def forward(self, x):
        return super().forward(egc(x))


class DUFeatureModel(nn.Module):
    """EGC over full frames, clip to the DU input size, frozen feature extractor."""

    def __init__(self, input_size: int, n_stacks: int, spec: ModelSpec | None = None):
        super().__init__()
        self.feature_extraction = FeatureExtractor(input_size, n_stacks)
        self.input_size = input_size
        self.out_features = self.feature_extraction.out_features
        self.spec = spec

    def forward(self, x):
        return self.feature_extraction(input_block(egc(x), self.input_size))


class DistributedModel(_Predictor):
    """Shared frozen RU-model on each branch, concatenated soft decisions, voting head."""

    def __init__(self, ru: Classifier, n_ru: int, spec: ModelSpec | None = None):
        super().__init__()
        self.ru = ru
        self.n_ru = n_ru
        self.voting = DecisionHead(N_CLASSES * n_ru)
        self.spec = spec

    def soft_decisions(self, x):
        if x.dim() != 3 or x.shape[1] != self.n_ru:
            raise InvalidArgument(f"expected input of shape (B, {self.n_ru}, L)")
        return torch.cat([torch.softmax(self.ru(x[:, r]), dim=-1) for r in range(self.n_ru)], dim=-1)

    def features(self, x):
        return self.soft_decisions(x)

    def forward(self, x):
        return self.voting(self.features(x))


class HybridModel(_Predictor):
    """Distributed model whose voting head also sees DU features of the combined signal."""

    def __init__(self, ru: Classifier | None, du: DUFeatureModel, n_ru: int,
                 spec: ModelSpec | None = None):
        super().__init__()
        if n_ru > 0 and ru is None:
            raise InvalidArgument("an RU-model is required when n_ru > 0")
        self.ru = ru if n_ru > 0 else None
        self.du = du
        self.n_ru = n_ru
        self.voting = DecisionHead(N_CLASSES * n_ru + du.out_features)
        self.spec = spec

    def features(self, x):
        if x.dim() != 3:
            raise InvalidArgument("expected input of shape (B, n_ru, L)")
        if self.n_ru and x.shape[1] != self.n_ru:
            raise InvalidArgument(f"expected {self.n_ru} RU branches, got {x.shape[1]}")
        parts = [torch.softmax(self.ru(x[:, r]), dim=-1) for r in range(self.n_ru)]
        parts.append(self.du(x))
        return torch.cat(parts, dim=-1)

    def forward(self, x):
        return self.voting(self.features(x))


# ---------------------------------------------------------------------------
# initialization, freezing, provenance


def _seeded(seed: int, build):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        return build()


def _mark(model: nn.Module, provenance: str, prefix: str = ""):
    prov = getattr(model, "provenance", None)
    if prov is None:
        prov = {}
        model.provenance = prov
    for name, _ in model.named_parameters():
        if name.startswith(prefix):
            prov.setdefault(name, provenance)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def trainable_names(model: nn.Module) -> list:
    return [n for n, p in model.named_parameters() if p.requires_grad]


def _inherit_provenance(parent: nn.Module, child: nn.Module, prefix: str):
    for name, src in getattr(child, "provenance", {}).items():
        parent.provenance[f"{prefix}.{name}"] = src


def build_classifier(spec: ModelSpec, seed: int = 0) -> Classifier:
    """Fresh classifier for a ``central`` or ``ru`` spec."""
    if spec.kind not in ("central", "ru"):
        raise InvalidArgument(f"spec kind {spec.kind!r} is not a classifier")
    cls = CentralModel if spec.kind == "central" else Classifier
    model = _seeded(seed, lambda: cls(spec.input_size, spec.n_stacks, spec=spec))
    _mark(model, f"random-init({seed})")
    return model


def assemble_central(spec: ModelSpec, seed: int = 0) -> CentralModel:
    if spec.kind != "central":
        raise InvalidArgument(f"assemble_central needs a central spec, got {spec.kind!r}")
    return build_classifier(spec, seed)


def build_du_feature_model(spec: ModelSpec, seed: int = 0) -> DUFeatureModel:
    if spec.kind != "du_feature":
        raise InvalidArgument(f"spec kind {spec.kind!r} is not du_feature")
    model = _seeded(seed, lambda: DUFeatureModel(spec.input_size, spec.n_stacks, spec=spec))
    _mark(model, f"random-init({seed})")
    return model


def _require_frozen(module: nn.Module, what: str):
    live = [n for n, p in module.named_parameters() if p.requires_grad]
    if live:
        raise ContractViolation(f"{what} has trainable parameters at assembly: {live[:3]}...")


def assemble_distributed(ru: Classifier, n_ru: int, seed: int = 0) -> DistributedModel:
    """Replicate a frozen RU-model ``n_ru`` times in front of a fresh voting head."""
    if ru.spec is not None and ru.spec.kind != "ru":
        raise InvalidArgument(f"RU branch must be an ru spec, got {ru.spec.kind!r}")
    if n_ru < 1:
        raise InvalidArgument("n_ru must be >= 1")
    _require_frozen(ru, "RU-model")
    spec = None
    if ru.spec is not None:
        spec = ModelSpec("distributed_ensemble", ru.spec.input_size, ru.spec.n_stacks, n_ru)
    model = _seeded(seed, lambda: DistributedModel(ru, n_ru, spec=spec))
    model.provenance = {}
    _inherit_provenance(model, ru, "ru")
    _mark(model, f"random-init({seed})", "voting")
    return model


def assemble_hybrid(ru: Classifier | None, du: DUFeatureModel, n_ru: int, seed: int = 0,
                    frame_len: int | None = None) -> HybridModel:
    if ru is not None and ru.spec is not None and ru.spec.kind != "ru":
        raise InvalidArgument("RU branch must be an ru spec")
    if du.spec is not None and du.spec.kind != "du_feature":
        raise InvalidArgument("DU branch must be a du_feature spec")
    if frame_len is not None:
        for size, what in ((du.input_size, "DU"), (ru.input_size if ru is not None else 0, "RU")):
            if size > frame_len:
                raise InvalidArgument(f"{what} input size {size} exceeds frame length {frame_len}")
    if n_ru > 0:
        _require_frozen(ru, "RU-model")
    _require_frozen(du, "DU-model")
    spec = None
    if du.spec is not None and (ru is None or ru.spec is not None):
        r_in = ru.spec.input_size if ru is not None else du.spec.input_size
        r_st = ru.spec.n_stacks if ru is not None else du.spec.n_stacks
        spec = ModelSpec("hybrid_ensemble", r_in, r_st, n_ru,
                         du_input_size=du.spec.input_size, du_n_stacks=du.spec.n_stacks)
    model = _seeded(seed, lambda: HybridModel(ru, du, n_ru, spec=spec))
    model.provenance = {}
    if model.ru is not None:
        _inherit_provenance(model, ru, "ru")
    _inherit_provenance(model, du, "du")
    _mark(model, f"random-init({seed})", "voting")
    return model


# ---------------------------------------------------------------------------
# weight bundles


def block_of(key: str) -> str:
    for part in key.split("."):
        if part in BLOCKS:
            return part
    raise InvalidArgument(f"parameter {key!r} belongs to no block")


@dataclass
class WeightBundle:
    """Named parameter snapshot with per-key frozen flags and provenance."""

    tensors: dict
    frozen: dict
    provenance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def keys(self):
        return list(self.tensors)

    def block(self, name: str) -> dict:
        return {k: v for k, v in self.tensors.items() if block_of(k) == name}

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k], dtype="<f4").tobytes())
        return h.hexdigest()

    def equal_bytes(self, other: "WeightBundle", keys: Iterable[str] | None = None) -> bool:
        keys = self.tensors.keys() if keys is None else keys
        return all(
            k in other.tensors and self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in keys
        )


def bundle_of(model: nn.Module) -> WeightBundle:
    prov = getattr(model, "provenance", {})
    spec = getattr(model, "spec", None)
    tensors, frozen = {}, {}
    for name, p in model.named_parameters():
        tensors[name] = p.detach().cpu().numpy().copy()
        frozen[name] = not p.requires_grad
    return WeightBundle(tensors, frozen, {k: prov.get(k, "unknown") for k in tensors},
                        {"spec": spec.to_dict() if spec is not None else None})


def load_bundle(model: nn.Module, bundle: WeightBundle, strict: bool = True) -> nn.Module:
    params = dict(model.named_parameters())
    if strict and set(params) != set(bundle.tensors):
        missing = sorted(set(params) ^ set(bundle.tensors))
        raise IncompatibleSpecError("bundle keys do not match the model graph", missing)
    bad = [k for k, v in bundle.tensors.items()
           if k in params and tuple(params[k].shape) != tuple(v.shape)]
    if bad:
        raise IncompatibleSpecError("bundle tensor shapes do not match the model", bad)
    with torch.no_grad():
        for k, v in bundle.tensors.items():
            if k in params:
                params[k].copy_(torch.from_numpy(np.asarray(v)).to(params[k].dtype))
                params[k].requires_grad_(not bundle.frozen.get(k, False))
    model.provenance = dict(getattr(model, "provenance", {}))
    model.provenance.update({k: v for k, v in bundle.provenance.items() if k in params})
    return model


def transfer_weights(donor, recipient: nn.Module, blocks=("feature_extraction", "decision")):
    """Copy ``blocks`` from ``donor`` (model or bundle) into ``recipient`` and freeze them."""
    blocks = set(blocks)
    if not blocks <= set(BLOCKS):
        raise InvalidArgument(f"unknown blocks {sorted(blocks - set(BLOCKS))}")
    src = donor if isinstance(donor, WeightBundle) else bundle_of(donor)
    donor_spec = (src.meta or {}).get("spec")
    rec_spec = getattr(recipient, "spec", None)
    params = dict(recipient.named_parameters())
    wanted = [k for k in params if block_of(k) in blocks]
    if donor_spec is not None and rec_spec is not None:
        if (donor_spec["input_size"], donor_spec["n_stacks"]) != (rec_spec.input_size, rec_spec.n_stacks):
            raise IncompatibleSpecError(
                f"donor (N={donor_spec['input_size']}, stacks={donor_spec['n_stacks']}) does not "
                f"match recipient (N={rec_spec.input_size}, stacks={rec_spec.n_stacks})", wanted)
    bad = [k for k in wanted
           if k not in src.tensors or tuple(src.tensors[k].shape) != tuple(params[k].shape)]
    if bad:
        raise IncompatibleSpecError("donor and recipient disagree on transferred tensors", bad)
    donor_tag = donor_spec and ModelSpec(**donor_spec).tag or "bundle"
    if not hasattr(recipient, "provenance"):
        recipient.provenance = {}
    with torch.no_grad():
        for k in wanted:
            params[k].copy_(torch.from_numpy(np.asarray(src.tensors[k])).to(params[k].dtype))
            params[k].requires_grad_(False)
            recipient.provenance[k] = f"transfer({donor_tag})"
    return recipient


# ---------------------------------------------------------------------------
# checkpoint archive
#
#   magic b"CFAMCWB1" | u32 n_entries | u32 meta_len | meta (UTF-8 JSON)
#   entry: u16 key_len | key | u8 frozen | u16 prov_len | provenance |
#          u8 ndim | u32[ndim] shape | f32[prod(shape)] little-endian data

CKPT_MAGIC = b"CFAMCWB1"


def save_checkpoint(bundle: WeightBundle, path) -> Path:
    path = Path(path)
    meta = json.dumps(bundle.meta or {}, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", len(bundle.tensors), len(meta)), meta]
    for key, arr in bundle.tensors.items():
        k = key.encode()
        prov = str(bundle.provenance.get(key, "")).encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [
            struct.pack("<H", len(k)), k,
            struct.pack("<B", int(bool(bundle.frozen.get(key, False)))),
            struct.pack("<H", len(prov)), prov,
            struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
            arr.tobytes(),
        ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise PersistenceError(f"cannot write checkpoint: {e}", path) from e
    return path


def load_checkpoint(path) -> WeightBundle:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise PersistenceError(f"cannot read checkpoint: {e}", path) from e
    if not buf.startswith(CKPT_MAGIC):
        raise CorruptDataError(f"{path} is not a cfamc checkpoint", path)
    try:
        pos = len(CKPT_MAGIC)
        n, mlen = struct.unpack_from("<II", buf, pos)
        pos += 8
        meta = json.loads(buf[pos:pos + mlen].decode())
        pos += mlen
        tensors, frozen, prov = {}, {}, {}
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", buf, pos); pos += 2
            key = buf[pos:pos + klen].decode(); pos += klen
            (fz,) = struct.unpack_from("<B", buf, pos); pos += 1
            (plen,) = struct.unpack_from("<H", buf, pos); pos += 2
            prov[key] = buf[pos:pos + plen].decode(); pos += plen
            (ndim,) = struct.unpack_from("<B", buf, pos); pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos); pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            tensors[key] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
            frozen[key] = bool(fz)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CorruptDataError(f"truncated or malformed checkpoint {path}: {e}", path) from e
    if pos != len(buf):
        raise CorruptDataError(f"trailing bytes in checkpoint {path}", path)
    return WeightBundle(tensors, frozen, prov, meta)


@dataclass(frozen=True)
class SoftDecision:
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (N_CLASSES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise InvalidArgument("soft decision must be 7 non-negative values summing to 1")

    @property
    def label(self) -> ModulationScheme:
        return ModulationScheme(int(np.argmax(self.probs)))


def soft_decision(model: _Predictor, x) -> list:
    """Soft decisions for a batch as :class:`SoftDecision` objects."""
    return [SoftDecision(tuple(float(v) for v in row)) for row in model.predict_proba(x)]
