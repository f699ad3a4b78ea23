"""NAAQA architecture family: extractors, coordinate maps, FiLM Resblocks, MALiMo controller."""
from __future__ import annotations

import hashlib
import json
import re
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.tensor import ShapeError, Tensor
from .questengine.program import LABELS

EXTRACTORS = ("conv2d_stack", "parallel", "interleaved_time_first", "interleaved_freq_first")
COORD_SITES = ("extractor_input", "stem", "resblocks", "classifier")
COORD_KINDS = {"none": (), "time": ("time",), "freq": ("freq",), "both": ("time", "freq")}
SPANS = ("padded", "valid")


class ConfigError(ValueError):
    pass


class CompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    name: str = "custom"
    extractor: str = "parallel"
    K: int = 3
    N1: int = 16
    N2: int = 32
    N3: int = 64
    N4: int = 64
    P: int = 64
    E: int = 32
    G: int = 512
    J: int = 4
    M: int = 128
    C: int = 512
    H: int = 1024
    O: int = len(LABELS)
    vocab_size: int = 128
    n_mels: int = 64
    coordmaps: dict = field(default_factory=dict)
    coordmap_span: str = "padded"
    malimo: bool = False
    G_m: int = 512
    dropout_p: float = 0.25

    def __post_init__(self):
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"unknown extractor {self.extractor!r}")
        for k in ("K", "N1", "N2", "N3", "N4", "E", "G", "J", "M", "C", "H", "O",
                  "vocab_size", "n_mels", "G_m"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1, got {getattr(self, k)}")
        if self.P < 0:
            raise ConfigError("P must be >= 0 (0 omits the fusion convolution)")
        for site, kind in self.coordmaps.items():
            if site not in COORD_SITES or kind not in COORD_KINDS:
                raise ConfigError(f"bad coordmap entry {site!r}: {kind!r}")
        if self.coordmap_span not in SPANS:
            raise ConfigError(f"coordmap_span must be one of {SPANS}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")

    def coord(self, site: str) -> tuple:
        return COORD_KINDS[self.coordmaps.get(site, "none")]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coordmaps"] = {s: self.coordmaps.get(s, "none") for s in COORD_SITES}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        d["coordmaps"] = {s: k for s, k in d.get("coordmaps", {}).items() if k != "none"}
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())

    def content_hash(self) -> str:
        d = self.to_dict()
        d.pop("name")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -- coordinate maps ---------------------------------------------------------------

@dataclass(frozen=True)
class CoordMap:
    kind: str
    grid: np.ndarray  # (1, h, w)


def make_coord_maps(h: int, w: int, kinds) -> list:
    if h < 2 or w < 2:
        raise ShapeError(f"coordinate maps need h, w >= 2, got {h}x{w}")
    out = []
    for kind in kinds:
        if kind == "time":
            grid = np.broadcast_to(np.linspace(-1.0, 1.0, w)[None, :], (h, w))
        elif kind == "freq":
            grid = np.broadcast_to(np.linspace(-1.0, 1.0, h)[:, None], (h, w))
        else:
            raise ShapeError(f"unknown coordinate map kind {kind!r}")
        out.append(CoordMap(kind, np.array(grid)[None]))
    return out


def _coord_block(B: int, h: int, w: int, kinds, valid_w=None, dtype=np.float32) -> np.ndarray:
    """(B, len(kinds), h, w). With ``valid_w`` the time ramp spans each sample's valid width."""
    if valid_w is None:
        maps = np.concatenate([m.grid for m in make_coord_maps(max(h, 2), max(w, 2), kinds)])
        return np.broadcast_to(maps[:, :h, :w], (B, len(kinds), h, w)).astype(dtype)
    out = np.empty((B, len(kinds), h, w), dtype=dtype)
    cols = np.arange(w)
    for b in range(B):
        vw = int(valid_w[b])
        for c, kind in enumerate(kinds):
            if kind == "time":
                ramp = np.clip(-1.0 + 2.0 * cols / max(vw - 1, 1), -1.0, 1.0)
                out[b, c] = ramp[None, :]
            else:
                out[b, c] = np.linspace(-1.0, 1.0, h)[:, None] if h > 1 else -1.0
    return out


# -- shape enumeration -------------------------------------------------------------

def _blocks(cfg: ModelConfig) -> list:
    return [cfg.N1 * 2 ** k for k in range(cfg.K)]


def n_downsamplings(cfg: ModelConfig) -> int:
    return 3 if cfg.extractor == "conv2d_stack" else cfg.K


def extractor_channels(cfg: ModelConfig) -> int:
    if cfg.extractor == "conv2d_stack":
        return cfg.N4
    if cfg.P:
        return cfg.P
    last = _blocks(cfg)[-1]
    return 2 * last if cfg.extractor == "parallel" else last


def parameter_spec(cfg: ModelConfig) -> list:
    """Ordered (name, shape, trainable) for every tensor the model holds.

    Batch-norm running statistics are listed with trainable=False.
    """
    spec = []

    def conv(name, cin, cout, kh, kw, bias=False):
        spec.append((f"{name}.weight", (cout, cin, kh, kw), True))
        if bias:
            spec.append((f"{name}.bias", (cout,), True))

    def bn(name, c, affine=True):
        if affine:
            spec.append((f"{name}.weight", (c,), True))
            spec.append((f"{name}.bias", (c,), True))
        spec.append((f"{name}.running_mean", (c,), False))
        spec.append((f"{name}.running_var", (c,), False))

    def lin(name, cin, cout):
        spec.append((f"{name}.weight", (cout, cin), True))
        spec.append((f"{name}.bias", (cout,), True))

    def gru(name, cin, g):
        spec.append((f"{name}.weight_ih", (3 * g, cin), True))
        spec.append((f"{name}.weight_hh", (3 * g, g), True))
        spec.append((f"{name}.bias_ih", (3 * g,), True))
        spec.append((f"{name}.bias_hh", (3 * g,), True))

    cin = 1 + len(cfg.coord("extractor_input"))
    if cfg.extractor == "conv2d_stack":
        for k, n in enumerate((cfg.N1, cfg.N2, cfg.N3), start=1):
            conv(f"extractor.conv{k}", cin, n, 3, 3)
            bn(f"extractor.bn{k}", n)
            cin = n
        conv("extractor.fusion", cin, cfg.N4, 1, 1, bias=True)
    elif cfg.extractor == "parallel":
        for pipe, (kh, kw) in (("freq", (3, 1)), ("time", (1, 3))):
            c = cin
            for k, n in enumerate(_blocks(cfg)):
                conv(f"extractor.{pipe}.{k}.conv", c, n, kh, kw)
                bn(f"extractor.{pipe}.{k}.bn", n)
                c = n
        if cfg.P:
            conv("extractor.fusion", 2 * _blocks(cfg)[-1], cfg.P, 1, 1, bias=True)
    else:
        order = ("time", "freq") if cfg.extractor == "interleaved_time_first" else ("freq", "time")
        c = cin
        for k, n in enumerate(_blocks(cfg)):
            for axis in order:
                kh, kw = (1, 3) if axis == "time" else (3, 1)
                conv(f"extractor.{k}.{axis}_conv", c, n, kh, kw)
                bn(f"extractor.{k}.{axis}_bn", n)
                c = n
        if cfg.P:
            conv("extractor.fusion", c, cfg.P, 1, 1, bias=True)
    F = extractor_channels(cfg)

    conv("stem.conv", F + len(cfg.coord("stem")), cfg.M, 3, 3)
    bn("stem.bn", cfg.M)

    spec.append(("question.embedding", (cfg.vocab_size, cfg.E), True))
    gru("question.gru", cfg.E, cfg.G)
    lin("film_generator", cfg.G, 2 * cfg.J * cfg.M)

    rc = len(cfg.coord("resblocks"))
    for j in range(cfg.J):
        conv(f"resblock.{j}.conv1x1", cfg.M, cfg.M, 1, 1, bias=True)
        conv(f"resblock.{j}.conv3x3", cfg.M + rc, cfg.M, 3, 3)
        bn(f"resblock.{j}.bn", cfg.M, affine=False)

    conv("classifier.conv", cfg.M + len(cfg.coord("classifier")), cfg.C, 1, 1)
    bn("classifier.bn", cfg.C)
    lin("classifier.hidden", cfg.C, cfg.H)
    lin("classifier.output", cfg.H, cfg.O)

    if cfg.malimo:
        gru("malimo.gru", F, cfg.G_m)
        lin("malimo.generator", cfg.G_m, 2 * cfg.J * cfg.M)
    return spec


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s, trainable in parameter_spec(cfg) if trainable)


def parameter_breakdown(cfg: ModelConfig) -> dict:
    """Trainable element counts grouped by top-level module."""
    out = {}
    for name, shape, trainable in parameter_spec(cfg):
        if trainable:
            key = name.split(".")[0]
            out[key] = out.get(key, 0) + int(np.prod(shape))
    return out


# -- the model ---------------------------------------------------------------------

_BN_RE = re.compile(r"(\w+_)?bn\d*$")


def _init_array(name: str, shape: tuple, shapes: dict, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    module, leaf = name.rsplit(".", 1)
    if leaf == "running_mean":
        return np.zeros(shape)
    if leaf == "running_var":
        return np.ones(shape)
    if module in ("film_generator", "malimo.generator"):
        # neutral start: gamma = 1, beta = 0 for every block
        if leaf == "weight":
            return np.zeros(shape)
        half = shape[0] // 2
        return np.concatenate([np.ones(half), np.zeros(shape[0] - half)])
    if _BN_RE.fullmatch(module.rsplit(".", 1)[-1]):
        return np.ones(shape) if leaf == "weight" else np.zeros(shape)
    if name == "question.embedding":
        return rng.standard_normal(shape)
    if module.endswith("gru"):
        bound = 1.0 / np.sqrt(shape[0] // 3)
        return rng.uniform(-bound, bound, shape)
    # conv / linear: fan-in scaled uniform; biases share the weight's bound
    fan_in = int(np.prod(shapes[f"{module}.weight"][1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class NAAQA:
    """Parameters live in ``params`` (Tensors) and ``buffers`` (BN running stats)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}
        spec = parameter_spec(cfg)
        self._spec = spec
        shapes = {n: s for n, s, _ in spec}
        for name, shape, trainable in spec:
            arr = _init_array(name, shape, shapes, seed).astype(self.dtype)
            if trainable:
                self.params[name] = Tensor(arr, requires_grad=True)
            else:
                self.buffers[name] = arr
        self.dropout_rng = np.random.default_rng([seed, 0xD0])

    # bookkeeping
    def parameters(self) -> list:
        return list(self.params.values())

    def count_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "NAAQA":
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
        for k in self.buffers:
            self.buffers[k] = self.buffers[k].astype(self.dtype)
        return self

    def state_arrays(self) -> dict:
        out = {}
        for name, _, trainable in self._spec:
            out[name] = self.params[name].data if trainable else self.buffers[name]
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for name, shape, trainable in self._spec:
            if name not in arrays:
                raise CompatibilityError(f"checkpoint lacks tensor {name}")
            arr = np.asarray(arrays[name])
            if arr.shape != tuple(shape):
                raise CompatibilityError(f"{name}: checkpoint shape {arr.shape} != {tuple(shape)}")
            if trainable:
                self.params[name].data = arr.astype(self.dtype).copy()
            else:
                self.buffers[name] = arr.astype(self.dtype).copy()

    # layers
    def _p(self, name):
        return self.params[name]

    def _bn(self, x, name, training, affine=True):
        g = self.params.get(f"{name}.weight") if affine else None
        b = self.params.get(f"{name}.bias") if affine else None
        return ops.batchnorm2d(x, g, b, self.buffers[f"{name}.running_mean"],
                               self.buffers[f"{name}.running_var"], training)

    def _conv(self, x, name, stride=(1, 1)):
        return ops.conv2d(x, self._p(f"{name}.weight"), self.params.get(f"{name}.bias"), stride)

    def _with_coords(self, x, site, valid_w):
        kinds = self.cfg.coord(site)
        if not kinds:
            return x
        B, _, h, w = x.shape
        vw = valid_w if self.cfg.coordmap_span == "valid" else None
        return ops.concat_channels(x, Tensor(_coord_block(B, h, w, kinds, vw, self.dtype)))

    def extract(self, x, training, valid_w=None):
        cfg = self.cfg
        x = self._with_coords(x, "extractor_input", valid_w)
        if cfg.extractor == "conv2d_stack":
            for k in (1, 2, 3):
                x = ops.relu(self._bn(self._conv(x, f"extractor.conv{k}", (2, 2)),
                                      f"extractor.bn{k}", training))
            return ops.relu(self._conv(x, "extractor.fusion"))
        if cfg.extractor == "parallel":
            f = t = x
            for k in range(cfg.K):
                f = ops.relu(self._bn(self._conv(f, f"extractor.freq.{k}.conv", (2, 1)),
                                      f"extractor.freq.{k}.bn", training))
                f = ops.maxpool2d(f, (1, 2), ceil_mode=True)
                t = ops.relu(self._bn(self._conv(t, f"extractor.time.{k}.conv", (1, 2)),
                                      f"extractor.time.{k}.bn", training))
                t = ops.maxpool2d(t, (2, 1), ceil_mode=True)
                assert f.shape[2:] == t.shape[2:], "parallel pipelines diverged in shape"
            x = ops.concat_channels(f, t)
        else:
            order = ("time", "freq") if cfg.extractor == "interleaved_time_first" else ("freq", "time")
            for k in range(cfg.K):
                for axis in order:
                    stride = (1, 2) if axis == "time" else (2, 1)
                    x = ops.relu(self._bn(self._conv(x, f"extractor.{k}.{axis}_conv", stride),
                                          f"extractor.{k}.{axis}_bn", training))
        if cfg.P:
            x = ops.relu(self._conv(x, "extractor.fusion"))
        return x

    def encode_question(self, tokens) -> Tensor:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        lengths = (tokens != 0).sum(axis=1)
        if (lengths == 0).any():
            raise ShapeError("empty question")
        emb = ops.embedding_lookup(tokens, self._p("question.embedding"))
        return ops.gru_seq(emb, self._p("question.gru.weight_ih"), self._p("question.gru.weight_hh"),
                           self._p("question.gru.bias_ih"), self._p("question.gru.bias_hh"), lengths)

    def film_coefficients(self, q: Tensor, prefix: str = "film_generator") -> Tensor:
        return ops.linear(q, self._p(f"{prefix}.weight"), self._p(f"{prefix}.bias"))

    def malimo_coefficients(self, feats: Tensor, lengths) -> Tensor:
        seq = ops.transpose(ops.mean(feats, axis=2), (0, 2, 1))  # (B, w, F)
        h = ops.gru_seq(seq, self._p("malimo.gru.weight_ih"), self._p("malimo.gru.weight_hh"),
                        self._p("malimo.gru.bias_ih"), self._p("malimo.gru.bias_hh"), lengths)
        return self.film_coefficients(h, "malimo.generator")

    def _gamma_beta(self, coeffs: Tensor, j: int):
        JM, M = self.cfg.J * self.cfg.M, self.cfg.M
        return (ops.slice_last(coeffs, j * M, (j + 1) * M),
                ops.slice_last(coeffs, JM + j * M, JM + (j + 1) * M))

    def resblock(self, x, j, training, coeffs=(), valid_w=None):
        """1x1 conv + ReLU -> [coords] -> 3x3 conv -> BN (no affine) -> FiLM(s) -> ReLU, + skip."""
        a = ops.relu(self._conv(x, f"resblock.{j}.conv1x1"))
        h = self._with_coords(a, "resblocks", valid_w)
        h = self._bn(self._conv(h, f"resblock.{j}.conv3x3"), f"resblock.{j}.bn", training, affine=False)
        for c in coeffs:
            gamma, beta = self._gamma_beta(c, j)
            h = ops.film(h, gamma, beta)
        return ops.add(a, ops.relu(h))

    def classify(self, x, training, valid_w=None):
        x = self._with_coords(x, "classifier", valid_w)
        x = ops.relu(self._bn(self._conv(x, "classifier.conv"), "classifier.bn", training))
        x = ops.global_maxpool(x)
        x = ops.relu(ops.linear(x, self._p("classifier.hidden.weight"), self._p("classifier.hidden.bias")))
        x = ops.dropout(x, self.cfg.dropout_p, training, self.dropout_rng)
        return ops.linear(x, self._p("classifier.output.weight"), self._p("classifier.output.bias"))

    def forward(self, spec, tokens, valid_frames=None, training: bool = False,
                modulate: bool = True) -> Tensor:
        """Logits (B, O) for spectrograms (B, [1,] n_mels, W) and right-padded token ids (B, T).

        ``modulate=False`` skips every FiLM layer (the unmodulated reference network).
        """
        x = np.asarray(spec.data if isinstance(spec, Tensor) else spec, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.cfg.n_mels:
            raise ShapeError(f"expected (B, 1, {self.cfg.n_mels}, W) spectrograms, got {x.shape}")
        B, W = x.shape[0], x.shape[3]
        valid = np.full(B, W) if valid_frames is None else np.asarray(valid_frames, dtype=np.int64)
        feats = self.extract(Tensor(x), training, valid)
        lengths = valid.copy()
        for _ in range(n_downsamplings(self.cfg)):
            lengths = -(-lengths // 2)
        lengths = np.clip(lengths, 1, feats.shape[3])
        coeffs = []
        if modulate:
            coeffs.append(self.film_coefficients(self.encode_question(tokens)))
            if self.cfg.malimo:
                coeffs.append(self.malimo_coefficients(feats, lengths))
        x = self._with_coords(feats, "stem", lengths)
        x = ops.relu(self._bn(self._conv(x, "stem.conv"), "stem.bn", training))
        for j in range(self.cfg.J):
            x = self.resblock(x, j, training, coeffs, lengths)
        return self.classify(x, training, lengths)

    __call__ = forward

    # persistence
    def save(self, path, labels=LABELS, vocabulary=None, extra: dict | None = None) -> Path:
        trainable = {n: t for n, _, t in self._spec}
        meta = {"config": self.cfg.to_dict(), "config_hash": self.cfg.content_hash(),
                "labels": list(labels), "vocabulary": list(vocabulary) if vocabulary else None,
                "seed": self.seed, **(extra or {})}
        return save_checkpoint(path, self.state_arrays(), meta, trainable)


def load_model(path, labels=None, vocabulary=None) -> tuple:
    """(model, manifest); checks config hash and, when given, label order and vocabulary."""
    manifest, arrays = load_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    if cfg.content_hash() != manifest["config_hash"]:
        raise CompatibilityError("checkpoint config hash mismatch")
    if labels is not None and list(labels) != manifest["labels"]:
        raise CompatibilityError("label order differs from the checkpoint's")
    if vocabulary is not None and manifest.get("vocabulary") is not None \
            and list(vocabulary) != manifest["vocabulary"]:
        raise CompatibilityError("vocabulary differs from the checkpoint's")
    model = NAAQA(cfg, manifest.get("seed", 0))
    model.load_state_arrays(arrays)
    return model, manifest


# -- named presets -----------------------------------------------------------------

_ALL_BOTH = {s: "both" for s in COORD_SITES}

COORD_PLACEMENTS = [  # (extractor_input, stem, resblocks, classifier)
    ("none", "none", "time", "none"), ("none", "time", "none", "none"),
    ("none", "none", "both", "none"), ("none", "both", "none", "none"),
    ("time", "none", "none", "none"), ("both", "none", "none", "none"),
    ("none", "none", "none", "freq"), ("none", "none", "none", "none"),
    ("none", "none", "none", "both"), ("none", "none", "freq", "none"),
    ("none", "freq", "none", "none"), ("none", "none", "none", "time"),
    ("freq", "none", "none", "none"),
]


def placement_name(row) -> str:
    parts = [f"{s}-{k}" for s, k in zip(COORD_SITES, row) if k != "none"]
    return "coordmaps_" + ("_".join(parts) if parts else "none")


def presets() -> dict:
    """Named configurations shipped as JSON under ``naaqa/configs``."""
    initial = dict(G=4096, J=4, M=128, C=512, H=1024, K=3, N1=16, P=64, coordmaps=_ALL_BOTH)
    optimized = dict(G=512, J=4, M=128, C=512, H=1024, K=3, N1=16, P=64,
                     coordmaps={"resblocks": "time"})
    out = {}
    for ext, short in (("parallel", "parallel"), ("interleaved_time_first", "interleaved_time"),
                       ("interleaved_freq_first", "interleaved_freq"), ("conv2d_stack", "conv2d")):
        for tag, base in (("initial", initial), ("optimized", optimized)):
            cfg = ModelConfig(name=f"{tag}_{short}", extractor=ext, **base)
            out[cfg.name] = cfg
            if tag == "optimized" and ext in ("parallel", "conv2d_stack"):
                out[f"{cfg.name}_malimo"] = replace(cfg, name=f"{cfg.name}_malimo", malimo=True)
    for row in COORD_PLACEMENTS:
        name = placement_name(row)
        out[name] = ModelConfig(name=name, extractor="parallel",
                                **(initial | {"coordmaps": {s: k for s, k in zip(COORD_SITES, row)
                                                            if k != "none"}}))
    out["micro_parallel"] = ModelConfig(name="micro_parallel", extractor="parallel", K=3, N1=8, P=32,
                                        E=32, G=64, J=4, M=32, C=128, H=256, G_m=64,
                                        coordmaps={"resblocks": "time"})
    out["micro_parallel_malimo"] = replace(out["micro_parallel"], name="micro_parallel_malimo",
                                           malimo=True)
    return out


CONFIG_DIR = Path(__file__).parent / "configs"


def write_presets(directory=CONFIG_DIR) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cfg in presets().items():
        p = directory / f"{name}.json"
        p.write_text(cfg.to_json())
        paths.append(p)
    return paths


def load_config(name_or_path) -> ModelConfig:
    """A preset name or a JSON file path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return ModelConfig.load(p)
    shipped = CONFIG_DIR / f"{name_or_path}.json"
    if shipped.exists():
        return ModelConfig.load(shipped)
    raise ConfigError(f"no config file or preset named {name_or_path!r}")
