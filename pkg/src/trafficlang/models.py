"""The four classifier architectures and a uniform predict interface.

Three models read tokenized 200-word sentences (HAN with word attention,
the Kim multi-width CNN, the Berger ReLU-GRU); the Cruz LSTM stack reads
20 x 60 baseline feature sequences.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nn
from .errors import BadConfig, ShapeMismatch
from .nn import Parameter, Tensor
from .traffic import CLASSES

ARCHITECTURES = ("han", "kim", "berger", "cruz")
OUTPUT_MODES = {"categorical-2": 2, "multilabel-6": len(CLASSES)}
DEFAULT_EMBEDDING = {"han": 200, "kim": 10, "berger": 10}
DEFAULT_EPOCHS = {"han": 30, "kim": 50, "berger": 50, "cruz": 50}
DEFAULT_OPTIMIZER = {"han": "adam", "kim": "adam", "berger": "rmsprop", "cruz": "adam"}
RECURRENT = {"han", "berger", "cruz"}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    output_mode: str = "multilabel-6"
    embedding_dim: int | None = None
    han_hidden: int = 64
    kim_channels: int = 256
    kim_widths: tuple[int, ...] = (1, 2, 3, 4, 5)
    berger_hidden: int = 128
    cruz_dense: int = 128
    cruz_lstm: tuple[int, ...] = (64, 64, 32, 32, 16, 16)
    cruz_head: int = 64
    seq_len: int | None = None
    n_features: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise BadConfig(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.output_mode not in OUTPUT_MODES:
            raise BadConfig(f"unknown output mode {self.output_mode!r}")
        if self.embedding_dim is None and self.architecture != "cruz":
            object.__setattr__(self, "embedding_dim", DEFAULT_EMBEDDING[self.architecture])
        if self.architecture == "cruz" and self.embedding_dim is not None:
            raise BadConfig("the cruz model has no embedding")
        if self.seq_len is None:
            object.__setattr__(self, "seq_len", 20 if self.architecture == "cruz" else 200)
        object.__setattr__(self, "kim_widths", tuple(self.kim_widths))
        object.__setattr__(self, "cruz_lstm", tuple(self.cruz_lstm))
        sizes = [self.seq_len, self.n_features, self.han_hidden, self.kim_channels, self.berger_hidden,
                 self.cruz_dense, self.cruz_head, *self.kim_widths, *self.cruz_lstm]
        if self.embedding_dim is not None:
            sizes.append(self.embedding_dim)
        if any(int(s) < 1 for s in sizes) or not self.kim_widths or not self.cruz_lstm:
            raise BadConfig("all sizes must be positive integers")
        if self.architecture == "kim" and max(self.kim_widths) > self.seq_len:
            raise BadConfig("kernel width exceeds sequence length")

    @property
    def n_outputs(self) -> int:
        return OUTPUT_MODES[self.output_mode]

    @property
    def input_kind(self) -> str:
        return "baseline" if self.architecture == "cruz" else "tokens"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kim_widths"] = list(self.kim_widths)
        d["cruz_lstm"] = list(self.cruz_lstm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("kim_widths", "cruz_lstm"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Model:
    """Named parameters plus architecture wiring."""

    def __init__(self, config: ModelConfig, vocab_size: int | None = None):
        if config.input_kind == "tokens":
            if vocab_size is None or vocab_size < 1:
                raise BadConfig("token models need vocab_size >= 1")
        self.config = config
        self.vocab_size = vocab_size
        self.params: dict[str, Parameter] = {}
        self._rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
        self.last_attention: np.ndarray | None = None
        self._build()
        del self._rng

    # -- construction helpers -------------------------------------------
    def _add(self, name, shape, fan_in=None, fan_out=None, value=None):
        if name in self.params:
            raise BadConfig(f"duplicate parameter name {name}")
        dtype = nn.default_dtype()
        if value is not None:
            data = np.full(shape, value, dtype=dtype)
        else:
            data = _glorot(self._rng, shape, fan_in, fan_out, dtype)
        self.params[name] = Parameter(data, dtype=dtype)
        return self.params[name]

    def _add_dense(self, prefix, n_in, n_out):
        self._add(f"{prefix}.W", (n_in, n_out), n_in, n_out)
        self._add(f"{prefix}.b", (n_out,), value=0.0)

    def _add_recurrent(self, prefix, n_in, hidden, gates, forget_bias=None):
        self._add(f"{prefix}.W", (n_in, gates * hidden), n_in, gates * hidden)
        self._add(f"{prefix}.U", (hidden, gates * hidden), hidden, gates * hidden)
        b = self._add(f"{prefix}.b", (gates * hidden,), value=0.0)
        if forget_bias is not None:
            b.data[hidden:2 * hidden] = forget_bias

    def _dense(self, prefix, x, activation):
        return nn.dense(x, self.params[f"{prefix}.W"], self.params[f"{prefix}.b"], activation)

    def _rnn(self, prefix):
        return self.params[f"{prefix}.W"], self.params[f"{prefix}.U"], self.params[f"{prefix}.b"]

    def _add_embedding(self):
        k = self.config.embedding_dim
        self._add("embedding", (self.vocab_size + 1, k), self.vocab_size + 1, k)

    def _build(self):
        raise NotImplementedError

    # -- interface -------------------------------------------------------
    def forward(self, batch) -> Tensor:
        raise NotImplementedError

    def check_batch(self, batch) -> np.ndarray:
        cfg = self.config
        if cfg.input_kind == "tokens":
            arr = np.asarray(batch)
            if arr.ndim != 2 or arr.shape[1] != cfg.seq_len or not np.issubdtype(arr.dtype, np.integer):
                raise ShapeMismatch(f"{cfg.architecture} expects integer token ids of shape [b, {cfg.seq_len}], "
                                    f"got {arr.shape} {arr.dtype}")
            return arr
        arr = np.asarray(batch, dtype=self.dtype)
        if arr.ndim != 3 or arr.shape[1:] != (cfg.seq_len, cfg.n_features):
            raise ShapeMismatch(f"cruz expects baseline features of shape [b, {cfg.seq_len}, {cfg.n_features}], "
                                f"got {arr.shape}")
        return arr

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    def predict(self, batch, batch_size: int = 256) -> np.ndarray:
        """Raw sigmoid activations, no thresholding."""
        arr = self.check_batch(batch)
        outs = [self.forward(arr[i:i + batch_size]).data for i in range(0, len(arr), batch_size)]
        if not outs:
            return np.zeros((0, self.config.n_outputs), dtype=self.dtype)
        return np.concatenate(outs, axis=0)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "Model":
        """Cast all parameters in place (float64 for verification)."""
        for name, p in self.params.items():
            self.params[name] = p.astype(dtype)
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ShapeMismatch("parameter names do not match the architecture")
        for name, arr in state.items():
            if arr.shape != self.params[name].shape:
                raise ShapeMismatch(f"{name}: stored shape {arr.shape}, expected {self.params[name].shape}")
            self.params[name] = Parameter(arr, dtype=self.dtype)


class HAN(Model):
    """Embedding -> bidirectional GRU -> word attention -> sigmoid output."""

    def _build(self):
        cfg = self.config
        h, k = cfg.han_hidden, cfg.embedding_dim
        self._add_embedding()
        self._add_recurrent("gru_fwd", k, h, 3)
        self._add_recurrent("gru_bwd", k, h, 3)
        self._add("attention.W", (2 * h, 2 * h), 2 * h, 2 * h)
        self._add("attention.b", (2 * h,), value=0.0)
        self._add("attention.context", (2 * h,), 2 * h, 1)
        self._add_dense("output", 2 * h, cfg.n_outputs)

    def forward(self, batch) -> Tensor:
        ids = self.check_batch(batch)
        x = nn.embedding(ids, self.params["embedding"])
        H = nn.bidirectional(x, self._rnn("gru_fwd"), self._rnn("gru_bwd"), candidate_activation="tanh")
        pooled, alpha = nn.word_attention(
            H, self.params["attention.W"], self.params["attention.b"], self.params["attention.context"]
        )
        self.last_attention = alpha
        return self._dense("output", pooled, "sigmoid")


class KimCNN(Model):
    """Embedding -> parallel ReLU convolutions -> max over time -> sigmoid output."""

    def _build(self):
        cfg = self.config
        k, c = cfg.embedding_dim, cfg.kim_channels
        self._add_embedding()
        for w in cfg.kim_widths:
            self._add(f"conv{w}.K", (w, k, c), w * k, w * c)
            self._add(f"conv{w}.b", (c,), value=0.0)
        self._add_dense("output", len(cfg.kim_widths) * c, cfg.n_outputs)

    def forward(self, batch) -> Tensor:
        ids = self.check_batch(batch)
        x = nn.embedding(ids, self.params["embedding"])
        pooled = [
            nn.conv_maxpool(x, self.params[f"conv{w}.K"], self.params[f"conv{w}.b"])
            for w in self.config.kim_widths
        ]
        return self._dense("output", nn.concat(pooled, axis=-1), "sigmoid")


class BergerGRU(Model):
    """Embedding -> GRU with ReLU candidate (final state) -> sigmoid output."""

    def _build(self):
        cfg = self.config
        self._add_embedding()
        self._add_recurrent("gru", cfg.embedding_dim, cfg.berger_hidden, 3)
        self._add_dense("output", cfg.berger_hidden, cfg.n_outputs)

    def forward(self, batch) -> Tensor:
        ids = self.check_batch(batch)
        x = nn.embedding(ids, self.params["embedding"])
        h = nn.gru_layer(x, *self._rnn("gru"), candidate_activation="relu", return_sequence=False)
        return self._dense("output", h, "sigmoid")


class CruzLSTM(Model):
    """Per-step dense ReLU -> six stacked LSTMs -> dense ReLU -> sigmoid output."""

    def _build(self):
        cfg = self.config
        self._add_dense("input", cfg.n_features, cfg.cruz_dense)
        n_in = cfg.cruz_dense
        for i, h in enumerate(cfg.cruz_lstm):
            self._add_recurrent(f"lstm{i}", n_in, h, 4, forget_bias=1.0)
            n_in = h
        self._add_dense("head", n_in, cfg.cruz_head)
        self._add_dense("output", cfg.cruz_head, cfg.n_outputs)

    def forward(self, batch) -> Tensor:
        # Counts and byte totals span six decades; compress before the first layer.
        x = self._dense("input", Tensor(np.log1p(np.maximum(self.check_batch(batch), 0))), "relu")
        last = len(self.config.cruz_lstm) - 1
        for i in range(last + 1):
            x = nn.lstm_layer(x, *self._rnn(f"lstm{i}"), return_sequence=i < last)
        return self._dense("output", self._dense("head", x, "relu"), "sigmoid")


_BUILDERS = {"han": HAN, "kim": KimCNN, "berger": BergerGRU, "cruz": CruzLSTM}


def build_model(config: ModelConfig, vocab_size: int | None = None) -> Model:
    return _BUILDERS[config.architecture](config, vocab_size)


def build_han(vocab_size: int, config: ModelConfig | None = None, **overrides) -> HAN:
    return build_model(_config("han", config, overrides), vocab_size)


def build_kim(vocab_size: int, config: ModelConfig | None = None, **overrides) -> KimCNN:
    return build_model(_config("kim", config, overrides), vocab_size)


def build_berger(vocab_size: int, config: ModelConfig | None = None, **overrides) -> BergerGRU:
    return build_model(_config("berger", config, overrides), vocab_size)


def build_cruz(config: ModelConfig | None = None, **overrides) -> CruzLSTM:
    return build_model(_config("cruz", config, overrides))


def _config(arch, config, overrides) -> ModelConfig:
    if config is None:
        return ModelConfig(arch, **overrides)
    if config.architecture != arch:
        raise BadConfig(f"config is for {config.architecture}, not {arch}")
    return replace(config, **overrides) if overrides else config


def predict(model: Model, batch) -> np.ndarray:
    return model.predict(batch)
