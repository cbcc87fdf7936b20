"""Model assembly: the residual Conv1D + BiGRU + multi-head attention network
and its ablation variants, built from a declarative config.

The full architecture is::

    input (T, C)
    -> Conv1D(filters, k) -> BatchNorm -> ReLU
    -> Conv1D(filters, k) -> BatchNorm
    -> + Conv1D(1x1) shortcut on the input, then ReLU   (residual block)
    -> BiGRU(units)  -> LayerNorm
    -> MultiHeadAttention(heads, key_dim)
    -> Dropout(rate) -> Flatten
    -> Dense(64, relu) -> Dense(32, relu) -> Dense(classes, softmax)

Ablation flags drop the residual block, the BiGRU+LayerNorm pair, or the
attention block; dropout-then-flatten always precedes the dense head. ReLU
placement inside the residual block (after the first BatchNorm and after
the residual add) follows standard residual-block practice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class ModelConfig:
    input_shape: tuple[int, int] = (60, 1)   # (time steps, channels)
    num_classes: int = 6
    use_resnet_block: bool = True
    use_bigru: bool = True
    use_mha: bool = True
    conv_filters: int = 64
    kernel_size: int = 3
    gru_units: int = 64
    num_heads: int = 4
    key_dim: int = 64
    dropout_rate: float = 0.5
    dense_units: tuple[int, ...] = (64, 32)
    use_smote: bool = True   # pipeline flag carried for ablation bookkeeping
    bn_momentum: float = 0.99  # lower it for short runs so running stats catch up

    def validate(self) -> None:
        if not (self.use_resnet_block or self.use_bigru):
            raise ConfigError("config needs at least one of the residual block or the BiGRU")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.use_mha and (self.num_heads < 1 or self.key_dim < 1):
            raise ConfigError("attention needs num_heads >= 1 and key_dim >= 1")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (time, channels), got {self.input_shape}")

    @property
    def arch_name(self) -> str:
        parts = []
        if self.use_resnet_block:
            parts.append("ResNet-1D")
        if self.use_bigru:
            parts.append("BiGRU")
        if self.use_mha:
            parts.append("MHA")
        return "-".join(parts)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["input_shape"] = list(self.input_shape)
        d["dense_units"] = list(self.dense_units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["dense_units"] = tuple(d["dense_units"])
        return cls(**d)


class Model:
    """Built network: ordered parameter groups plus the forward pass."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.conv1 = self.bn1 = self.conv2 = self.bn2 = self.shortcut = None
        self.gru_fwd = self.gru_bwd = self.lnorm = None
        self.mha = None
        self.dense: list[L.DenseParams] = []
        self.stage_shapes: list = []

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors, in a stable order."""
        return {n: t for n, t in self.named_arrays().items() if t.requires_grad}

    def named_arrays(self) -> dict[str, Tensor]:
        """All state tensors (trainable weights plus running statistics)."""
        out: dict[str, Tensor] = {}
        if self.cfg.use_resnet_block:
            out["conv1.kernels"] = self.conv1.kernels
            out["conv1.bias"] = self.conv1.bias
            for tag, bn in (("bn1", self.bn1), ("bn2", self.bn2)):
                out[f"{tag}.gamma"] = bn.gamma
                out[f"{tag}.beta"] = bn.beta
                out[f"{tag}.running_mean"] = bn.running_mean
                out[f"{tag}.running_var"] = bn.running_var
            out["conv2.kernels"] = self.conv2.kernels
            out["conv2.bias"] = self.conv2.bias
            out["shortcut.kernels"] = self.shortcut.kernels
            out["shortcut.bias"] = self.shortcut.bias
        if self.cfg.use_bigru:
            for tag, p in (("gru_fwd", self.gru_fwd), ("gru_bwd", self.gru_bwd)):
                for gname, gate in (("update", p.update), ("reset", p.reset),
                                    ("candidate", p.candidate)):
                    out[f"{tag}.{gname}.W"] = gate.W
                    out[f"{tag}.{gname}.U"] = gate.U
                    out[f"{tag}.{gname}.b"] = gate.b
            out["lnorm.gamma"] = self.lnorm.gamma
            out["lnorm.beta"] = self.lnorm.beta
        if self.cfg.use_mha:
            for h in range(self.mha.num_heads):
                out[f"mha.head{h}.w_q"] = self.mha.w_q[h]
                out[f"mha.head{h}.w_k"] = self.mha.w_k[h]
                out[f"mha.head{h}.w_v"] = self.mha.w_v[h]
            out["mha.w_o"] = self.mha.w_o
        for i, d in enumerate(self.dense):
            out[f"dense{i}.W"] = d.W
            out[f"dense{i}.b"] = d.b
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def forward(self, batch, mode: str = "infer",
                rng: np.random.Generator | None = None) -> Tensor:
        """(B, T, C) batch -> (B, num_classes) probability rows."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        t_len, channels = self.cfg.input_shape
        if x.ndim != 3 or x.shape[1:] != (t_len, channels):
            raise ShapeError(
                f"model expects batches of shape (B, {t_len}, {channels}), got {x.shape}")
        if self.cfg.use_resnet_block:
            y = L.conv1d_forward(x, self.conv1)
            y = T.relu(L.batchnorm_forward(y, self.bn1, mode))
            y = L.batchnorm_forward(L.conv1d_forward(y, self.conv2), self.bn2, mode)
            y = T.relu(T.add(y, L.conv1d_forward(x, self.shortcut)))
        else:
            y = x
        if self.cfg.use_bigru:
            y = L.bigru_forward(y, self.gru_fwd, self.gru_bwd)
            y = L.layernorm_forward(y, self.lnorm)
        if self.cfg.use_mha:
            y = L.multi_head_attention(y, self.mha)
        y = L.dropout_forward(y, self.cfg.dropout_rate, mode, rng)
        y = T.reshape(y, (y.shape[0], y.shape[1] * y.shape[2]))
        for d in self.dense:
            y = L.dense_forward(y, d)
        return y

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.named_arrays()
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise ConfigError(f"checkpoint is missing arrays: {missing[:5]}")
        for name, tensor in own.items():
            src = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if src.shape != tensor.data.shape:
                raise ConfigError(
                    f"checkpoint array {name} has shape {src.shape}, expected {tensor.data.shape}")
            tensor.data = src.copy()


def build_model(cfg: ModelConfig, rng: np.random.Generator) -> Model:
    """Instantiate parameters and verify the stage shape chain."""
    cfg.validate()
    m = Model(cfg)
    t_len, channels = cfg.input_shape
    shapes: list = [(t_len, channels)]
    width = channels
    if cfg.use_resnet_block:
        m.conv1 = L.init_conv1d(rng, channels, cfg.conv_filters, cfg.kernel_size)
        m.bn1 = L.init_batchnorm(rng, cfg.conv_filters, momentum=cfg.bn_momentum)
        m.conv2 = L.init_conv1d(rng, cfg.conv_filters, cfg.conv_filters, cfg.kernel_size)
        m.bn2 = L.init_batchnorm(rng, cfg.conv_filters, momentum=cfg.bn_momentum)
        m.shortcut = L.init_conv1d(rng, channels, cfg.conv_filters, kernel_size=1)
        width = cfg.conv_filters
        shapes.append((t_len, width))
    if cfg.use_bigru:
        m.gru_fwd = L.init_gru(rng, width, cfg.gru_units)
        m.gru_bwd = L.init_gru(rng, width, cfg.gru_units)
        width = 2 * cfg.gru_units
        m.lnorm = L.init_layernorm(rng, width)
        shapes.append((t_len, width))
    if cfg.use_mha:
        m.mha = L.init_mha(rng, width, cfg.num_heads, cfg.key_dim)
        shapes.append((t_len, width))
    flat = t_len * width
    shapes.append(flat)
    for units in cfg.dense_units:
        m.dense.append(L.init_dense(rng, flat, units, activation="relu"))
        flat = units
        shapes.append(units)
    m.dense.append(L.init_dense(rng, flat, cfg.num_classes, activation="softmax"))
    shapes.append(cfg.num_classes)
    m.stage_shapes = shapes
    return m


def table3_grid(input_shape: tuple[int, int] = (60, 1),
                num_classes: int = 6) -> list[tuple[int, ModelConfig]]:
    """The ten-variant ablation grid.

    #1 residual block only; #2 BiGRU+MHA; #3 residual block + BiGRU;
    #4/#5/#6 full model with 2/4/8 heads; #7/#8 dropout 0.3/0.7;
    #9 one fewer hidden dense layer; #10 full model without SMOTE.
    """
    flagship = ModelConfig(input_shape=input_shape, num_classes=num_classes)
    cases = [
        (1, replace(flagship, use_bigru=False, use_mha=False)),
        (2, replace(flagship, use_resnet_block=False)),
        (3, replace(flagship, use_mha=False)),
        (4, replace(flagship, num_heads=2)),
        (5, flagship),
        (6, replace(flagship, num_heads=8)),
        (7, replace(flagship, dropout_rate=0.3)),
        (8, replace(flagship, dropout_rate=0.7)),
        (9, replace(flagship, dense_units=(64,))),
        (10, replace(flagship, use_smote=False)),
    ]
    return cases
