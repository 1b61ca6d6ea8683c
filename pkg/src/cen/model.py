"""The two-headed network: shared ReLU trunk, k-way distribution head, scalar
regression head, with an analytic backward pass and momentum SGD.

Parameters are plain float64 arrays. forward accepts a single feature vector
or a (batch, d) matrix; the trace it returns feeds exactly one backward call.
sgd_step is functional (returns new parameters) so older generations can be
kept bit-identical while their offspring train.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AgeRange
from .errors import DivergenceError


@dataclass
class ParamBlock:
    """One affine layer: W of shape (out, in) and b of shape (out,)."""

    W: np.ndarray
    b: np.ndarray

    def copy(self) -> "ParamBlock":
        return ParamBlock(self.W.copy(), self.b.copy())


@dataclass
class GradientSet:
    """Gradients (or momentum buffers) shaped like the model parameters."""

    trunk: list[ParamBlock]
    head_ldl: ParamBlock
    head_reg: ParamBlock


@dataclass
class ModelParams:
    """Trunk layers (ReLU after each) plus the two output heads."""

    trunk: list[ParamBlock]
    head_ldl: ParamBlock  # (k, feature_dim)
    head_reg: ParamBlock  # (1, feature_dim)
    activation: str = "relu"

    @property
    def input_dim(self) -> int:
        return self.trunk[0].W.shape[1] if self.trunk else self.head_ldl.W.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.trunk[-1].W.shape[0] if self.trunk else self.input_dim

    @property
    def k(self) -> int:
        return self.head_ldl.W.shape[0]

    @property
    def trunk_dims(self) -> list[int]:
        return [self.input_dim] + [blk.W.shape[0] for blk in self.trunk]

    def copy(self) -> "ModelParams":
        return ModelParams(
            trunk=[blk.copy() for blk in self.trunk],
            head_ldl=self.head_ldl.copy(),
            head_reg=self.head_reg.copy(),
            activation=self.activation,
        )


def _blocks(obj: ModelParams | GradientSet) -> list[ParamBlock]:
    return [*obj.trunk, obj.head_ldl, obj.head_reg]


def init_params(
    input_dim: int, hidden_dims: list[int], k: int, seed: int, activation: str = "relu"
) -> ModelParams:
    """Seeded uniform fan-in initialization: entries in +-1/sqrt(fan_in)."""
    if activation != "relu":
        raise ValueError(f"unsupported activation '{activation}'")
    if input_dim <= 0 or k <= 0 or any(h <= 0 for h in hidden_dims):
        raise ValueError("init_params: dimensions must be positive")
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims]
    trunk = []
    for i in range(len(hidden_dims)):
        bound = 1.0 / np.sqrt(dims[i])
        trunk.append(
            ParamBlock(
                W=rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])),
                b=rng.uniform(-bound, bound, size=dims[i + 1]),
            )
        )
    feat = dims[-1]
    bound = 1.0 / np.sqrt(feat)
    head_ldl = ParamBlock(
        W=rng.uniform(-bound, bound, size=(k, feat)),
        b=rng.uniform(-bound, bound, size=k),
    )
    head_reg = ParamBlock(
        W=rng.uniform(-bound, bound, size=(1, feat)),
        b=rng.uniform(-bound, bound, size=1),
    )
    return ModelParams(trunk=trunk, head_ldl=head_ldl, head_reg=head_reg, activation=activation)


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, retained for one backward call."""

    params: ModelParams
    x: np.ndarray
    pre: list[np.ndarray]  # trunk pre-activations
    act: list[np.ndarray]  # trunk activations; act[-1] are the features f
    z: np.ndarray
    s: float | np.ndarray
    consumed: bool = False

    @property
    def features(self) -> np.ndarray:
        return self.act[-1] if self.act else self.x


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Run the trunk and both heads on a vector (d,) or batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.input_dim:
        raise ValueError(
            f"forward: input shape {x.shape} does not match model input dim {params.input_dim}"
        )
    single = x.ndim == 1
    a = x
    pre_list: list[np.ndarray] = []
    act_list: list[np.ndarray] = []
    for blk in params.trunk:
        pre = a @ blk.W.T + blk.b
        a = np.maximum(pre, 0.0)
        pre_list.append(pre)
        act_list.append(a)
    z = a @ params.head_ldl.W.T + params.head_ldl.b
    s_col = a @ params.head_reg.W.T + params.head_reg.b
    s = float(s_col[0]) if single else s_col[:, 0]
    return ForwardTrace(params=params, x=x, pre=pre_list, act=act_list, z=z, s=s)


def backward(trace: ForwardTrace, d_z: np.ndarray, d_s: float | np.ndarray) -> GradientSet:
    """Exact gradients of d_z . z + d_s * s with respect to all parameters.

    For a batched trace, d_z is (n, k) and d_s is (n,); the returned gradients
    are summed over the batch (pass gradients of a mean to get mean gradients).
    ReLU uses subgradient 0 at exactly-zero pre-activations.
    """
    if trace.consumed:
        raise RuntimeError("backward: trace already consumed; rerun forward")
    trace.consumed = True
    params = trace.params
    single = trace.x.ndim == 1

    d_z = np.asarray(d_z, dtype=np.float64)
    if single:
        if d_z.shape != (params.k,):
            raise ValueError(f"backward: d_z shape {d_z.shape}, expected ({params.k},)")
        d_z = d_z[None, :]
        d_s_vec = np.array([float(d_s)])
        f = trace.features[None, :]
        x = trace.x[None, :]
        pres = [p[None, :] for p in trace.pre]
        acts = [a[None, :] for a in trace.act]
    else:
        n = trace.x.shape[0]
        if d_z.shape != (n, params.k):
            raise ValueError(f"backward: d_z shape {d_z.shape}, expected ({n}, {params.k})")
        d_s_vec = np.asarray(d_s, dtype=np.float64).reshape(n)
        f = trace.features
        x = trace.x
        pres = trace.pre
        acts = trace.act

    g_ldl = ParamBlock(W=d_z.T @ f, b=d_z.sum(axis=0))
    g_reg = ParamBlock(W=(d_s_vec @ f)[None, :], b=np.array([d_s_vec.sum()]))
    d_f = d_z @ params.head_ldl.W + d_s_vec[:, None] * params.head_reg.W

    g_trunk: list[ParamBlock] = [None] * len(params.trunk)  # type: ignore[list-item]
    d_a = d_f
    for i in range(len(params.trunk) - 1, -1, -1):
        d_pre = d_a * (pres[i] > 0)
        inp = acts[i - 1] if i > 0 else x
        g_trunk[i] = ParamBlock(W=d_pre.T @ inp, b=d_pre.sum(axis=0))
        d_a = d_pre @ params.trunk[i].W
    return GradientSet(trunk=g_trunk, head_ldl=g_ldl, head_reg=g_reg)


@dataclass
class OptimizerState:
    """SGD with classic momentum and weight decay folded into the gradient.

    Weight decay applies to weight matrices only, never biases. lr may be
    adjusted between steps by a schedule.
    """

    lr: float
    momentum: float
    weight_decay: float
    velocity: GradientSet

    @classmethod
    def for_params(
        cls, params: ModelParams, lr: float, momentum: float, weight_decay: float
    ) -> "OptimizerState":
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        zeros = GradientSet(
            trunk=[ParamBlock(np.zeros_like(b.W), np.zeros_like(b.b)) for b in params.trunk],
            head_ldl=ParamBlock(np.zeros_like(params.head_ldl.W), np.zeros_like(params.head_ldl.b)),
            head_reg=ParamBlock(np.zeros_like(params.head_reg.W), np.zeros_like(params.head_reg.b)),
        )
        return cls(lr=lr, momentum=momentum, weight_decay=weight_decay, velocity=zeros)


def sgd_step(params: ModelParams, grads: GradientSet, opt: OptimizerState) -> ModelParams:
    """One update v <- mu*v + g + wd*theta; theta <- theta - lr*v.

    Returns new parameters; the momentum buffers in opt are updated in place.
    Non-finite gradients raise DivergenceError, the training divergence signal.
    """
    p_blocks = _blocks(params)
    g_blocks = _blocks(grads)
    v_blocks = _blocks(opt.velocity)
    if len(g_blocks) != len(p_blocks):
        raise ValueError("sgd_step: gradient structure does not match parameters")
    new_blocks = []
    for pb, gb, vb in zip(p_blocks, g_blocks, v_blocks):
        if pb.W.shape != gb.W.shape or pb.b.shape != gb.b.shape:
            raise ValueError(
                f"sgd_step: gradient shapes {gb.W.shape}/{gb.b.shape} do not match "
                f"parameter shapes {pb.W.shape}/{pb.b.shape}"
            )
        if not (np.all(np.isfinite(gb.W)) and np.all(np.isfinite(gb.b))):
            raise DivergenceError("non-finite gradient encountered")
        vb.W[:] = opt.momentum * vb.W + gb.W + opt.weight_decay * pb.W
        vb.b[:] = opt.momentum * vb.b + gb.b
        new_blocks.append(ParamBlock(W=pb.W - opt.lr * vb.W, b=pb.b - opt.lr * vb.b))
    return ModelParams(
        trunk=new_blocks[:-2],
        head_ldl=new_blocks[-2],
        head_reg=new_blocks[-1],
        activation=params.activation,
    )


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([np.concatenate([b.W.ravel(), b.b]) for b in _blocks(params)])


def flatten_grads(grads: GradientSet) -> np.ndarray:
    return np.concatenate([np.concatenate([b.W.ravel(), b.b]) for b in _blocks(grads)])


def unflatten_params(template: ModelParams, theta: np.ndarray) -> ModelParams:
    """Rebuild parameters shaped like template from a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    blocks = []
    pos = 0
    for b in _blocks(template):
        nw, nb = b.W.size, b.b.size
        blocks.append(
            ParamBlock(
                W=theta[pos : pos + nw].reshape(b.W.shape).copy(),
                b=theta[pos + nw : pos + nw + nb].copy(),
            )
        )
        pos += nw + nb
    if pos != theta.size:
        raise ValueError(f"unflatten_params: vector length {theta.size}, expected {pos}")
    return ModelParams(
        trunk=blocks[:-2],
        head_ldl=blocks[-2],
        head_reg=blocks[-1],
        activation=template.activation,
    )


def n_params(params: ModelParams) -> int:
    return sum(b.W.size + b.b.size for b in _blocks(params))


CHECKPOINT_VERSION = 1


def checkpoint_dict(
    params: ModelParams,
    age_range: AgeRange,
    generation_index: int,
    optimizer: dict,
    rng_seed: int,
    warm_start: bool,
) -> dict:
    """Checkpoint content with a fixed key order for byte-stable serialization."""

    def blk(b: ParamBlock) -> dict:
        return {"weights": [float(v) for v in b.W.ravel()], "biases": [float(v) for v in b.b]}

    return {
        "format_version": CHECKPOINT_VERSION,
        "age_range": {"l1": age_range.l1, "lk": age_range.lk},
        "generation_index": generation_index,
        "trunk_dims": params.trunk_dims,
        "activation": params.activation,
        "layers": {
            "trunk": [blk(b) for b in params.trunk],
            "head_ldl": blk(params.head_ldl),
            "head_reg": blk(params.head_reg),
        },
        "optimizer": optimizer,
        "rng_seed": rng_seed,
        "warm_start": warm_start,
    }


def save_checkpoint(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; re-serializing the returned doc is value-identical."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    dims = doc["trunk_dims"]
    rng = AgeRange(doc["age_range"]["l1"], doc["age_range"]["lk"])

    def blk(d: dict, shape: tuple[int, int]) -> ParamBlock:
        W = np.array(d["weights"], dtype=np.float64).reshape(shape)
        b = np.array(d["biases"], dtype=np.float64)
        if b.shape != (shape[0],):
            raise ValueError(f"checkpoint bias length {b.shape} does not match {shape}")
        return ParamBlock(W=W, b=b)

    trunk = [
        blk(d, (dims[i + 1], dims[i])) for i, d in enumerate(doc["layers"]["trunk"])
    ]
    feat = dims[-1]
    params = ModelParams(
        trunk=trunk,
        head_ldl=blk(doc["layers"]["head_ldl"], (rng.k, feat)),
        head_reg=blk(doc["layers"]["head_reg"], (1, feat)),
        activation=doc["activation"],
    )
    return params, doc
