"""Multi-tower fusion network over trapezoid windows.

Forward pipeline (fixed order): robust-scale the window per column,
smooth the scaled matrix once per tower (tower 0 keeps scale 1, i.e. the
raw scaled input), run each tower's independent backbone, add sinusoidal
positional encoding to every tower output, concatenate the tower
outputs along the time axis, reduce back to the n forecast steps with a
two-layer feed-forward head, and invert the robust scale.

Everything is plain float64 numpy with hand-written backpropagation, so
training is bitwise reproducible from a seed and gradients can be
checked against finite differences.

Backbones (each maps the l x (k + C_dyn) tower input to n x k):

* ``linear``   - one affine map over the time axis, shared across columns.
* ``dlinear``  - moving-average trend/remainder split, separate affine
                 maps per component, summed.
* ``mixer``    - residual time-mixing and column-mixing blocks followed
                 by a temporal projection.

Past dynamic covariates enter as extra columns of the tower input (they
bypass the tower's smoothing; only column-mixing backbones can blend
them into the data columns).  The static one-hot goes through a small
embedding and lands as a per-column bias on the tower input.  Future
dynamic covariates are projected onto the output columns.  The backbone
core's output keeps only the first k columns.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from .covariates import CovariateBundle
from .errors import InvalidConfig, ShapeMismatch, UnknownBackbone
from .preprocess import (
    batch_inverse_scale,
    batch_scale_inputs,
    batch_scale_stats,
    batch_scale_values,
    moving_average,
    moving_average_adjoint,
    validate_scales,
)
from .trapezoid import TrapezoidWindow, WindowSpec, prefix_lengths

BACKBONES = ("linear", "dlinear", "mixer")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
}


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position matrix: sin on even columns, cos on odd ones."""
    if length < 1 or dim < 1:
        raise InvalidConfig("positional_encoding needs length >= 1 and dim >= 1")
    pos = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / dim)
    pe = np.empty((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim // 2])
    return pe


@dataclass(frozen=True)
class ModelConfig:
    spec: WindowSpec
    scales: tuple[int, ...] = (1, 3, 7, 14)
    backbone: str = "mixer"
    num_blocks: int = 2
    decomp_kernel: int = 7
    dropout: float = 0.1
    activation: str = "gelu"
    c_sta: int = 0
    c_dyn: int = 0
    fusion_hidden: int = 0  # 0 means "use n"
    use_positional_encoding: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", validate_scales(self.scales))
        if self.backbone not in BACKBONES:
            raise UnknownBackbone(f"unknown backbone {self.backbone!r}, expected one of {BACKBONES}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise InvalidConfig(f"unknown activation {self.activation!r}")
        if self.fusion_hidden < 0:
            raise InvalidConfig("fusion_hidden must be >= 0")
        if self.num_blocks < 1:
            raise InvalidConfig("num_blocks must be >= 1")
        if max(self.scales) > self.spec.l:
            raise InvalidConfig(
                f"largest smoothing scale {max(self.scales)} exceeds input length {self.spec.l}"
            )
        if self.backbone == "dlinear" and not 1 <= self.decomp_kernel <= self.spec.l:
            raise InvalidConfig(
                f"decomp_kernel must be in [1, {self.spec.l}], got {self.decomp_kernel}"
            )
        if min(self.c_sta, self.c_dyn) < 0:
            raise InvalidConfig("covariate widths must be >= 0")

    @property
    def num_towers(self) -> int:
        return len(self.scales)

    @property
    def hidden(self) -> int:
        return self.fusion_hidden or self.spec.n

    def to_dict(self) -> dict:
        return {
            "spec": {"m": self.spec.m, "n": self.spec.n, "k": self.spec.k, "s": self.spec.s},
            "scales": list(self.scales),
            "backbone": self.backbone,
            "num_blocks": self.num_blocks,
            "decomp_kernel": self.decomp_kernel,
            "dropout": self.dropout,
            "activation": self.activation,
            "c_sta": self.c_sta,
            "c_dyn": self.c_dyn,
            "fusion_hidden": self.fusion_hidden,
            "use_positional_encoding": self.use_positional_encoding,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        spec = data.pop("spec")
        return cls(spec=WindowSpec(**spec), scales=tuple(data.pop("scales")), **data)


@dataclass
class Batch:
    """Stacked windows plus covariates and per-column scaling statistics."""

    inputs: np.ndarray  # (B, l, k) raw units
    targets: np.ndarray | None  # (B, n, k) raw units
    static: np.ndarray  # (B, C_sta)
    dyn_past: np.ndarray  # (B, l, C_dyn)
    dyn_future: np.ndarray  # (B, n, C_dyn)
    medians: np.ndarray  # (B, k)
    iqrs: np.ndarray  # (B, k)
    degenerate: np.ndarray  # (B, k) bool

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(
            self.inputs[idx],
            None if self.targets is None else self.targets[idx],
            self.static[idx],
            self.dyn_past[idx],
            self.dyn_future[idx],
            self.medians[idx],
            self.iqrs[idx],
            self.degenerate[idx],
        )

    def scaled_targets(self) -> np.ndarray:
        if self.targets is None:
            raise ShapeMismatch("batch was prepared without targets")
        return batch_scale_values(self.targets, self.medians, self.iqrs)


def prepare_batch(
    windows: Sequence[TrapezoidWindow],
    bundles: Sequence[CovariateBundle],
    config: ModelConfig,
    require_targets: bool = False,
) -> Batch:
    """Stack windows/covariates into arrays, validating shapes against config."""
    spec = config.spec
    if len(windows) == 0:
        raise ShapeMismatch("empty window sequence")
    if len(windows) != len(bundles):
        raise ShapeMismatch("one covariate bundle per window required")
    for w in windows:
        if w.spec != spec:
            raise ShapeMismatch(f"window spec {w.spec} != model spec {spec}")
        if require_targets and w.target is None:
            raise ShapeMismatch("window lacks a target matrix")
    for b in bundles:
        if b.static.shape != (config.c_sta,):
            raise ShapeMismatch(f"static covariates {b.static.shape} != ({config.c_sta},)")
        if b.dyn_past.shape != (spec.l, config.c_dyn):
            raise ShapeMismatch(f"dyn_past {b.dyn_past.shape} != ({spec.l}, {config.c_dyn})")
        if b.dyn_future.shape != (spec.n, config.c_dyn):
            raise ShapeMismatch(f"dyn_future {b.dyn_future.shape} != ({spec.n}, {config.c_dyn})")
    inputs = np.stack([w.input for w in windows])
    targets = None
    if all(w.target is not None for w in windows):
        targets = np.stack([w.target for w in windows])
    medians, iqrs, degenerate = batch_scale_stats(inputs, prefix_lengths(spec))
    return Batch(
        inputs=inputs,
        targets=targets,
        static=np.stack([b.static for b in bundles]),
        dyn_past=np.stack([b.dyn_past for b in bundles]),
        dyn_future=np.stack([b.dyn_future for b in bundles]),
        medians=medians,
        iqrs=iqrs,
        degenerate=degenerate,
    )


class MtFusionNet:
    """d+1 smoothing towers with independent backbones and a fusion head.

    Parameters live in an ordered name -> float64 array dict; creation
    order is canonical and also fixes serialization and hashing order.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self._init_params()
        n, k = config.spec.n, config.spec.k
        self._pe = positional_encoding(n, k) if config.use_positional_encoding else None
        self._act, self._act_grad = ACTIVATIONS[config.activation]

    # --- parameters -------------------------------------------------------

    def _add(self, rng, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        self.params[name] = rng.uniform(-bound, bound, size=shape)

    def _init_params(self) -> None:
        cfg = self.config
        l, n, k = cfg.spec.l, cfg.spec.n, cfg.spec.k
        kk = k + cfg.c_dyn  # tower-input column count
        rng = np.random.default_rng(cfg.seed)
        for q in range(cfg.num_towers):
            t = f"tower{q}"
            if cfg.backbone == "linear":
                self._add(rng, f"{t}.lin.W", (l, n), l)
                self._add(rng, f"{t}.lin.b", (n,), l)
            elif cfg.backbone == "dlinear":
                self._add(rng, f"{t}.trend.W", (l, n), l)
                self._add(rng, f"{t}.trend.b", (n,), l)
                self._add(rng, f"{t}.resid.W", (l, n), l)
                self._add(rng, f"{t}.resid.b", (n,), l)
            else:  # mixer
                for i in range(cfg.num_blocks):
                    blk = f"{t}.block{i}"
                    self._add(rng, f"{blk}.time.W", (l, l), l)
                    self._add(rng, f"{blk}.time.b", (l,), l)
                    self._add(rng, f"{blk}.col.W", (kk, kk), kk)
                    self._add(rng, f"{blk}.col.b", (kk,), kk)
                self._add(rng, f"{t}.proj.W", (l, n), l)
                self._add(rng, f"{t}.proj.b", (n,), l)
            if cfg.c_sta:
                self._add(rng, f"{t}.static.W", (cfg.c_sta, k), cfg.c_sta)
            if cfg.c_dyn:
                self._add(rng, f"{t}.future.W", (cfg.c_dyn, k), cfg.c_dyn)
        tn = cfg.num_towers * n
        self._add(rng, "fusion.W1", (tn, cfg.hidden), tn)
        self._add(rng, "fusion.b1", (cfg.hidden,), tn)
        self._add(rng, "fusion.W2", (cfg.hidden, n), cfg.hidden)
        self._add(rng, "fusion.b2", (n,), cfg.hidden)

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name, value in self.params.items():
            digest.update(name.encode())
            digest.update(str(value.shape).encode())
            digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return digest.hexdigest()

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.params[name][...] = params[name]

    # --- forward ------------------------------------------------------------

    def _dropout_mask(self, rng, shape) -> np.ndarray | None:
        p = self.config.dropout
        if rng is None or p == 0.0:
            return None
        return (rng.random(shape) >= p) / (1.0 - p)

    def _core_forward(self, q: int, x_in: np.ndarray, rng):
        """Backbone core: (B, l, K) -> (B, n, K); returns (out, cache)."""
        cfg, P = self.config, self.params
        t = f"tower{q}"
        if cfg.backbone == "linear":
            out = np.einsum("bpj,ph->bhj", x_in, P[f"{t}.lin.W"]) + P[f"{t}.lin.b"][:, None]
            return out, {"x": x_in}
        if cfg.backbone == "dlinear":
            trend = moving_average(x_in, cfg.decomp_kernel)
            resid = x_in - trend
            out = (
                np.einsum("bpj,ph->bhj", trend, P[f"{t}.trend.W"])
                + P[f"{t}.trend.b"][:, None]
                + np.einsum("bpj,ph->bhj", resid, P[f"{t}.resid.W"])
                + P[f"{t}.resid.b"][:, None]
            )
            return out, {"trend": trend, "resid": resid}
        # mixer
        h = x_in
        blocks = []
        for i in range(cfg.num_blocks):
            blk = f"{t}.block{i}"
            z1 = np.einsum("bpj,pq->bqj", h, P[f"{blk}.time.W"]) + P[f"{blk}.time.b"][:, None]
            a1 = self._act(z1)
            m1 = self._dropout_mask(rng, a1.shape)
            if m1 is not None:
                a1 = a1 * m1
            h1 = h + a1
            z2 = np.einsum("bpj,ji->bpi", h1, P[f"{blk}.col.W"]) + P[f"{blk}.col.b"]
            a2 = self._act(z2)
            m2 = self._dropout_mask(rng, a2.shape)
            if m2 is not None:
                a2 = a2 * m2
            blocks.append({"h": h, "z1": z1, "m1": m1, "h1": h1, "z2": z2, "m2": m2})
            h = h1 + a2
        out = np.einsum("bpj,ph->bhj", h, P[f"{t}.proj.W"]) + P[f"{t}.proj.b"][:, None]
        return out, {"blocks": blocks, "h_final": h}

    def _core_backward(self, q: int, cache: dict, d_out: np.ndarray, grads: dict):
        """Accumulate core parameter grads; return gradient w.r.t. the core input."""
        cfg, P = self.config, self.params
        t = f"tower{q}"
        if cfg.backbone == "linear":
            x = cache["x"]
            grads[f"{t}.lin.W"] = np.einsum("bpj,bhj->ph", x, d_out)
            grads[f"{t}.lin.b"] = d_out.sum(axis=(0, 2))
            return np.einsum("ph,bhj->bpj", P[f"{t}.lin.W"], d_out)
        if cfg.backbone == "dlinear":
            trend, resid = cache["trend"], cache["resid"]
            grads[f"{t}.trend.W"] = np.einsum("bpj,bhj->ph", trend, d_out)
            grads[f"{t}.trend.b"] = d_out.sum(axis=(0, 2))
            grads[f"{t}.resid.W"] = np.einsum("bpj,bhj->ph", resid, d_out)
            grads[f"{t}.resid.b"] = d_out.sum(axis=(0, 2))
            d_trend = np.einsum("ph,bhj->bpj", P[f"{t}.trend.W"], d_out)
            d_resid = np.einsum("ph,bhj->bpj", P[f"{t}.resid.W"], d_out)
            return d_resid + moving_average_adjoint(d_trend - d_resid, cfg.decomp_kernel)
        # mixer
        h_final = cache["h_final"]
        grads[f"{t}.proj.W"] = np.einsum("bpj,bhj->ph", h_final, d_out)
        grads[f"{t}.proj.b"] = d_out.sum(axis=(0, 2))
        dh = np.einsum("ph,bhj->bpj", P[f"{t}.proj.W"], d_out)
        for i in reversed(range(cfg.num_blocks)):
            blk = f"{t}.block{i}"
            c = cache["blocks"][i]
            da2 = dh if c["m2"] is None else dh * c["m2"]
            dz2 = da2 * self._act_grad(c["z2"])
            grads[f"{blk}.col.W"] = np.einsum("bpj,bpi->ji", c["h1"], dz2)
            grads[f"{blk}.col.b"] = dz2.sum(axis=(0, 1))
            dh1 = dh + np.einsum("ji,bpi->bpj", P[f"{blk}.col.W"], dz2)
            da1 = dh1 if c["m1"] is None else dh1 * c["m1"]
            dz1 = da1 * self._act_grad(c["z1"])
            grads[f"{blk}.time.W"] = np.einsum("bpj,bqj->pq", c["h"], dz1)
            grads[f"{blk}.time.b"] = dz1.sum(axis=(0, 2))
            dh = dh1 + np.einsum("pq,bqj->bpj", P[f"{blk}.time.W"], dz1)
        return dh

    def scaled_forward(self, batch: Batch, training: bool = False, rng=None):
        """Prediction in scaled space plus the cache backward() consumes."""
        cfg, P = self.config, self.params
        k = cfg.spec.k
        drop_rng = rng if training else None
        x_scaled = batch_scale_inputs(
            batch.inputs, prefix_lengths(cfg.spec), batch.medians, batch.iqrs
        )
        tower_outputs = []
        tower_caches = []
        for q, scale in enumerate(cfg.scales):
            smoothed = moving_average(x_scaled, scale)
            if cfg.c_sta:
                bias = batch.static @ P[f"tower{q}.static.W"]  # (B, k)
                smoothed = smoothed + bias[:, None, :]
            if cfg.c_dyn:
                x_in = np.concatenate([smoothed, batch.dyn_past], axis=2)
            else:
                x_in = smoothed
            core_out, core_cache = self._core_forward(q, x_in, drop_rng)
            p_q = core_out[:, :, :k]
            if cfg.c_dyn:
                p_q = p_q + np.einsum("bhc,cj->bhj", batch.dyn_future, P[f"tower{q}.future.W"])
            tower_outputs.append(p_q)
            tower_caches.append(core_cache)
        if self._pe is not None:
            stacked = [p + self._pe for p in tower_outputs]
        else:
            stacked = tower_outputs
        h = np.concatenate(stacked, axis=1)  # (B, towers*n, k)
        z = np.einsum("btj,tf->bfj", h, P["fusion.W1"]) + P["fusion.b1"][:, None]
        a = self._act(z)
        mask = self._dropout_mask(drop_rng, a.shape)
        if mask is not None:
            a = a * mask
        pred = np.einsum("bfj,fh->bhj", a, P["fusion.W2"]) + P["fusion.b2"][:, None]
        cache = {
            "batch": batch,
            "h": h,
            "z": z,
            "a": a,
            "mask": mask,
            "tower_caches": tower_caches,
            "tower_outputs": tower_outputs,
        }
        return pred, cache

    def backward(self, cache: dict, d_pred: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients of a scalar loss given d(loss)/d(scaled prediction)."""
        cfg, P = self.config, self.params
        batch: Batch = cache["batch"]
        n, k = cfg.spec.n, cfg.spec.k
        grads: dict[str, np.ndarray] = {}
        grads["fusion.W2"] = np.einsum("bfj,bhj->fh", cache["a"], d_pred)
        grads["fusion.b2"] = d_pred.sum(axis=(0, 2))
        da = np.einsum("fh,bhj->bfj", P["fusion.W2"], d_pred)
        if cache["mask"] is not None:
            da = da * cache["mask"]
        dz = da * self._act_grad(cache["z"])
        grads["fusion.W1"] = np.einsum("btj,bfj->tf", cache["h"], dz)
        grads["fusion.b1"] = dz.sum(axis=(0, 2))
        dh = np.einsum("tf,bfj->btj", P["fusion.W1"], dz)
        for q in range(cfg.num_towers):
            d_p = dh[:, q * n:(q + 1) * n, :]  # PE add is gradient-transparent
            if cfg.c_dyn:
                grads[f"tower{q}.future.W"] = np.einsum("bhc,bhj->cj", batch.dyn_future, d_p)
                d_core = np.zeros(d_p.shape[:2] + (k + cfg.c_dyn,))
                d_core[:, :, :k] = d_p
            else:
                d_core = d_p
            d_xin = self._core_backward(q, cache["tower_caches"][q], d_core, grads)
            if cfg.c_sta:
                grads[f"tower{q}.static.W"] = np.einsum(
                    "bc,bj->cj", batch.static, d_xin[:, :, :k].sum(axis=1)
                )
        return {name: grads[name] for name in self.params}

    def forward(self, batch: Batch, training: bool = False, rng=None) -> np.ndarray:
        """Predictions in original units, shape (B, n, k)."""
        pred, _ = self.scaled_forward(batch, training=training, rng=rng)
        return batch_inverse_scale(pred, batch.medians, batch.iqrs)

    def forward_window(
        self,
        window: TrapezoidWindow,
        cov: CovariateBundle | None = None,
        training: bool = False,
        rng=None,
    ) -> np.ndarray:
        """Single-window convenience wrapper: returns (n, k) in original units."""
        if cov is None:
            cov = CovariateBundle.empty(self.config.spec.l, self.config.spec.n)
        batch = prepare_batch([window], [cov], self.config)
        return self.forward(batch, training=training, rng=rng)[0]

    # --- serialization ------------------------------------------------------

    MAGIC = b"TTFMODEL1\n"

    def to_bytes(self, extras: dict | None = None) -> bytes:
        """Deterministic container: magic, length-prefixed JSON header, raw tensors."""
        blob = b"".join(
            np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.params.values()
        )
        header = {
            "config": self.config.to_dict(),
            "extras": extras or {},
            "tensors": [{"name": n, "shape": list(v.shape)} for n, v in self.params.items()],
            "blob_sha256": hashlib.sha256(blob).hexdigest(),
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return self.MAGIC + len(header_bytes).to_bytes(8, "big") + header_bytes + blob

    def save(self, path, extras: dict | None = None) -> str:
        """Write the artifact; returns its content-hash version id (12 hex chars)."""
        data = self.to_bytes(extras)
        with open(path, "wb") as fh:
            fh.write(data)
        return hashlib.sha256(data).hexdigest()[:12]

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["MtFusionNet", dict]:
        if not data.startswith(cls.MAGIC):
            raise InvalidConfig("not a model artifact (bad magic)")
        offset = len(cls.MAGIC)
        header_len = int.from_bytes(data[offset:offset + 8], "big")
        offset += 8
        header = json.loads(data[offset:offset + header_len].decode())
        offset += header_len
        blob = data[offset:]
        if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
            raise InvalidConfig("model artifact corrupt: tensor hash mismatch")
        model = cls(ModelConfig.from_dict(header["config"]))
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            tensor = np.frombuffer(blob[:size * 8], dtype="<f8").reshape(shape)
            blob = blob[size * 8:]
            model.params[entry["name"]] = tensor.astype(np.float64)
        return model, header["extras"]

    @classmethod
    def load(cls, path) -> tuple["MtFusionNet", dict]:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
