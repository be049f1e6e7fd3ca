"""Three small implicit-network archetypes with hand-written gradients.

* ``GlobalMLP``   - a per-shape global code concatenated to ``p``, then an MLP.
* ``GridInterp``  - a per-shape ``G^3 x F`` feature grid sampled by trilinear
  interpolation at ``p``; ``p`` and the feature go through an MLP.
* ``AutoDecoder`` - a per-shape latent vector optimized jointly with the
  decoder, and refit with the decoder frozen at generation time.

All parameters live in one flat float64 vector; named segments are views into
it.  The per-shape table (code, grid or latent) is always the first segment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .._rng import as_generator
from ..fields import FieldKind

ARCHETYPES = ("GlobalMLP", "GridInterp", "AutoDecoder")

_TABLE_SEGMENT = {"GlobalMLP": "code", "GridInterp": "grid", "AutoDecoder": "latent"}


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    archetype: str
    kind: str = "occ"
    hidden: tuple = ()
    feature_dim: int = 0
    grid_size: int = 16
    n_shapes: int = 1
    activation: str = "softplus"
    softplus_beta: float = 100.0
    feature_init_std: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.archetype not in ARCHETYPES:
            raise ModelConfigError(f"unknown archetype {self.archetype!r}")
        if not self.hidden or min(self.hidden) <= 0:
            raise ModelConfigError("hidden layer widths must be positive")
        if self.feature_dim <= 0 or self.n_shapes <= 0:
            raise ModelConfigError("feature_dim and n_shapes must be positive")
        if self.archetype == "GridInterp" and self.grid_size < 2:
            raise ModelConfigError("grid_size must be at least 2")
        if self.activation not in ("softplus", "relu", "tanh"):
            raise ModelConfigError(f"unknown activation {self.activation!r}")
        FieldKind.parse(self.kind)

    @property
    def field_kind(self) -> FieldKind:
        return FieldKind.parse(self.kind)

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [3 + self.feature_dim, *self.hidden, 1]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def default_config(archetype: str, kind="occ", n_shapes: int = 1, **overrides) -> ArchConfig:
    """Standard toy sizes for each archetype."""
    kind = str(kind)
    base = {
        "GlobalMLP": dict(hidden=(64, 64, 64), feature_dim=16),
        "GridInterp": dict(hidden=(64, 64), feature_dim=8, grid_size=16),
        "AutoDecoder": dict(hidden=(128, 128, 128), feature_dim=32),
    }
    if archetype not in base:
        raise ModelConfigError(f"unknown archetype {archetype!r}")
    cfg = dict(base[archetype], archetype=archetype, kind=kind, n_shapes=n_shapes)
    cfg.update(overrides)
    return ArchConfig(**cfg)


def _segment_shapes(cfg: ArchConfig) -> list[tuple[str, tuple]]:
    if cfg.archetype == "GridInterp":
        g = cfg.grid_size
        table = (cfg.n_shapes, g, g, g, cfg.feature_dim)
    else:
        table = (cfg.n_shapes, cfg.feature_dim)
    segs = [(_TABLE_SEGMENT[cfg.archetype], table)]
    for i, (fan_in, fan_out) in enumerate(cfg.layer_dims):
        segs += [(f"W{i}", (fan_in, fan_out)), (f"b{i}", (fan_out,))]
    return segs


def _layout(cfg: ArchConfig) -> dict[str, tuple[int, tuple]]:
    out, off = {}, 0
    for name, shape in _segment_shapes(cfg):
        out[name] = (off, shape)
        off += int(np.prod(shape))
    return out


def parameter_count(cfg: ArchConfig, include_table: bool = True) -> int:
    lay = _layout(cfg)
    total = sum(int(np.prod(s)) for _, s in lay.values())
    if not include_table:
        total -= int(np.prod(lay[_TABLE_SEGMENT[cfg.archetype]][1]))
    return total


@dataclass(eq=False)
class ToyModel:
    config: ArchConfig
    params: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        self._layout = _layout(self.config)
        if self.params.size != parameter_count(self.config):
            raise ModelConfigError(
                f"parameter vector has {self.params.size} entries, architecture needs {parameter_count(self.config)}"
            )

    @property
    def archetype(self) -> str:
        return self.config.archetype

    @property
    def kind(self) -> FieldKind:
        return self.config.field_kind

    @property
    def table_name(self) -> str:
        return _TABLE_SEGMENT[self.archetype]

    @property
    def n_layers(self) -> int:
        return len(self.config.layer_dims)

    def segment(self, name: str, params: np.ndarray | None = None) -> np.ndarray:
        off, shape = self._layout[name]
        src = self.params if params is None else params
        return src[off : off + int(np.prod(shape))].reshape(shape)

    def segment_slice(self, name: str) -> slice:
        off, shape = self._layout[name]
        return slice(off, off + int(np.prod(shape)))

    @property
    def table(self) -> np.ndarray:
        return self.segment(self.table_name)

    def decoder_slice(self) -> slice:
        """Everything after the per-shape table."""
        return slice(self.segment_slice(self.table_name).stop, self.params.size)

    def copy(self, params: np.ndarray | None = None) -> "ToyModel":
        return ToyModel(self.config, (self.params if params is None else params).copy(), dict(self.provenance))

    def with_kind(self, kind) -> "ToyModel":
        return ToyModel(replace(self.config, kind=str(kind)), self.params.copy(), dict(self.provenance))


def init_model(config: ArchConfig, rng) -> ToyModel:
    """Uniform(+-1/sqrt(fan_in)) layers; per-shape tables ~ N(0, feature_init_std^2)."""
    rng = as_generator(rng)
    model = ToyModel(config, np.zeros(parameter_count(config)))
    table = model.segment(model.table_name)
    table[...] = rng.normal(scale=config.feature_init_std, size=table.shape)
    for i, (fan_in, _) in enumerate(config.layer_dims):
        bound = 1.0 / np.sqrt(fan_in)
        for name in (f"W{i}", f"b{i}"):
            seg = model.segment(name)
            seg[...] = rng.uniform(-bound, bound, size=seg.shape)
    return model


# ----------------------------------------------------------------------------
# Trilinear interpolation
# ----------------------------------------------------------------------------

_CORNERS = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)])


def trilinear_weights(P: np.ndarray, grid_size: int):
    """Lattice cell indices, fractional offsets and the 8 corner weights for ``P``.

    The lattice has ``grid_size`` vertices per axis spanning ``[-0.5, 0.5]``.
    Returns ``(base (N,3) int, frac (N,3), weights (N,8))``.
    """
    u = (P + 0.5) * (grid_size - 1)
    base = np.clip(np.floor(u).astype(np.int64), 0, grid_size - 2)
    frac = u - base
    wx = np.stack([1.0 - frac, frac], axis=-1)  # (N, 3, 2)
    w = wx[:, 0, _CORNERS[:, 0]] * wx[:, 1, _CORNERS[:, 1]] * wx[:, 2, _CORNERS[:, 2]]
    return base, frac, w


def _corner_rows(base, shape_ids, g):
    """Flat row index into a ``(S*G^3, F)`` view for each of the 8 corners."""
    c = base[:, None, :] + _CORNERS[None, :, :]
    return ((shape_ids[:, None] * g + c[..., 0]) * g + c[..., 1]) * g + c[..., 2]


def trilinear(grid: np.ndarray, P: np.ndarray, shape_ids=None) -> np.ndarray:
    """Interpolate ``grid`` of shape ``(S, G, G, G, F)`` (or ``(G, G, G, F)``) at ``P``."""
    if grid.ndim == 4:
        grid = grid[None]
    g, f = grid.shape[1], grid.shape[-1]
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    sid = np.zeros(len(P), dtype=np.int64) if shape_ids is None else np.asarray(shape_ids)
    base, _, w = trilinear_weights(P, g)
    rows = _corner_rows(base, sid, g)
    flat = grid.reshape(-1, f)
    return np.einsum("nk,nkf->nf", w, flat[rows])


# ----------------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------------


def _act(cfg: ArchConfig, z):
    if cfg.activation == "relu":
        return np.maximum(z, 0.0)
    if cfg.activation == "tanh":
        return np.tanh(z)
    b = cfg.softplus_beta
    return np.logaddexp(0.0, b * z) / b


def _act_grad(cfg: ArchConfig, z, a):
    if cfg.activation == "relu":
        return (z > 0).astype(z.dtype)
    if cfg.activation == "tanh":
        return 1.0 - a * a
    return 0.5 * (1.0 + np.tanh(0.5 * cfg.softplus_beta * z))  # logistic(beta*z)


def clamp_to_box(P):
    """Clip points into ``[-0.5, 0.5]^3``; also returns which rows moved."""
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    C = np.clip(P, -0.5, 0.5)
    return C, np.any(C != P, axis=1)


def _shape_ids(model: ToyModel, shape_ids, n):
    if shape_ids is None:
        shape_ids = 0
    sid = np.broadcast_to(np.asarray(shape_ids, dtype=np.int64), (n,))
    if n and (sid.min() < 0 or sid.max() >= model.config.n_shapes):
        raise IndexError(f"shape id out of range for a model with {model.config.n_shapes} shape(s)")
    return sid


def _features(model: ToyModel, params, P, sid, latent):
    cfg = model.config
    if latent is not None:
        z = np.asarray(latent, dtype=np.float64).reshape(-1, cfg.feature_dim)
        return np.broadcast_to(z, (len(P), cfg.feature_dim)), None
    table = model.segment(model.table_name, params)
    if cfg.archetype != "GridInterp":
        return table[sid], None
    g = cfg.grid_size
    base, frac, w = trilinear_weights(P, g)
    rows = _corner_rows(base, sid, g)
    corner_feats = table.reshape(-1, cfg.feature_dim)[rows]  # (N, 8, F)
    return np.einsum("nk,nkf->nf", w, corner_feats), (base, frac, w, rows, corner_feats)


def _forward(model: ToyModel, params, P, sid, latent):
    cfg = model.config
    feat, tri = _features(model, params, P, sid, latent)
    x = np.concatenate([P, feat], axis=1)
    pre, post = [], [x]
    h = x
    for i in range(model.n_layers):
        z = h @ model.segment(f"W{i}", params) + model.segment(f"b{i}", params)
        pre.append(z)
        if i < model.n_layers - 1:
            h = _act(cfg, z)
            post.append(h)
    y = pre[-1][:, 0]
    return y, {"pre": pre, "post": post, "tri": tri, "sid": sid, "latent": latent is not None}


def head(kind: FieldKind, y: np.ndarray) -> np.ndarray:
    """Map the raw linear output to the implicit-function value."""
    if kind.name == "occ":
        return 0.5 * (1.0 + np.tanh(0.5 * y))
    if kind.name == "udf":
        return np.abs(y)
    return y


def raw_output(model: ToyModel, P, shape_ids=None, latent=None, params=None):
    P, _ = clamp_to_box(P)
    sid = _shape_ids(model, shape_ids, len(P))
    y, _ = _forward(model, model.params if params is None else params, P, sid, latent)
    return y


def forward(model: ToyModel, P, shape_ids=None, latent=None, return_clamped: bool = False):
    """Head output for query points ``P``.

    Points outside the box are clamped onto it first; with
    ``return_clamped=True`` the per-point clamp flags are also returned.
    ``latent`` overrides the per-shape table row (GlobalMLP/AutoDecoder).
    """
    P = np.asarray(P, dtype=np.float64)
    single = P.ndim == 1
    Pc, clamped = clamp_to_box(P)
    if latent is not None and model.archetype == "GridInterp":
        raise ModelConfigError("GridInterp has no latent vector to override")
    sid = _shape_ids(model, shape_ids, len(Pc))
    y, _ = _forward(model, model.params, Pc, sid, latent)
    out = head(model.kind, y)
    if single:
        out = float(out[0])
        clamped = bool(clamped[0])
    return (out, clamped) if return_clamped else out


def predict(model: ToyModel, P, shape_ids=None, latent=None):
    """Implicit-function estimate: the head output, clamped to ``[-t, t]`` for TSDF.

    The TSDF loss only sees clamped values, so a raw output beyond the
    truncation carries no meaning of its own.
    """
    out = forward(model, P, shape_ids, latent)
    if model.kind.name == "tsdf":
        t = model.kind.truncation
        out = np.clip(out, -t, t) if isinstance(out, np.ndarray) else min(max(out, -t), t)
    return out


def _backward(model: ToyModel, params, P, cache, dy, want_input: bool = False):
    """Gradient of ``sum(dy * y)`` w.r.t. the parameters, the features and optionally ``P``."""
    cfg = model.config
    grad = np.zeros_like(params)
    pre, post = cache["pre"], cache["post"]
    g = dy[:, None]
    for i in reversed(range(model.n_layers)):
        grad[model.segment_slice(f"W{i}")] = (post[i].T @ g).ravel()
        grad[model.segment_slice(f"b{i}")] = g.sum(axis=0)
        g = g @ model.segment(f"W{i}", params).T
        if i > 0:
            g = g * _act_grad(cfg, pre[i - 1], post[i])
    dP = g[:, :3].copy()
    dfeat = g[:, 3:]
    if not cache["latent"]:
        tslice = model.segment_slice(model.table_name)
        if cfg.archetype == "GridInterp":
            base, frac, w, rows, corner_feats = cache["tri"]
            contrib = w[:, :, None] * dfeat[:, None, :]  # (N, 8, F)
            gt = np.zeros((cfg.n_shapes * cfg.grid_size**3, cfg.feature_dim))
            np.add.at(gt, rows.ravel(), contrib.reshape(-1, cfg.feature_dim))
            grad[tslice] = gt.ravel()
            if want_input:
                s = cfg.grid_size - 1
                fx = np.stack([1.0 - frac, frac], axis=-1)
                sign = np.array([-1.0, 1.0])
                proj = np.einsum("nkf,nf->nk", corner_feats, dfeat)  # dL/dw_k
                for ax in range(3):
                    others = [a for a in range(3) if a != ax]
                    dw = (
                        sign[_CORNERS[:, ax]][None, :]
                        * fx[:, others[0], _CORNERS[:, others[0]]]
                        * fx[:, others[1], _CORNERS[:, others[1]]]
                        * s
                    )
                    dP[:, ax] += np.einsum("nk,nk->n", dw, proj)
        else:
            gt = np.zeros((cfg.n_shapes, cfg.feature_dim))
            np.add.at(gt, cache["sid"], dfeat)
            grad[tslice] = gt.ravel()
    return grad, dfeat, dP


# ----------------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------------


class NaNInputError(ValueError):
    pass


def loss(kind: FieldKind, pred, target) -> float:
    """Mean loss on head outputs.

    Occ: binary cross-entropy.  SDF/UDF: L1.  TSDF: L1 after clamping both
    prediction and target to ``[-t, t]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("pred and target differ in shape")
    if np.isnan(pred).any() or np.isnan(target).any():
        raise NaNInputError("loss inputs contain NaN")
    if pred.size == 0:
        return 0.0
    if kind.name == "occ":
        p = np.clip(pred, 1e-12, 1 - 1e-12)
        return float(-np.mean(target * np.log(p) + (1 - target) * np.log1p(-p)))
    if kind.name == "tsdf":
        t = kind.truncation
        return float(np.mean(np.abs(np.clip(pred, -t, t) - np.clip(target, -t, t))))
    return float(np.mean(np.abs(pred - target)))


def _loss_and_dy(kind: FieldKind, y, target):
    """Loss from raw outputs ``y`` and its gradient w.r.t. ``y`` (already /N)."""
    n = max(len(y), 1)
    if kind.name == "occ":
        val = np.mean(np.logaddexp(0.0, y) - target * y) if len(y) else 0.0
        return float(val), (head(kind, y) - target) / n
    if kind.name == "sdf":
        r = y - target
        return float(np.mean(np.abs(r))) if len(y) else 0.0, np.sign(r) / n
    if kind.name == "tsdf":
        t = kind.truncation
        r = np.clip(y, -t, t) - np.clip(target, -t, t)
        live = (y > -t) & (y < t)
        return float(np.mean(np.abs(r))) if len(y) else 0.0, np.sign(r) * live / n
    r = np.abs(y) - target
    return float(np.mean(np.abs(r))) if len(y) else 0.0, np.sign(r) * np.sign(y) / n


def objective(model: ToyModel, P, target, shape_ids=None, params=None, latent=None, latent_reg: float = 0.0):
    """Training objective and its full gradient vector on one batch.

    ``latent_reg`` adds ``latent_reg * mean ||z||^2`` over the batch's rows.
    With ``latent`` given, the third return value is the gradient w.r.t. it.
    """
    params = model.params if params is None else params
    P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n = len(P)
    if n == 0:
        dz = None if latent is None else np.zeros(model.config.feature_dim)
        return 0.0, np.zeros_like(params), dz
    sid = _shape_ids(model, shape_ids, n)
    y, cache = _forward(model, params, P, sid, latent)
    val, dy = _loss_and_dy(model.kind, y, target)
    grad, dfeat, _ = _backward(model, params, P, cache, dy)
    dz = None
    if latent is not None:
        z = np.asarray(latent, dtype=np.float64).reshape(-1)
        dz = dfeat.sum(axis=0)
        if latent_reg:
            val += latent_reg * float(z @ z)
            dz = dz + 2.0 * latent_reg * z
    elif latent_reg and model.archetype == "AutoDecoder":
        table = model.segment("latent", params)
        rows = table[sid]
        val += latent_reg * float(np.mean(np.sum(rows * rows, axis=1)))
        gt = np.zeros_like(table)
        np.add.at(gt, sid, 2.0 * latent_reg * rows / n)
        grad[model.segment_slice("latent")] += gt.ravel()
    return val, grad, dz


def backward(model: ToyModel, P, target, shape_ids=None, latent_reg: float = 0.0) -> np.ndarray:
    """Exact gradient of :func:`objective` w.r.t. the flat parameter vector."""
    return objective(model, P, target, shape_ids, latent_reg=latent_reg)[1]


def value_and_input_grad(model: ToyModel, P, shape_ids=None, latent=None):
    """Head value and its gradient w.r.t. the query coordinates."""
    P, _ = clamp_to_box(P)
    sid = _shape_ids(model, shape_ids, len(P))
    y, cache = _forward(model, model.params, P, sid, latent)
    out = head(model.kind, y)
    if model.kind.name == "occ":
        dhead = out * (1.0 - out)
    elif model.kind.name == "udf":
        dhead = np.sign(y)
    else:
        dhead = np.ones_like(y)
    _, _, dP = _backward(model, model.params, P, cache, dhead, want_input=True)
    return out, dP
