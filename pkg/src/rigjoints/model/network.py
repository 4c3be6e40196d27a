"""Joint localization network: dynamic-graph EdgeConv backbone with a convex-combination head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from ..geometry import PointCloud, knn_self
from ..numcore import (
    ContractError,
    DimensionError,
    ParamInit,
    RunningStats,
    Tensor,
    batch_norm_points,
    concat_features,
    gather_rows,
    leaky_relu,
    linear,
    make_output,
    matmul,
    neighbor_max_pool,
    softmax_over_points,
    squared_error_sum,
    sub,
    transpose,
)
from ..numcore.ops import BN_EPS, BN_MOMENTUM

LEAKY_SLOPE = 0.2


@dataclass
class ModelConfig:
    k_neighbors: int = 80
    edge_widths: tuple[int, ...] = (64, 64, 128, 256)
    mlp_width: int = 512
    joint_count: int = 69
    use_normals: bool = True
    leaky_slope: float = LEAKY_SLOPE
    bn_momentum: float = BN_MOMENTUM
    bn_eps: float = BN_EPS
    first_exclude_self: bool = True

    def __post_init__(self):
        self.edge_widths = tuple(int(w) for w in self.edge_widths)
        if self.k_neighbors < 1 or self.joint_count < 1 or not self.edge_widths:
            raise ContractError("k_neighbors, joint_count and edge_widths must be positive")

    @property
    def in_width(self) -> int:
        return 6 if self.use_normals else 3

    def layer_plan(self) -> list[tuple[int, int]]:
        """(F_in, F_out) for each EdgeConv stage."""
        widths = (self.in_width,) + self.edge_widths
        return list(zip(widths[:-1], widths[1:]))

    @property
    def concat_width(self) -> int:
        return sum(self.edge_widths)

    def to_json(self) -> dict:
        d = asdict(self)
        d["edge_widths"] = list(self.edge_widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def edge_features(x: Tensor, nbrs: np.ndarray) -> Tensor:
    """``N x k x 2F`` edge tensor with entries ``(x_i, x_j - x_i)``."""
    nbrs = np.asarray(nbrs, dtype=np.intp)
    if nbrs.ndim != 2 or nbrs.shape[0] != x.shape[0]:
        raise DimensionError(f"neighbor matrix {nbrs.shape} does not match {x.shape[0]} points")
    n, k = nbrs.shape
    xj = gather_rows(x, nbrs)
    xi = gather_rows(x, np.repeat(np.arange(n)[:, None], k, axis=1))
    return concat_features([xi, sub(xj, xi)])


def edgeconv_reference(x: Tensor, nbrs: np.ndarray, weight: Tensor, bias: Tensor, gamma: Tensor, beta: Tensor,
                       stats: RunningStats, mode: str = "train", slope: float = LEAKY_SLOPE) -> Tensor:
    """Composition of the primitive ops; materializes all ``N k`` edges."""
    e = edge_features(x, nbrs)
    h = leaky_relu(batch_norm_points(linear(e, weight, bias), gamma, beta, stats, mode), slope)
    return neighbor_max_pool(h)


def edgeconv_fused(x: Tensor, nbrs: np.ndarray, weight: Tensor, bias: Tensor, gamma: Tensor, beta: Tensor,
                   stats: RunningStats, mode: str = "train", slope: float = LEAKY_SLOPE) -> Tensor:
    """Same result as :func:`edgeconv_reference` without materializing edge tensors.

    The edge pre-activation splits as ``z_ij = P_i + Q_{n_ij}`` with
    ``P = x (W_top - W_bot) + b`` and ``Q = x W_bot``. Batch statistics over
    all edges follow in closed form from neighbor counts, and since normalization followed by
    leaky ReLU is monotone per feature, the pooled edge is the argmax of
    ``sign(gamma) * z``. Gradients are assembled from sparse neighbor counts.
    """
    nbrs = np.asarray(nbrs, dtype=np.intp)
    n, f = x.shape
    if nbrs.ndim != 2 or nbrs.shape[0] != n:
        raise DimensionError(f"neighbor matrix {nbrs.shape} does not match {n} points")
    if weight.shape[0] != 2 * f or bias.shape != (weight.shape[1],):
        raise DimensionError(f"edgeconv weight {weight.shape} does not fit input width {f}")
    k = nbrs.shape[1]
    fo = weight.shape[1]
    w_top, w_bot = weight.data[:f], weight.data[f:]
    w_diff = w_top - w_bot
    P = x.data @ w_diff + bias.data
    Q = x.data @ w_bot
    sign = np.where(gamma.data < 0, -1.0, 1.0)
    flat = gamma.data == 0
    m = n * k
    counts = np.bincount(nbrs.ravel(), minlength=n).astype(np.float64)
    # neighbor count matrix; duplicate entries in a row add up in products
    adj = sp.csr_matrix((np.ones(m), nbrs.ravel(), np.arange(0, m + 1, k)), shape=(n, n))

    if mode == "train":
        if m < 2:
            raise ContractError("batch norm in train mode needs at least 2 rows (degenerate batch)")
        p_bar = P.mean(axis=0)
        q_bar = (counts @ Q) / m
        mu = p_bar + q_bar
        pc, qc = P - p_bar, Q - q_bar
        ssq = k * np.einsum("if,if->f", pc, pc) + 2.0 * np.einsum("if,if->f", pc, adj @ qc) + counts @ (qc * qc)
    elif mode == "eval":
        mu = stats.mean
    else:
        raise ContractError(f"unknown batch norm mode {mode!r}")

    # running argmax of sign(gamma) * z over the neighbor slots; strict > keeps the first
    ps, qs = P * sign, Q * sign
    nbrs_t = np.ascontiguousarray(nbrs.T)
    best = ps + qs.take(nbrs_t[0], axis=0)
    sel = np.zeros((n, fo), dtype=np.intp)
    for j in range(1, k):
        zj = ps + qs.take(nbrs_t[j], axis=0)
        upd = zj > best
        best = np.maximum(best, zj)
        sel[upd] = j
    sel[:, flat] = 0

    if mode == "train":
        var = ssq / m
        stats.update(mu, var * m / (m - 1))
    else:
        var = stats.var
    sigma = np.sqrt(var + stats.eps)
    cols = np.arange(fo)
    n_sel = nbrs[np.arange(n)[:, None], sel]
    z_sel = P + Q[n_sel, cols]
    zhat = (z_sel - mu) / sigma
    y = zhat * gamma.data + beta.data
    pos = y >= 0
    out = np.where(pos, y, slope * y)

    def back(g):
        d_sel = np.where(pos, g, slope * g)
        g_gamma = (d_sel * zhat).sum(axis=0)
        g_beta = d_sel.sum(axis=0)
        dzh = d_sel * gamma.data
        scatter = np.bincount((n_sel * fo + cols).ravel(), weights=dzh.ravel(), minlength=n * fo).reshape(n, fo)
        if mode == "train":
            m1 = dzh.sum(axis=0) / m
            m2 = (dzh * zhat).sum(axis=0) / m
            row_zsum = (k * P + adj @ Q - k * mu) / sigma
            col_zsum = (adj.T @ P + counts[:, None] * (Q - mu)) / sigma
            dP = (dzh - k * m1 - m2 * row_zsum) / sigma
            dQ = (scatter - counts[:, None] * m1 - m2 * col_zsum) / sigma
        else:
            dP = dzh / sigma
            dQ = scatter / sigma
        gx = dP @ w_diff.T + dQ @ w_bot.T if x.requires_grad else None
        gw = np.vstack([x.data.T @ dP, x.data.T @ (dQ - dP)])
        return gx, gw, dP.sum(axis=0), g_gamma, g_beta

    return make_output(out, "edgeconv", (x, weight, bias, gamma, beta), back)


@dataclass
class ForwardResult:
    coefficients: Tensor  # N x J convex weights
    joints: Tensor  # J x 3
    widths: list[int] = field(default_factory=list)


class JointLocalizer:
    """Four EdgeConv stages, shared MLP, linear head and per-joint softmax.

    Parameters live in ``params`` (name -> Tensor), normalization statistics
    in ``stats``. ``fused=False`` routes EdgeConv through the primitive ops.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, fused: bool = True):
        self.config = config or ModelConfig()
        self.seed = seed
        self.fused = fused
        self.mode = "train"
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, RunningStats] = {}
        init = ParamInit(seed)
        c = self.config
        for i, (fi, fo) in enumerate(c.layer_plan()):
            self._block(init, f"edge{i}", 2 * fi, fo)
        self._block(init, "mlp", c.concat_width, c.mlp_width)
        self.params["head.weight"] = init.weight(c.mlp_width, c.joint_count, "head.weight")
        self.params["head.bias"] = init.bias(c.joint_count, "head.bias")

    def _block(self, init: ParamInit, name: str, fi: int, fo: int) -> None:
        c = self.config
        self.params[f"{name}.weight"] = init.weight(fi, fo, f"{name}.weight")
        self.params[f"{name}.bias"] = init.bias(fo, f"{name}.bias")
        self.params[f"{name}.gamma"] = init.ones(fo, f"{name}.gamma")
        self.params[f"{name}.beta"] = init.bias(fo, f"{name}.beta")
        self.stats[name] = RunningStats.fresh(fo, c.bn_momentum, c.bn_eps)

    def train(self) -> "JointLocalizer":
        self.mode = "train"
        return self

    def eval(self) -> "JointLocalizer":
        self.mode = "eval"
        return self

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _edge(self, i: int, x: Tensor, nbrs: np.ndarray) -> Tensor:
        p = self.params
        name = f"edge{i}"
        op = edgeconv_fused if self.fused else edgeconv_reference
        return op(x, nbrs, p[f"{name}.weight"], p[f"{name}.bias"], p[f"{name}.gamma"], p[f"{name}.beta"],
                  self.stats[name], self.mode, self.config.leaky_slope)

    def input_features(self, cloud: PointCloud) -> np.ndarray:
        if self.config.use_normals and cloud.normals is None:
            raise ContractError("model expects normals but the cloud has none")
        return cloud.features(self.config.use_normals)

    def forward(self, cloud: PointCloud) -> ForwardResult:
        c = self.config
        n = len(cloud)
        if n <= c.k_neighbors:
            raise ContractError(f"cloud has {n} points but the model needs more than k={c.k_neighbors}; "
                                "use a denser cloud or a smaller k_neighbors")
        pts = Tensor(cloud.points, name="points")
        x = Tensor(self.input_features(cloud), name="features")
        stages = []
        nbrs = knn_self(cloud.points, c.k_neighbors, exclude_self=c.first_exclude_self)
        for i in range(len(c.edge_widths)):
            if i > 0:
                nbrs = knn_self(x.data, c.k_neighbors, exclude_self=False)
            x = self._edge(i, x, nbrs)
            stages.append(x)
        p = self.params
        h = concat_features(stages)
        h = leaky_relu(batch_norm_points(linear(h, p["mlp.weight"], p["mlp.bias"]), p["mlp.gamma"], p["mlp.beta"],
                                         self.stats["mlp"], self.mode), c.leaky_slope)
        logits = linear(h, p["head.weight"], p["head.bias"])
        coeffs = softmax_over_points(logits)
        joints = matmul(transpose(coeffs), pts)
        return ForwardResult(coeffs, joints, [s.shape[1] for s in stages] + [h.shape[1]])

    __call__ = forward

    def predict(self, cloud: PointCloud) -> np.ndarray:
        """J x 3 joints in eval mode without touching the training state."""
        prev = self.mode
        self.mode = "eval"
        try:
            return self.forward(cloud).joints.data.copy()
        finally:
            self.mode = prev

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array that defines the model: parameters and running statistics."""
        out = {name: t.data for name, t in self.params.items()}
        for name, st in self.stats.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.shape:
                raise ContractError(f"parameter {name}: stored shape {arrays[name].shape} != model shape {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)
        for name, st in self.stats.items():
            st.mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            st.var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)


def joint_loss(pred: Tensor, gt) -> Tensor:
    """Sum over joints of the squared Euclidean distance."""
    gt_shape = np.shape(gt.data if isinstance(gt, Tensor) else gt)
    if pred.shape != gt_shape:
        raise ContractError(f"prediction {pred.shape} and groundtruth {gt_shape} joint sets differ")
    return squared_error_sum(pred, gt)
