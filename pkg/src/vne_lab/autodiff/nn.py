"""Layers, optimizer and checkpoint I/O on top of :mod:`vne_lab.autodiff.tensor`."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .tensor import Tensor, gather_rows, masked_softmax


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def xavier_normal(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape or (fan_in, fan_out))


class Module:
    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        seen, out = set(), []
        for _, p in self.named_parameters():
            if id(p) in seen:
                raise ValueError("parameter registered twice")
            seen.add(id(p))
            out.append(p)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng, bias: bool = True):
        self.weight = Parameter(xavier_normal(rng, fan_in, fan_out))
        self.bias = Parameter(np.zeros(fan_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """``n_layers`` linear maps with ELU between them (none after the last)."""

    def __init__(self, fan_in: int, hidden: int, fan_out: int, rng, n_layers: int = 3):
        dims = [fan_in] + [hidden] * (n_layers - 1) + [fan_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.elu()
        return x


class GRUCell(Module):
    def __init__(self, input_dim: int, hidden_dim: int, rng):
        self.hidden_dim = hidden_dim
        self.w_x = Linear(input_dim, 3 * hidden_dim, rng)
        self.w_h = Linear(hidden_dim, 3 * hidden_dim, rng)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        d = self.hidden_dim
        gx = self.w_x(x)
        gh = self.w_h(h)
        r = (gx[..., :d] + gh[..., :d]).sigmoid()
        z = (gx[..., d:2 * d] + gh[..., d:2 * d]).sigmoid()
        n = (gx[..., 2 * d:] + r * gh[..., 2 * d:]).tanh()
        return (1.0 - z) * n + z * h


class GraphBatch:
    """Padded batch of graphs sharing a node count.

    ``x`` (B, N, F) node features; ``edge_feat`` (B, S, Fe) per-slot link
    features where slot ``S-1`` is the zero feature used by self-loops and
    padding; ``edge_index`` (B, N, N) slot of each ordered pair;
    ``adj`` (B, N, N) neighbourhood incl. self-loops; ``node_mask`` (B, N).
    """

    def __init__(self, x, edge_feat, edge_index, adj, node_mask):
        self.x = x
        self.edge_feat = edge_feat
        self.edge_index = edge_index
        self.adj = adj
        self.node_mask = node_mask

    @property
    def batch_size(self) -> int:
        return self.edge_index.shape[0]

    @classmethod
    def from_graphs(cls, node_feats, links_list, link_feats, n_pad: int | None = None) -> "GraphBatch":
        """Build from per-graph ``(n_i, F)`` node features, ``(m_i, 2)`` links, ``(m_i, Fe)`` link features."""
        bsz = len(node_feats)
        n_pad = n_pad or max(len(f) for f in node_feats)
        m_pad = max((len(l) for l in links_list), default=0)
        f_dim = node_feats[0].shape[1]
        fe_dim = link_feats[0].shape[1] if len(link_feats) and link_feats[0].ndim == 2 else 1
        x = np.zeros((bsz, n_pad, f_dim))
        ef = np.zeros((bsz, m_pad + 1, fe_dim))
        eidx = np.full((bsz, n_pad, n_pad), m_pad, dtype=np.int64)
        adj = np.zeros((bsz, n_pad, n_pad), dtype=bool)
        mask = np.zeros((bsz, n_pad), dtype=bool)
        diag = np.arange(n_pad)
        for b, (nf, links, lf) in enumerate(zip(node_feats, links_list, link_feats)):
            n = len(nf)
            x[b, :n] = nf
            mask[b, :n] = True
            adj[b, diag, diag] = True
            m = len(links)
            if m:
                links = np.asarray(links)
                ef[b, :m] = np.asarray(lf).reshape(m, fe_dim)
                eidx[b, links[:, 0], links[:, 1]] = np.arange(m)
                eidx[b, links[:, 1], links[:, 0]] = np.arange(m)
                adj[b, links[:, 0], links[:, 1]] = True
                adj[b, links[:, 1], links[:, 0]] = True
        return cls(x, ef, eidx, adj, mask)

    @classmethod
    def shared_topology(cls, x, links, link_feat, n_nodes: int) -> "GraphBatch":
        """Batch of B states on one topology: ``x`` (B, N, F), ``link_feat`` (B, M, Fe)."""
        x = np.asarray(x)
        bsz = x.shape[0]
        links = np.asarray(links).reshape(-1, 2)
        m = len(links)
        lf = np.asarray(link_feat).reshape(bsz, m, -1)
        ef = np.concatenate([lf, np.zeros((bsz, 1, lf.shape[2]))], axis=1)
        eidx = np.full((n_nodes, n_nodes), m, dtype=np.int64)
        adj = np.eye(n_nodes, dtype=bool)
        if m:
            eidx[links[:, 0], links[:, 1]] = np.arange(m)
            eidx[links[:, 1], links[:, 0]] = np.arange(m)
            adj[links[:, 0], links[:, 1]] = True
            adj[links[:, 1], links[:, 0]] = True
        eidx = np.broadcast_to(eidx, (bsz, n_nodes, n_nodes))
        adj = np.broadcast_to(adj, (bsz, n_nodes, n_nodes))
        return cls(x, ef, eidx, adj, np.ones((bsz, n_nodes), dtype=bool))


class EdgeAwareGatLayer(Module):
    """Attention over ``[h_i || h_j || h_ij]`` with initial residual and identity mapping.

    ``out = ELU( ((1-alpha) * sum_j att_ij h_j + alpha * h0_i) @ ((1-beta) I + beta W) )``
    """

    def __init__(self, dim: int, edge_dim: int, rng, alpha: float = 0.2, beta: float = 0.2,
                 mlp_layers: int = 3):
        self.alpha = alpha
        self.beta = beta
        self.W = Parameter(xavier_normal(rng, dim, dim))
        # W_a split into the three blocks of the concatenation
        self.att_src = Parameter(xavier_normal(rng, 3 * dim, 1, (dim,)))
        self.att_dst = Parameter(xavier_normal(rng, 3 * dim, 1, (dim,)))
        self.att_edge = Parameter(xavier_normal(rng, 3 * dim, 1, (dim,)))
        self.edge_mlp = MLP(edge_dim, dim, dim, rng, n_layers=mlp_layers)

    def attention(self, h: Tensor, g: GraphBatch) -> Tensor:
        s_i = h @ self.att_src                                # (B, N)
        s_j = h @ self.att_dst                                # (B, N)
        s_e = self.edge_mlp(Tensor(g.edge_feat)) @ self.att_edge   # (B, S)
        scores = s_i.expand_dims(-1) + s_j.expand_dims(-2) + gather_rows(s_e, g.edge_index)
        return masked_softmax(scores.leaky_relu(0.2), g.adj, axis=-1)

    def forward(self, h: Tensor, h0: Tensor, g: GraphBatch) -> Tensor:
        att = self.attention(h, g)
        z = (1.0 - self.alpha) * (att @ h) + self.alpha * h0
        return ((1.0 - self.beta) * z + self.beta * (z @ self.W)).elu()


class EdgeAwareGNN(Module):
    def __init__(self, node_dim: int, edge_dim: int, dim: int, rng, n_layers: int = 5,
                 alpha: float = 0.2, beta: float = 0.2, mlp_layers: int = 3):
        self.inp = Linear(node_dim, dim, rng)
        self.layers = [EdgeAwareGatLayer(dim, edge_dim, rng, alpha, beta, mlp_layers) for _ in range(n_layers)]

    def forward(self, g: GraphBatch) -> Tensor:
        h0 = self.inp(Tensor(g.x))
        h = h0
        for layer in self.layers:
            h = layer(h, h0, g)
        return h


class GapPooling(Module):
    """Attention pooling: ``c = ELU(mean(h) W)``, ``a_i = h_i . c``, ``g = sum_i a_i h_i``."""

    def __init__(self, dim: int, rng):
        self.W = Parameter(xavier_normal(rng, dim, dim))

    def forward(self, h: Tensor, node_mask=None) -> Tensor:
        if node_mask is None:
            mean = h.mean(axis=-2)
            hm = h
        else:
            m = np.asarray(node_mask, dtype=np.float64)[..., None]
            hm = h * m
            mean = hm.sum(axis=-2) / m.sum(axis=-2)
        c = (mean @ self.W).elu()                               # (B, d)
        a = (hm @ c.expand_dims(-1))                            # (B, N, 1)
        return (a * hm).sum(axis=-2)


def positional_encode(position: int, dim: int) -> np.ndarray:
    """Sinusoidal position embedding: sin on even slots, cos on odd slots."""
    k = np.arange(dim) // 2
    angle = position / np.power(10000.0, 2.0 * k / dim)
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


class Adam:
    """Adam with per-group learning rates and per-group grad-norm clipping."""

    def __init__(self, groups, betas=(0.9, 0.999), eps: float = 1e-8, max_grad_norm: float | None = None):
        # groups: list of (params, lr)
        self.groups = [(list(params), lr) for params, lr in groups]
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for ps, _ in self.groups for p in ps}
        self.v = {id(p): np.zeros_like(p.data) for ps, _ in self.groups for p in ps}

    def zero_grad(self) -> None:
        for ps, _ in self.groups:
            for p in ps:
                p.grad = None

    def step(self) -> list[float]:
        """Apply one update; returns the pre-clip gradient norm of each group."""
        self.t += 1
        norms = []
        for ps, lr in self.groups:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in ps]
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
            norms.append(norm)
            scale = 1.0
            if self.max_grad_norm is not None and norm > self.max_grad_norm:
                scale = self.max_grad_norm / (norm + 1e-12)
            for p, g in zip(ps, grads):
                adam_update(p.data, g * scale, self.m[id(p)], self.v[id(p)], self.t, lr,
                            self.b1, self.b2, self.eps)
        return norms


def adam_update(param, grad, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8) -> None:
    """In-place bias-corrected Adam step on ``param`` with moment buffers ``m``, ``v``."""
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(params, grads, lr, moments=None, betas=(0.9, 0.999), eps=1e-8):
    """Functional Adam: returns ``(new_params, moments)``; ``moments`` is ``(m, v, t)``."""
    params = [np.array(p, dtype=np.float64) for p in params]
    if moments is None:
        moments = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)
    m, v, t = moments
    m = [x.copy() for x in m]
    v = [x.copy() for x in v]
    t += 1
    for p, g, mi, vi in zip(params, grads, m, v):
        adam_update(p, np.asarray(g, dtype=np.float64), mi, vi, t, lr, betas[0], betas[1], eps)
    return params, (m, v, t)


# --------------------------------------------------------------------------
# checkpoints: flat float64 blob + JSON manifest
# --------------------------------------------------------------------------

def save_checkpoint(state: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"dtype": "float64", "byteorder": "little", "tensors": [], "meta": meta or {}}
    offset = 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f8")
            fh.write(arr.tobytes())
            manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset,
                                        "count": int(arr.size)})
            offset += arr.size
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    state = {}
    for t in manifest["tensors"]:
        state[t["name"]] = blob[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"]).astype(np.float64)
    return state, manifest.get("meta", {})
