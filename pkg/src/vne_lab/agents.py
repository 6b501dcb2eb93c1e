"""Admission-control (upper) and resource-allocation (lower) policies.

The upper policy reads the substrate and the arriving VNR and keeps a GRU
hidden state across the whole VNR stream. The lower policy is a seq2seq
model: a static GNN + positional encoder over the VNR, and a GRU decoder that
picks one physical node per virtual node with infeasible nodes masked out.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    MLP,
    EdgeAwareGNN,
    GapPooling,
    GraphBatch,
    GRUCell,
    Module,
    Tensor,
    concat,
    load_checkpoint,
    masked_log_softmax,
    no_grad,
    positional_encode,
    save_checkpoint,
)
from .core import (
    AllocationLedger,
    EmbeddingSolution,
    Status,
    embed_in_order,
    finalize,
    place_node,
    route_new_links,
)
from .sim import Solver
from .topology import PhysicalNetwork, VirtualNetworkRequest


@dataclass
class PolicyConfig:
    embed_dim: int = 128
    hidden_dim: int = 128
    gnn_layers: int = 5
    mlp_layers: int = 3
    alpha: float = 0.2
    beta: float = 0.2
    pe_dim: int = 16
    head: str = "pointer"           # "pointer" scores nodes from their embeddings; "global" is MLP(h) -> |N^p|
    n_physical: int | None = None   # required for the global head
    seed: int = 0

    def __post_init__(self):
        if self.head not in ("pointer", "global"):
            raise ValueError("head must be 'pointer' or 'global'")
        if self.head == "global" and not self.n_physical:
            raise ValueError("the global head needs n_physical")


# --------------------------------------------------------------------------
# state featurization
# --------------------------------------------------------------------------

@dataclass
class UpperState:
    p_node: np.ndarray      # (N, 1) remaining compute
    p_link: np.ndarray      # (E, 1) remaining bandwidth
    p_links: np.ndarray     # (E, 2)
    v_node: np.ndarray      # (n, 1) demands
    v_link: np.ndarray      # (m, 1)
    v_links: np.ndarray     # (m, 2)
    lifetime: np.ndarray    # (1,)


@dataclass
class LowerState:
    p_node: np.ndarray      # (N, 4): remaining, maximum, selection flag, neighbour flag
    p_link: np.ndarray      # (E, 2): remaining, maximum
    p_links: np.ndarray
    v_node: np.ndarray      # (n, 1)
    v_link: np.ndarray      # (m, 1)
    v_links: np.ndarray
    remaining: np.ndarray   # (1,) unplaced virtual nodes / |N^v|
    step: int = 0
    v_current: int = 0


def upper_state(net: PhysicalNetwork, vnr: VirtualNetworkRequest, mean_lifetime: float,
                scale: float | None = None) -> UpperState:
    scale = scale or net.max_capacity
    return UpperState(
        (net.node_available / scale)[:, None],
        (net.link_available / scale)[:, None],
        net.links,
        (vnr.node_demand / scale)[:, None],
        (vnr.link_demand / scale)[:, None],
        vnr.links,
        np.array([vnr.lifetime / mean_lifetime]),
    )


def physical_lower_features(net: PhysicalNetwork, vnr: VirtualNetworkRequest, sol: EmbeddingSolution,
                            v_current: int, scale: float):
    n = net.num_nodes
    selected = np.zeros(n)
    if sol.node_map:
        selected[list(sol.node_map.values())] = 1.0
    neighbour = np.zeros(n)
    for a, b in vnr.links.tolist():
        other = b if a == v_current else a if b == v_current else None
        if other is not None and other in sol.node_map:
            neighbour[sol.node_map[other]] = 1.0
    node = np.stack([net.node_available / scale, net.node_capacity / scale, selected, neighbour], axis=1)
    link = np.stack([net.link_available / scale, net.link_capacity / scale], axis=1)
    return node, link


def lower_state(net: PhysicalNetwork, vnr: VirtualNetworkRequest, sol: EmbeddingSolution, step: int,
                scale: float | None = None) -> LowerState:
    scale = scale or net.max_capacity
    v = int(vnr.node_order[step])
    node, link = physical_lower_features(net, vnr, sol, v, scale)
    return LowerState(node, link, net.links, (vnr.node_demand / scale)[:, None],
                      (vnr.link_demand / scale)[:, None], vnr.links,
                      np.array([(vnr.num_nodes - step) / vnr.num_nodes]), step, v)


def build_mask(net: PhysicalNetwork, demand: float, used) -> np.ndarray:
    mask = net.node_available >= demand
    used = list(used)
    if used:
        mask[used] = False
    return mask


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

class UpperPolicy(Module):
    def __init__(self, cfg: PolicyConfig):
        rng = np.random.default_rng(cfg.seed)
        d, hd = cfg.embed_dim, cfg.hidden_dim
        self.cfg = cfg
        self.gnn = EdgeAwareGNN(1, 1, d, rng, cfg.gnn_layers, cfg.alpha, cfg.beta, cfg.mlp_layers)
        self.gap_p = GapPooling(d, rng)
        self.gap_v = GapPooling(d, rng)
        self.attr = MLP(1, d, d, rng, cfg.mlp_layers)
        self.fuse = MLP(3 * d, d, d, rng, cfg.mlp_layers)
        self.gru = GRUCell(d, hd, rng)
        self.actor = MLP(hd, hd, 2, rng, cfg.mlp_layers)
        self.critic = MLP(hd, hd, 1, rng, cfg.mlp_layers)

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.cfg.hidden_dim)

    def actor_critic_params(self):
        critic = {id(p) for p in self.critic.parameters()}
        params = self.parameters()
        return [p for p in params if id(p) not in critic], self.critic.parameters()

    def forward(self, states: list[UpperState], hidden):
        """Returns ``(logits (B, 2), value (B,), new_hidden (B, H))``."""
        s0 = states[0]
        n = len(s0.p_node)
        pg = GraphBatch.shared_topology(np.stack([s.p_node for s in states]), s0.p_links,
                                        np.stack([s.p_link for s in states]), n)
        vg = GraphBatch.from_graphs([s.v_node for s in states], [s.v_links for s in states],
                                    [s.v_link for s in states])
        gp = self.gap_p(self.gnn(pg))
        gv = self.gap_v(self.gnn(vg), vg.node_mask)
        gr = self.attr(Tensor(np.stack([s.lifetime for s in states])))
        x = self.fuse(concat([gp, gv, gr], axis=-1))
        h = self.gru(x, hidden if isinstance(hidden, Tensor) else Tensor(np.atleast_2d(hidden)))
        logits = self.actor(h)
        value = self.critic(h).reshape(-1)
        return logits, value, h


def upper_forward(policy: UpperPolicy, state: UpperState, hidden: np.ndarray):
    """Single-state inference: ``(probabilities (2,), value, new_hidden)``."""
    with no_grad():
        logits, value, h = policy([state], hidden[None, :])
    z = logits.data[0] - logits.data[0].max()
    p = np.exp(z) / np.exp(z).sum()
    return p, float(value.data[0]), h.data[0]


class LowerPolicy(Module):
    def __init__(self, cfg: PolicyConfig):
        rng = np.random.default_rng(cfg.seed)
        d, hd, pe = cfg.embed_dim, cfg.hidden_dim, cfg.pe_dim
        self.cfg = cfg
        self.encoder = EdgeAwareGNN(1, 1, d, rng, cfg.gnn_layers, cfg.alpha, cfg.beta, cfg.mlp_layers)
        self.decoder_gnn = EdgeAwareGNN(4, 2, d, rng, cfg.gnn_layers, cfg.alpha, cfg.beta, cfg.mlp_layers)
        self.gap = GapPooling(d, rng)
        self.attr = MLP(1, d, d, rng, cfg.mlp_layers)
        self.fuse = MLP(3 * d + pe, d, d, rng, cfg.mlp_layers)
        self.gru = GRUCell(d, hd, rng)
        if cfg.head == "pointer":
            self.actor = MLP(hd + d, hd, 1, rng, cfg.mlp_layers)
        else:
            self.actor = MLP(hd, hd, cfg.n_physical, rng, cfg.mlp_layers)
        self.critic = MLP(hd, hd, 1, rng, cfg.mlp_layers)

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.cfg.hidden_dim)

    def actor_critic_params(self):
        critic = {id(p) for p in self.critic.parameters()}
        params = self.parameters()
        return [p for p in params if id(p) not in critic], self.critic.parameters()

    def encode(self, v_nodes, v_links_list, v_link_feats, orders) -> Tensor:
        """Static per-node embeddings ``[GNN || PE]`` for a padded batch of VNRs: (B, n_max, d + pe)."""
        g = GraphBatch.from_graphs(v_nodes, v_links_list, v_link_feats)
        hf = self.encoder(g)
        n_max = g.x.shape[1]
        pe = np.zeros((len(v_nodes), n_max, self.cfg.pe_dim))
        for b, order in enumerate(orders):
            for pos, v in enumerate(order):
                pe[b, v] = positional_encode(pos, self.cfg.pe_dim)
        return concat([hf, Tensor(pe)], axis=-1)

    def decode(self, p_node, p_link, p_links, hv_t: Tensor, remaining, hidden, mask):
        """One decoder step for a batch on a shared topology.

        Returns ``(log_probs (B, N), value (B,), new_hidden (B, H))``; masked
        nodes get log-probability ``-inf``.
        """
        p_node = np.asarray(p_node)
        bsz, n = p_node.shape[0], p_node.shape[1]
        pg = GraphBatch.shared_topology(p_node, p_links, p_link, n)
        P = self.decoder_gnn(pg)
        gp = self.gap(P)
        gr = self.attr(Tensor(np.asarray(remaining).reshape(bsz, 1)))
        x = self.fuse(concat([gp, hv_t, gr], axis=-1))
        h = self.gru(x, hidden if isinstance(hidden, Tensor) else Tensor(hidden))
        if self.cfg.head == "pointer":
            hb = h.expand_dims(1) + np.zeros((1, n, 1))
            logits = self.actor(concat([hb, P], axis=-1)).reshape(bsz, n)
        else:
            logits = self.actor(h)
        logp = masked_log_softmax(logits, mask)
        value = self.critic(h).reshape(-1)
        return logp, value, h


def vnr_features(vnr: VirtualNetworkRequest, scale: float):
    return (vnr.node_demand / scale)[:, None], vnr.links, (vnr.link_demand / scale)[:, None]


def lower_encode(policy: LowerPolicy, vnr: VirtualNetworkRequest, scale: float) -> np.ndarray:
    """Per-virtual-node embeddings (n, d + pe); computed once per VNR."""
    nf, links, lf = vnr_features(vnr, scale)
    with no_grad():
        out = policy.encode([nf], [links], [lf], [vnr.node_order])
    return out.data[0, :vnr.num_nodes]


def lower_decode_step(policy: LowerPolicy, state: LowerState, hv_t: np.ndarray, hidden: np.ndarray,
                      mask: np.ndarray):
    """Single-state inference: ``(probabilities (N,), value, new_hidden)``."""
    if not mask.any():
        raise EmptyMaskError("no feasible physical node for the current virtual node")
    with no_grad():
        logp, value, h = policy.decode(state.p_node[None], state.p_link[None], state.p_links,
                                       Tensor(hv_t[None]), state.remaining[None], hidden[None], mask[None])
    return np.exp(logp.data[0]), float(value.data[0]), h.data[0]


class EmptyMaskError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

def _decode_batch(policy: LowerPolicy, nets, vnr, sols, step, enc, hiddens, scale):
    v = int(vnr.node_order[step])
    feats = [physical_lower_features(n, vnr, s, v, scale) for n, s in zip(nets, sols)]
    masks = np.stack([build_mask(n, vnr.node_demand[v], s.node_map.values()) for n, s in zip(nets, sols)])
    remaining = np.full((len(nets), 1), (vnr.num_nodes - step) / vnr.num_nodes)
    with no_grad():
        logp, value, h = policy.decode(np.stack([f[0] for f in feats]), np.stack([f[1] for f in feats]),
                                       nets[0].links, Tensor(np.repeat(enc[v][None], len(nets), 0)),
                                       remaining, np.stack(hiddens), masks)
    return logp.data, value.data, h.data, masks


def rollout(policy: LowerPolicy, vnr: VirtualNetworkRequest, net: PhysicalNetwork, mode: str = "greedy",
            rng=None, scale: float | None = None, commit: bool = True):
    """Decode one VNR step by step (greedy argmax or sampling).

    Returns ``(solution, total_log_prob)``. Works on a copy of ``net`` and
    replays the result onto ``net`` only if ``commit`` and it succeeded.
    """
    scale = scale or net.max_capacity
    enc = lower_encode(policy, vnr, scale)
    work = net.copy()
    sol = EmbeddingSolution(vnr.id)
    ledger = AllocationLedger()
    hidden = policy.initial_hidden()
    total = 0.0
    for step in range(vnr.num_nodes):
        logp, _, h, masks = _decode_batch(policy, [work], vnr, [sol], step, enc, [hidden], scale)
        if not masks[0].any():
            return EmbeddingSolution(vnr.id, status=Status.FAILED), total
        if mode == "greedy":
            a = int(np.argmax(logp[0]))
        else:
            p = np.exp(logp[0])
            a = int(rng.choice(len(p), p=p / p.sum()))
        total += float(logp[0, a])
        v = int(vnr.node_order[step])
        if not place_node(work, sol, vnr, v, a, ledger) or route_new_links(work, sol, vnr, v, ledger) is None:
            return EmbeddingSolution(vnr.id, status=Status.FAILED), total
        hidden = h[0]
    finalize(sol, vnr)
    if commit:
        return commit_solution(net, vnr, sol), total
    return sol, total


def commit_solution(net: PhysicalNetwork, vnr: VirtualNetworkRequest, sol: EmbeddingSolution) -> EmbeddingSolution:
    """Replay a solution found on a snapshot onto ``net`` (same state, so same paths)."""
    order = np.array([v for v in vnr.node_order.tolist()])
    committed = embed_in_order(net, vnr, lambda _n, _s, v: sol.node_map[v], order=order)
    if committed.status != Status.EMBEDDED or committed.link_map != sol.link_map:
        raise RuntimeError("replaying a snapshot solution diverged from the snapshot")
    return committed


@dataclass
class _Beam:
    net: PhysicalNetwork
    sol: EmbeddingSolution
    hidden: np.ndarray
    logp: float


def beam_search(policy: LowerPolicy, vnr: VirtualNetworkRequest, net: PhysicalNetwork, width: int = 3,
                scale: float | None = None, commit: bool = True) -> EmbeddingSolution:
    """Keep the ``width`` best partial rollouts by cumulative log-probability.

    Every candidate is expanded on its own availability snapshot; the
    cheapest completed rollout (ties: higher log-probability) is replayed
    onto ``net``. ``net`` is never touched on failure.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    scale = scale or net.max_capacity
    enc = lower_encode(policy, vnr, scale)
    beams = [_Beam(net.copy(), EmbeddingSolution(vnr.id), policy.initial_hidden(), 0.0)]
    for step in range(vnr.num_nodes):
        v = int(vnr.node_order[step])
        logp, _, h, masks = _decode_batch(policy, [b.net for b in beams], vnr, [b.sol for b in beams],
                                          step, enc, [b.hidden for b in beams], scale)
        cands = []
        for bi, beam in enumerate(beams):
            for a in np.flatnonzero(masks[bi]).tolist():
                cands.append((-(beam.logp + logp[bi, a]), bi, -logp[bi, a], a))
        cands.sort()
        survivors = []
        for neg_score, bi, _, a in cands[:width]:
            parent = beams[bi]
            work = parent.net.copy()
            sol = parent.sol.copy()
            ledger = AllocationLedger()
            if place_node(work, sol, vnr, v, a, ledger) and route_new_links(work, sol, vnr, v, ledger) is not None:
                survivors.append(_Beam(work, sol, h[bi], -neg_score))
        if not survivors:
            return EmbeddingSolution(vnr.id, status=Status.FAILED)
        beams = survivors
    for b in beams:
        finalize(b.sol, vnr)
    best = min(range(len(beams)), key=lambda i: (beams[i].sol.cost, -beams[i].logp, i))
    winner = beams[best].sol
    return commit_solution(net, vnr, winner) if commit else winner


# --------------------------------------------------------------------------
# solver adapter
# --------------------------------------------------------------------------

class HrlSolver(Solver):
    """Upper policy for admission, lower policy + beam search for allocation.

    ``admission="always"`` drops the upper agent (lower-policy-only ablation).
    """

    name = "hrl-acra"

    def __init__(self, lower: LowerPolicy, upper: UpperPolicy | None = None, beam_width: int = 3,
                 mean_lifetime: float = 1000.0, admission: str = "policy", decode: str = "greedy",
                 seed: int = 0):
        if admission == "policy" and upper is None:
            raise ValueError("policy admission needs an upper policy")
        self.lower = lower
        self.upper = upper
        self.beam_width = beam_width
        self.mean_lifetime = mean_lifetime
        self.admission = admission
        self.decode = decode
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.hidden = upper.initial_hidden() if upper is not None else None
        self.hidden_log: list[np.ndarray] = []
        self.last_upper = None

    def reset(self, net):
        self.rng = np.random.default_rng(self.seed)
        self.hidden_log = []
        if self.upper is not None:
            self.hidden = self.upper.initial_hidden()

    def admit(self, net, vnr):
        if self.admission == "always":
            return True
        state = upper_state(net, vnr, self.mean_lifetime)
        self.hidden_log.append(self.hidden)
        probs, value, new_hidden = upper_forward(self.upper, state, self.hidden)
        self.hidden = new_hidden
        if self.decode == "greedy":
            action = int(np.argmax(probs))
        else:
            action = int(self.rng.choice(2, p=probs))
        self.last_upper = (state, action, probs, value)
        return action == 1

    def allocate(self, net, vnr):
        if self.decode == "sample":
            return rollout(self.lower, vnr, net, "sample", self.rng)[0]
        return beam_search(self.lower, vnr, net, self.beam_width)


# --------------------------------------------------------------------------
# checkpoint helpers
# --------------------------------------------------------------------------

def save_policy(policy: Module, path, extra: dict | None = None) -> None:
    meta = {"kind": type(policy).__name__, "config": asdict(policy.cfg)}
    meta.update(extra or {})
    save_checkpoint(policy.state_dict(), path, meta)


def load_policy(path):
    state, meta = load_checkpoint(path)
    cfg = PolicyConfig(**meta["config"])
    cls = {"LowerPolicy": LowerPolicy, "UpperPolicy": UpperPolicy}[meta["kind"]]
    policy = cls(cfg)
    policy.load_state_dict(state)
    return policy, meta
