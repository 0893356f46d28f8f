"""Discretizing GRU hidden states into controller memory nodes.

Two families of discretizers produce a Clustering (assign/represent pair):
k-means++ over the hidden states visited on the dataset, or a quantized
bottleneck autoencoder whose code book becomes the node set.  build_fsc then
drives the trained network model-side: one forward pass per (node,
observation) yields the action distribution and the successor node, and
nodes the initial node cannot reach are pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from robustfsc.model import Fsc, RobustPomdp, prune_unreachable_nodes
from robustfsc.rnn import (
    PARAM_FIELDS,
    NetworkParams,
    _gru_backward,
    _gru_step,
    _head,
    _head_backward,
    _pad_episodes,
    forward,
    initial_hidden,
    policy_distribution,
)
from robustfsc.simulate import TrajectoryDataset
from robustfsc.solvers import DivergenceError


def collect_hidden_states(params: NetworkParams, dataset: TrajectoryDataset) -> np.ndarray:
    """Hidden states after every observation of every episode, episode-major."""
    if dataset.num_steps == 0:
        return np.zeros((0, params.hidden_size))
    zs, _, mask = _pad_episodes(dataset, list(range(dataset.num_episodes)))
    b, t_max = zs.shape
    h = np.zeros((b, params.hidden_size))
    per_step = []
    for t in range(t_max):
        h, _ = _gru_step(params, h, params.emb[zs[:, t]])
        per_step.append(h)
    states = []
    for row in range(b):
        length = int(mask[row].sum())
        for t in range(length):
            states.append(per_step[t][row])
    return np.array(states)


# ---------------------------------------------------------------------------
# k-means++

def kmeans_fit(points: np.ndarray, k: int, rng_seed: int | tuple[int, ...] = 0, max_iters: int = 100) -> "Clustering":
    """k-means++ seeding followed by Lloyd iterations.

    Inertia never increases between iterations; a cluster that loses all its
    points is re-seeded at the point currently farthest from its centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("need a nonempty (n, d) point array")
    rng = np.random.default_rng(rng_seed)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(len(points))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(len(points))]
        else:
            centroids[j] = points[rng.choice(len(points), p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(max_iters):
        dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            member = points[assign == j]
            if len(member):
                centroids[j] = member.mean(axis=0)
            else:
                worst = int(dists[np.arange(len(points)), assign].argmax())
                centroids[j] = points[worst]
                assign[worst] = j
    dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dists.min(axis=1).sum())
    return Clustering(method="kmeans", centroids=centroids, fit_metric=inertia)


# ---------------------------------------------------------------------------
# quantized bottleneck

QBN_FIELDS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "enc_w3", "enc_b3",
              "dec_w1", "dec_b1", "dec_w2", "dec_b2", "dec_w3", "dec_b3")


@dataclass
class QbnParams:
    """Encoder d -> 8b -> 4b -> b and its mirror decoder, tanh throughout.

    The final encoder activation is a flattened tanh for 3-level quantization
    (easier to settle on the 0 code) and a plain tanh for 2-level.
    """

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    enc_w3: np.ndarray
    enc_b3: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray
    dec_w3: np.ndarray
    dec_b3: np.ndarray
    quant_levels: int = 3

    @property
    def bottleneck(self) -> int:
        return self.enc_w3.shape[0]

    def copy(self) -> "QbnParams":
        return QbnParams(**{n: getattr(self, n).copy() for n in QBN_FIELDS},
                         quant_levels=self.quant_levels)

    def zeros_like(self) -> "QbnParams":
        return QbnParams(**{n: np.zeros_like(getattr(self, n)) for n in QBN_FIELDS},
                         quant_levels=self.quant_levels)


def tanh_flat(x: np.ndarray) -> np.ndarray:
    """1.5 tanh(x) + 0.5 tanh(-3x): maps to [-1, 1] but flat around zero."""
    return 1.5 * np.tanh(x) + 0.5 * np.tanh(-3.0 * x)


def _tanh_flat_grad(x: np.ndarray) -> np.ndarray:
    t1 = np.tanh(x)
    t3 = np.tanh(3.0 * x)
    return 1.5 * (t3 * t3 - t1 * t1)


def quantize(codes: np.ndarray, levels: int) -> np.ndarray:
    """Round to {-1, 0, 1} (thresholds at +-0.5) or to {-1, 1} (sign)."""
    if levels == 3:
        return np.where(codes > 0.5, 1.0, np.where(codes < -0.5, -1.0, 0.0))
    if levels == 2:
        return np.where(codes >= 0.0, 1.0, -1.0)
    raise ValueError("quant_levels must be 2 or 3")


def qbn_init(hidden_size: int, bottleneck: int, quant_levels: int = 3, rng_seed: int | tuple[int, ...] = 0) -> QbnParams:
    rng = np.random.default_rng(rng_seed)

    def dense(rows: int, cols: int) -> np.ndarray:
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    b = bottleneck
    return QbnParams(
        enc_w1=dense(8 * b, hidden_size), enc_b1=np.zeros(8 * b),
        enc_w2=dense(4 * b, 8 * b), enc_b2=np.zeros(4 * b),
        enc_w3=dense(b, 4 * b), enc_b3=np.zeros(b),
        dec_w1=dense(4 * b, b), dec_b1=np.zeros(4 * b),
        dec_w2=dense(8 * b, 4 * b), dec_b2=np.zeros(8 * b),
        dec_w3=dense(hidden_size, 8 * b), dec_b3=np.zeros(hidden_size),
        quant_levels=quant_levels,
    )


def _qbn_encode(q: QbnParams, h: np.ndarray):
    e1p = h @ q.enc_w1.T + q.enc_b1
    e1 = np.tanh(e1p)
    e2p = e1 @ q.enc_w2.T + q.enc_b2
    e2 = np.tanh(e2p)
    e3p = e2 @ q.enc_w3.T + q.enc_b3
    e3 = tanh_flat(e3p) if q.quant_levels == 3 else np.tanh(e3p)
    return e3, (h, e1p, e1, e2p, e2, e3p)


def _qbn_decode(q: QbnParams, code: np.ndarray):
    d1p = code @ q.dec_w1.T + q.dec_b1
    d1 = np.tanh(d1p)
    d2p = d1 @ q.dec_w2.T + q.dec_b2
    d2 = np.tanh(d2p)
    d3p = d2 @ q.dec_w3.T + q.dec_b3
    out = np.tanh(d3p)
    return out, (code, d1p, d1, d2p, d2, d3p, out)


def qbn_apply(q: QbnParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quantized code and reconstruction for a batch of hidden states."""
    e, _ = _qbn_encode(q, h)
    code = quantize(e, q.quant_levels)
    out, _ = _qbn_decode(q, code)
    return code, out


def _qbn_decode_backward(q: QbnParams, cache, dout: np.ndarray, g: QbnParams) -> np.ndarray:
    code, d1p, d1, d2p, d2, d3p, out = cache
    dd3p = dout * (1.0 - out * out)
    g.dec_w3 += dd3p.T @ d2
    g.dec_b3 += dd3p.sum(axis=0)
    dd2 = dd3p @ q.dec_w3
    dd2p = dd2 * (1.0 - d2 * d2)
    g.dec_w2 += dd2p.T @ d1
    g.dec_b2 += dd2p.sum(axis=0)
    dd1 = dd2p @ q.dec_w2
    dd1p = dd1 * (1.0 - d1 * d1)
    g.dec_w1 += dd1p.T @ code
    g.dec_b1 += dd1p.sum(axis=0)
    return dd1p @ q.dec_w1


def _qbn_encode_backward(q: QbnParams, cache, dcode: np.ndarray, g: QbnParams) -> np.ndarray:
    h, e1p, e1, e2p, e2, e3p = cache
    if q.quant_levels == 3:
        de3p = dcode * _tanh_flat_grad(e3p)
    else:
        de3p = dcode * (1.0 - np.tanh(e3p) ** 2)
    g.enc_w3 += de3p.T @ e2
    g.enc_b3 += de3p.sum(axis=0)
    de2 = de3p @ q.enc_w3
    de2p = de2 * (1.0 - e2 * e2)
    g.enc_w2 += de2p.T @ e1
    g.enc_b2 += de2p.sum(axis=0)
    de1 = de2p @ q.enc_w2
    de1p = de1 * (1.0 - e1 * e1)
    g.enc_w1 += de1p.T @ h
    g.enc_b1 += de1p.sum(axis=0)
    return de1p @ q.enc_w1


class _Adam:
    """Adam over a named parameter container (NetworkParams or QbnParams)."""

    def __init__(self, container, names, lr: float, clip_norm: float | None = None):
        self.names = names
        self.lr = lr
        self.clip_norm = clip_norm
        self.m = container.zeros_like()
        self.v = container.zeros_like()
        self.step_count = 0

    def step(self, params, grads) -> None:
        if self.clip_norm is not None:
            total = 0.0
            for name in self.names:
                a = getattr(grads, name)
                total += float((a * a).sum())
            norm = np.sqrt(total)
            if norm > self.clip_norm and norm > 0.0:
                scale = self.clip_norm / norm
                for name in self.names:
                    a = getattr(grads, name)
                    a *= scale
        self.step_count += 1
        correction = np.sqrt(1.0 - 0.999 ** self.step_count) / (1.0 - 0.9 ** self.step_count)
        for name in self.names:
            p = getattr(params, name)
            gm = getattr(self.m, name)
            gv = getattr(self.v, name)
            ga = getattr(grads, name)
            gm *= 0.9
            gm += 0.1 * ga
            gv *= 0.999
            gv += 0.001 * ga * ga
            p -= self.lr * correction * gm / (np.sqrt(gv) + 1e-8)


def qbn_fit_posthoc(
    points: np.ndarray,
    bottleneck: int,
    quant_levels: int = 3,
    epochs: int = 50,
    lr: float = 1e-3,
    batch_size: int = 32,
    rng_seed: int | tuple[int, ...] = 0,
) -> "Clustering":
    """Train the bottleneck to reconstruct hidden states through its quantizer.

    The quantizer contributes no gradient of its own: backpropagation passes
    through it as the identity (straight-through), so the encoder still
    learns even though its output is snapped to the code book.  Returns a
    Clustering whose nodes are the codes observed on the training points and
    whose fit_metric is the final epoch's mean reconstruction error.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("need a nonempty (n, d) point array")
    qbn = qbn_init(points.shape[1], bottleneck, quant_levels, rng_seed)
    rng = np.random.default_rng((rng_seed, 1))
    opt = _Adam(qbn, QBN_FIELDS, lr)
    epoch_mse = []
    for _ in range(epochs):
        order = rng.permutation(len(points))
        losses = []
        for lo in range(0, len(order), batch_size):
            batch = points[order[lo:lo + batch_size]]
            e, ecache = _qbn_encode(qbn, batch)
            code = quantize(e, quant_levels)
            out, dcache = _qbn_decode(qbn, code)
            err = out - batch
            mse = float((err * err).mean())
            if not np.isfinite(mse):
                raise DivergenceError("bottleneck reconstruction loss became non-finite")
            losses.append(mse)
            g = qbn.zeros_like()
            dout = 2.0 * err / err.size
            dcode = _qbn_decode_backward(qbn, dcache, dout, g)
            _qbn_encode_backward(qbn, ecache, dcode, g)  # straight-through
            opt.step(qbn, g)
        epoch_mse.append(float(np.mean(losses)))

    codes = quantize(_qbn_encode(qbn, points)[0], quant_levels)
    table: list[tuple] = []
    seen = set()
    for row in codes:
        c = tuple(int(v) for v in row)
        if c not in seen:
            seen.add(c)
            table.append(c)
    return Clustering(
        method="qbn_posthoc", qbn=qbn, codes=table,
        fit_metric=epoch_mse[-1] if epoch_mse else float("nan"),
        mse_trace=epoch_mse,
    )


# ---------------------------------------------------------------------------
# clustering handle shared by both discretizers

@dataclass
class Clustering:
    """assign: hidden state -> node index; represent: node -> hidden state.

    For k-means the representative is the centroid; for bottleneck variants
    it is the decoder's reconstruction of the node's code, and assign may
    discover codes beyond those seen during fitting (``discover=True``).
    """

    method: str
    centroids: np.ndarray | None = None
    qbn: QbnParams | None = None
    codes: list[tuple] | None = None
    fit_metric: float = float("nan")
    mse_trace: list[float] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        if self.method == "kmeans":
            return len(self.centroids)
        return len(self.codes)

    @property
    def quantize_before_head(self) -> bool:
        return self.method == "qbn_e2e"

    def assign(self, h: np.ndarray, discover: bool = False) -> int | None:
        if self.method == "kmeans":
            d2 = ((self.centroids - h) ** 2).sum(axis=1)
            return int(d2.argmin())
        e, _ = _qbn_encode(self.qbn, h[None, :])
        code = tuple(int(v) for v in quantize(e[0], self.qbn.quant_levels))
        for i, c in enumerate(self.codes):
            if c == code:
                return i
        if not discover:
            return None
        self.codes.append(code)
        return len(self.codes) - 1

    def represent(self, node: int) -> np.ndarray:
        if self.method == "kmeans":
            return self.centroids[node]
        out, _ = _qbn_decode(self.qbn, np.asarray(self.codes[node], dtype=np.float64)[None, :])
        return out[0]


def train_epochs_e2e(
    params: NetworkParams,
    qbn: QbnParams,
    dataset: TrajectoryDataset,
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    clip_norm: float = 5.0,
    rng_seed: int | tuple[int, ...] = 0,
) -> tuple[NetworkParams, QbnParams, list[float]]:
    """Experimental: train with the bottleneck inside the recurrent loop.

    Each step quantizes the GRU state and threads the reconstruction, so the
    extracted controller matches the trained computation exactly; gradients
    flow through the quantizer as the identity.  Known to be less stable
    than post-hoc fitting.
    """
    params = params.copy()
    qbn = qbn.copy()
    if dataset.num_steps == 0 or epochs <= 0:
        return params, qbn, []
    rng = np.random.default_rng(rng_seed)
    opt_net = _Adam(params, PARAM_FIELDS, lr, clip_norm)
    opt_qbn = _Adam(qbn, QBN_FIELDS, lr, clip_norm)
    trace: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(dataset.num_episodes)
        for lo in range(0, len(order), batch_size):
            batch = [int(j) for j in order[lo:lo + batch_size]]
            zs, mus, mask = _pad_episodes(dataset, batch)
            normalizer = float(mask.sum())
            if normalizer == 0.0:
                continue
            b, t_max = zs.shape
            hq = np.zeros((b, params.hidden_size))
            caches = []
            batch_loss = 0.0
            for t in range(t_max):
                x = params.emb[zs[:, t]]
                hraw, gcache = _gru_step(params, hq, x)
                e, ecache = _qbn_encode(qbn, hraw)
                code = quantize(e, qbn.quant_levels)
                hq, dcache = _qbn_decode(qbn, code)
                log_probs, hcache = _head(params, hq)
                batch_loss -= float((mus[:, t] * log_probs).sum(axis=1) @ mask[:, t])
                caches.append((gcache, ecache, dcache, hcache, log_probs))
            batch_loss /= normalizer
            if not np.isfinite(batch_loss):
                raise DivergenceError("end-to-end training loss became non-finite")
            g_net = params.zeros_like()
            g_qbn = qbn.zeros_like()
            dhq_next = np.zeros((b, params.hidden_size))
            for t in range(t_max - 1, -1, -1):
                gcache, ecache, dcache, hcache, log_probs = caches[t]
                w = mask[:, t][:, None] / normalizer
                dlogits = (np.exp(log_probs) - mus[:, t]) * w
                dhq = _head_backward(params, hcache, dlogits, g_net) + dhq_next
                dcode = _qbn_decode_backward(qbn, dcache, dhq, g_qbn)
                dhraw = _qbn_encode_backward(qbn, ecache, dcode, g_qbn)  # straight-through
                dhq_prev, dx = _gru_backward(params, gcache, dhraw, g_net)
                np.add.at(g_net.emb, zs[:, t], dx)
                dhq_next = dhq_prev
            opt_net.step(params, g_net)
            opt_qbn.step(qbn, g_qbn)
            trace.append(batch_loss)
    return params, qbn, trace


def clustering_from_e2e(params: NetworkParams, qbn: QbnParams, dataset: TrajectoryDataset) -> Clustering:
    """Code table observed when replaying the quantized recurrence."""
    table: list[tuple] = []
    seen = set()
    for ep in dataset.episodes:
        hq = initial_hidden(params)
        for st in ep.steps:
            hraw, _ = _gru_step(params, hq[None, :], params.emb[st.observation][None, :])
            e, _ = _qbn_encode(qbn, hraw)
            code_arr = quantize(e[0], qbn.quant_levels)
            code = tuple(int(v) for v in code_arr)
            if code not in seen:
                seen.add(code)
                table.append(code)
            hq = _qbn_decode(qbn, code_arr[None, :])[0][0]
    if not table:
        zero_code = quantize(_qbn_encode(qbn, initial_hidden(params)[None, :])[0][0], qbn.quant_levels)
        table.append(tuple(int(v) for v in zero_code))
    return Clustering(method="qbn_e2e", qbn=qbn, codes=table)


def build_fsc(params: NetworkParams, clustering: Clustering, model: RobustPomdp) -> Fsc:
    """Synthesize the controller by driving the network from each node.

    Starting from the node of the zero hidden state, every (node, realizable
    observation) pair is expanded with one forward pass: the resulting action
    distribution becomes the action row and the cluster of the new hidden
    state the memory successor.  Rows are also filled for non-realizable
    observations, but those never spawn new nodes; unreachable nodes are
    pruned and the survivors reindexed densely.
    """
    realizable = model.realizable_observations()
    realizable_set = set(realizable)
    num_z = model.num_observations
    num_a = params.num_actions

    first = clustering.assign(initial_hidden(params), discover=True)
    order = [first]
    dense_of = {first: 0}
    rows: list[dict[int, tuple[np.ndarray, int]]] = [{}]
    i = 0
    while i < len(order):
        node = order[i]
        i += 1
        rep = clustering.represent(node)
        for z in range(num_z):
            h_next, dist = forward(params, rep, z)
            target = clustering.assign(h_next, discover=z in realizable_set)
            if z in realizable_set and target not in dense_of:
                dense_of[target] = len(order)
                order.append(target)
                rows.append({})
            if clustering.quantize_before_head and target is not None:
                dist = policy_distribution(params, clustering.represent(target))
            rows[i - 1][z] = (dist, target)

    k = len(order)
    action_map = np.zeros((k, num_z, num_a))
    memory_map = np.zeros((k, num_z), dtype=np.int64)
    for dense_idx in range(k):
        for z in range(num_z):
            dist, target = rows[dense_idx][z]
            action_map[dense_idx, z] = dist
            # Unexpanded targets only arise on observations no state emits;
            # point those entries back at the source node.
            memory_map[dense_idx, z] = dense_of.get(target, dense_idx)
    fsc = Fsc(k, 0, action_map, memory_map)
    fsc.check()
    return prune_unreachable_nodes(fsc, realizable)


def fsc_fidelity(params: NetworkParams, fsc: Fsc, dataset: TrajectoryDataset) -> float:
    """Mean total-variation distance between the network policy and the
    extracted controller along the dataset histories (diagnostic only)."""
    if dataset.num_steps == 0:
        return 0.0
    total = 0.0
    count = 0
    for ep in dataset.episodes:
        h = initial_hidden(params)
        node = fsc.initial_node
        for st in ep.steps:
            h, dist_net = forward(params, h, st.observation)
            dist_fsc = fsc.action_map[node, st.observation]
            total += 0.5 * float(np.abs(dist_net - dist_fsc).sum())
            node = int(fsc.memory_map[node, st.observation])
            count += 1
    return total / count
