"""Caption decoder: two stacked LSTMs with additive attention over the
annotation grid, teacher-forced training loss, greedy and beam decoding.

Wiring notes (single sample, no batch axis):
  * attention scores e_i = v . tanh(W_a a_i + U_h h), where h is the top
    LSTM layer's previous hidden state; alpha = softmax(e); z = sum a_i alpha_i
  * layer-1 LSTM input is [embedding(prev token) || z]; layer-2 input is the
    layer-1 output (dropout between layers when training)
  * logits come from [h_top || z] (dropout before the output map when training)
  * initial h/c of each layer are learned tanh maps of the mean annotation
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTarget, ShapeMismatch
from .nnops import (
    dropout_mask,
    glorot_uniform,
    log_softmax,
    lstm_cell_backward,
    lstm_cell_forward,
    softmax,
)
from .text import END_ID, PAD_ID, START_ID, EmbeddingMatrix, TokenSequence

N_LSTM_LAYERS = 2
DROPOUT_RATE = 0.2


@dataclass
class AttentionParams:
    W_a: np.ndarray  # (C, A)
    U_h: np.ndarray  # (H, A)
    v: np.ndarray    # (A,)

    def tensors(self):
        return {"W_a": self.W_a, "U_h": self.U_h, "v": self.v}


@dataclass
class AttentionStep:
    weights: np.ndarray  # alpha, (L,)
    context: np.ndarray  # z, (C,)


@dataclass
class DecoderParams:
    embedding: EmbeddingMatrix
    lstm_Wx: list[np.ndarray]  # layer l: (Din_l, 4H)
    lstm_Wh: list[np.ndarray]  # (H, 4H)
    lstm_b: list[np.ndarray]   # (4H,)
    init_h_W: list[np.ndarray]  # (C, H) per layer
    init_h_b: list[np.ndarray]
    init_c_W: list[np.ndarray]
    init_c_b: list[np.ndarray]
    out_W: np.ndarray  # (H + C, V)
    out_b: np.ndarray  # (V,)

    @property
    def hidden(self):
        return self.lstm_Wh[0].shape[0]

    @property
    def context_dim(self):
        return self.init_h_W[0].shape[0]

    @property
    def vocab_size(self):
        return self.out_W.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embed.E": self.embedding.vectors}
        for l in range(N_LSTM_LAYERS):
            out[f"lstm{l}.Wx"] = self.lstm_Wx[l]
            out[f"lstm{l}.Wh"] = self.lstm_Wh[l]
            out[f"lstm{l}.b"] = self.lstm_b[l]
            out[f"init_h{l}.W"] = self.init_h_W[l]
            out[f"init_h{l}.b"] = self.init_h_b[l]
            out[f"init_c{l}.W"] = self.init_c_W[l]
            out[f"init_c{l}.b"] = self.init_c_b[l]
        out["out.W"] = self.out_W
        out["out.b"] = self.out_b
        return out


def init_attention(seed: int, context_dim: int, hidden: int, attn_dim: int) -> AttentionParams:
    rng = np.random.default_rng(seed)
    return AttentionParams(
        W_a=glorot_uniform(rng, context_dim, attn_dim, (context_dim, attn_dim)),
        U_h=glorot_uniform(rng, hidden, attn_dim, (hidden, attn_dim)),
        v=glorot_uniform(rng, attn_dim, 1, (attn_dim,)),
    )


def init_decoder(seed: int, embedding: EmbeddingMatrix, context_dim: int, hidden: int) -> DecoderParams:
    rng = np.random.default_rng(seed)
    E = embedding.dim
    V = embedding.vectors.shape[0]
    in_dims = [E + context_dim, hidden]
    lstm_Wx, lstm_Wh, lstm_b = [], [], []
    init_h_W, init_h_b, init_c_W, init_c_b = [], [], [], []
    for l in range(N_LSTM_LAYERS):
        lstm_Wx.append(glorot_uniform(rng, in_dims[l], 4 * hidden, (in_dims[l], 4 * hidden)))
        lstm_Wh.append(glorot_uniform(rng, hidden, 4 * hidden, (hidden, 4 * hidden)))
        lstm_b.append(np.zeros(4 * hidden))
        init_h_W.append(glorot_uniform(rng, context_dim, hidden, (context_dim, hidden)))
        init_h_b.append(np.zeros(hidden))
        init_c_W.append(glorot_uniform(rng, context_dim, hidden, (context_dim, hidden)))
        init_c_b.append(np.zeros(hidden))
    return DecoderParams(
        embedding=embedding,
        lstm_Wx=lstm_Wx, lstm_Wh=lstm_Wh, lstm_b=lstm_b,
        init_h_W=init_h_W, init_h_b=init_h_b,
        init_c_W=init_c_W, init_c_b=init_c_b,
        out_W=glorot_uniform(rng, hidden + context_dim, V, (hidden + context_dim, V)),
        out_b=np.zeros(V),
    )


def attend_forward(annotations, h, params: AttentionParams):
    ann = np.asarray(annotations, dtype=np.float64)
    if ann.ndim != 2 or ann.shape[1] != params.W_a.shape[0]:
        raise ShapeMismatch(f"annotations shape {ann.shape} vs W_a {params.W_a.shape}")
    if h.shape[0] != params.U_h.shape[0]:
        raise ShapeMismatch(f"state size {h.shape[0]} vs U_h {params.U_h.shape}")
    t = np.tanh(ann @ params.W_a + h @ params.U_h)  # (L, A)
    e = t @ params.v  # (L,)
    alpha = softmax(e)
    z = alpha @ ann
    cache = (ann, h, t, alpha)
    return AttentionStep(alpha, z), cache


def attend(annotations, h, params: AttentionParams) -> AttentionStep:
    """Additive attention: weights alpha over the L positions and the
    context vector z = sum_i alpha_i a_i."""
    step, _ = attend_forward(annotations, h, params)
    return step


def attend_backward(dz, cache, params: AttentionParams, dalpha_ext=None):
    """Backprop attention; returns (d_annotations, dh, grads)."""
    ann, h, t, alpha = cache
    dalpha = ann @ dz
    if dalpha_ext is not None:
        dalpha = dalpha + dalpha_ext
    d_ann = np.outer(alpha, dz)
    de = alpha * (dalpha - float(alpha @ dalpha))
    dv = t.T @ de
    dpre = np.outer(de, params.v) * (1.0 - t * t)  # (L, A)
    dWa = ann.T @ dpre
    d_ann += dpre @ params.W_a.T
    dpre_sum = dpre.sum(axis=0)
    dUh = np.outer(h, dpre_sum)
    dh = dpre_sum @ params.U_h.T
    return d_ann, dh, {"W_a": dWa, "U_h": dUh, "v": dv}


def init_state(annotations, params: DecoderParams):
    """Per-layer initial (h, c) from tanh maps of the mean annotation vector."""
    mean_a = np.asarray(annotations, dtype=np.float64).mean(axis=0)
    h = [np.tanh(mean_a @ params.init_h_W[l] + params.init_h_b[l]) for l in range(N_LSTM_LAYERS)]
    c = [np.tanh(mean_a @ params.init_c_W[l] + params.init_c_b[l]) for l in range(N_LSTM_LAYERS)]
    return h, c


def _step_forward(annotations, prev_tok, h, c, params, attn, training, rng):
    """One decode step; returns (logits, new_h, new_c, cache)."""
    att, att_cache = attend_forward(annotations, h[1], attn)
    z = att.context
    emb = params.embedding.vectors[prev_tok]
    x1 = np.concatenate([emb, z])
    h0, c0, cache0 = lstm_cell_forward(x1, h[0], c[0], params.lstm_Wx[0], params.lstm_Wh[0], params.lstm_b[0])
    mid_mask = dropout_mask(rng, h0.shape, DROPOUT_RATE) if training else None
    x2 = h0 * mid_mask if training else h0
    h1, c1, cache1 = lstm_cell_forward(x2, h[1], c[1], params.lstm_Wx[1], params.lstm_Wh[1], params.lstm_b[1])
    oin = np.concatenate([h1, z])
    out_mask = dropout_mask(rng, oin.shape, DROPOUT_RATE) if training else None
    oin_d = oin * out_mask if training else oin
    logits = oin_d @ params.out_W + params.out_b
    cache = (att_cache, prev_tok, cache0, mid_mask, cache1, out_mask, oin_d)
    return logits, [h0, h1], [c0, c1], cache


def teacher_forced_loss(annotations, target: TokenSequence, params: DecoderParams,
                        attn: AttentionParams, training: bool = False, rng=None) -> float:
    """Mean token cross-entropy under teacher forcing (PAD positions excluded)."""
    loss, _, _ = caption_loss_and_grads(annotations, target, params, attn,
                                        training=training, rng=rng, want_grads=False)
    return loss


def caption_loss_and_grads(annotations, target: TokenSequence, params: DecoderParams,
                           attn: AttentionParams, training: bool = False, rng=None,
                           want_grads: bool = True):
    """Teacher-forced loss with full BPTT gradients.

    Returns (loss, grads, d_annotations); grads keys are 'decoder.<name>'
    and 'attention.<name>'. d_annotations flows back into the encoder.
    """
    ids = target.ids if isinstance(target, TokenSequence) else list(target)
    if len(ids) < 2:
        raise EmptyTarget("target must hold at least START and END")
    if ids[0] != START_ID or END_ID not in ids:
        raise EmptyTarget("target must start with START and contain END")

    ann = np.asarray(annotations, dtype=np.float64)
    L = ann.shape[0]
    mean_a = ann.mean(axis=0)
    h, c = [], []
    init_pre = []
    for l in range(N_LSTM_LAYERS):
        ph = mean_a @ params.init_h_W[l] + params.init_h_b[l]
        pc = mean_a @ params.init_c_W[l] + params.init_c_b[l]
        h.append(np.tanh(ph))
        c.append(np.tanh(pc))
        init_pre.append((np.tanh(ph), np.tanh(pc)))

    steps = []
    loss = 0.0
    count = 0
    for t in range(1, len(ids)):
        if ids[t] == PAD_ID:
            break  # PAD is never interior; everything after is padding
        logits, h, c, cache = _step_forward(ann, ids[t - 1], h, c, params, attn, training, rng)
        logp = log_softmax(logits)
        loss += -float(logp[ids[t]])
        count += 1
        steps.append((logits, ids[t], cache))
        if ids[t] == END_ID:
            break
    loss /= count

    if not want_grads:
        return loss, None, None

    grads = {f"decoder.{k}": np.zeros_like(v) for k, v in params.tensors().items()}
    grads.update({f"attention.{k}": np.zeros_like(v) for k, v in attn.tensors().items()})
    d_ann = np.zeros_like(ann)
    dh = [np.zeros(params.hidden) for _ in range(N_LSTM_LAYERS)]
    dc = [np.zeros(params.hidden) for _ in range(N_LSTM_LAYERS)]

    H = params.hidden
    for logits, tgt, cache in reversed(steps):
        att_cache, prev_tok, cache0, mid_mask, cache1, out_mask, oin_d = cache
        dlogits = softmax(logits)
        dlogits[tgt] -= 1.0
        dlogits /= count

        doin = dlogits @ params.out_W.T
        grads["decoder.out.W"] += np.outer(oin_d, dlogits)
        grads["decoder.out.b"] += dlogits
        if out_mask is not None:
            doin = doin * out_mask
        dh1 = dh[1] + doin[:H]
        dz = doin[H:].copy()

        dx2, dh1_prev, dc1_prev, dWx1, dWh1, db1 = lstm_cell_backward(
            dh1, dc[1], cache1, params.lstm_Wx[1], params.lstm_Wh[1])
        grads["decoder.lstm1.Wx"] += dWx1
        grads["decoder.lstm1.Wh"] += dWh1
        grads["decoder.lstm1.b"] += db1

        if mid_mask is not None:
            dx2 = dx2 * mid_mask
        dh0 = dh[0] + dx2
        dx1, dh0_prev, dc0_prev, dWx0, dWh0, db0 = lstm_cell_backward(
            dh0, dc[0], cache0, params.lstm_Wx[0], params.lstm_Wh[0])
        grads["decoder.lstm0.Wx"] += dWx0
        grads["decoder.lstm0.Wh"] += dWh0
        grads["decoder.lstm0.b"] += db0

        E = params.embedding.dim
        grads["decoder.embed.E"][prev_tok] += dx1[:E]
        dz += dx1[E:]

        d_ann_step, dh_att, att_grads = attend_backward(dz, att_cache, attn)
        d_ann += d_ann_step
        for k, g in att_grads.items():
            grads[f"attention.{k}"] += g

        dh = [dh0_prev, dh1_prev + dh_att]
        dc = [dc0_prev, dc1_prev]

    # through the learned initial states into the mean annotation
    d_mean = np.zeros_like(mean_a)
    for l in range(N_LSTM_LAYERS):
        h0l, c0l = init_pre[l]
        dph = dh[l] * (1.0 - h0l * h0l)
        dpc = dc[l] * (1.0 - c0l * c0l)
        grads[f"decoder.init_h{l}.W"] += np.outer(mean_a, dph)
        grads[f"decoder.init_h{l}.b"] += dph
        grads[f"decoder.init_c{l}.W"] += np.outer(mean_a, dpc)
        grads[f"decoder.init_c{l}.b"] += dpc
        d_mean += dph @ params.init_h_W[l].T + dpc @ params.init_c_W[l].T
    d_ann += d_mean / L

    if not params.embedding.trainable:
        grads["decoder.embed.E"][:] = 0.0
    grads["decoder.embed.E"][PAD_ID] = 0.0  # PAD row stays frozen at zero
    return loss, grads, d_ann


def teacher_forced_accuracy(annotations, target: TokenSequence, params: DecoderParams,
                            attn: AttentionParams) -> tuple[int, int]:
    """(correct, total) argmax hits over non-PAD target positions."""
    ids = target.ids if isinstance(target, TokenSequence) else list(target)
    ann = np.asarray(annotations, dtype=np.float64)
    h, c = init_state(ann, params)
    correct = 0
    total = 0
    for t in range(1, len(ids)):
        if ids[t] == PAD_ID:
            break
        logits, h, c, _ = _step_forward(ann, ids[t - 1], h, c, params, attn, False, None)
        correct += int(int(np.argmax(logits)) == ids[t])
        total += 1
        if ids[t] == END_ID:
            break
    return correct, total


def greedy_decode(annotations, params: DecoderParams, attn: AttentionParams,
                  max_len: int) -> TokenSequence:
    """Argmax decoding (ties to the lowest id); stops at END or max_len.
    PAD is never emitted."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ann = np.asarray(annotations, dtype=np.float64)
    h, c = init_state(ann, params)
    ids = [START_ID]
    prev = START_ID
    while len(ids) < max_len:
        logits, h, c, _ = _step_forward(ann, prev, h, c, params, attn, False, None)
        logits[PAD_ID] = -np.inf
        nxt = int(np.argmax(logits))
        ids.append(nxt)
        if nxt == END_ID:
            break
        prev = nxt
    return TokenSequence(ids)


def beam_decode(annotations, params: DecoderParams, attn: AttentionParams,
                beam: int = 3, max_len: int = 30) -> TokenSequence:
    """Length-normalized beam search (score = mean log-prob of emitted
    tokens). beam=1 reduces exactly to greedy_decode; ties break toward the
    lexicographically smaller token-id sequence."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ann = np.asarray(annotations, dtype=np.float64)
    h, c = init_state(ann, params)
    # candidate: (ids, logprob_sum, h, c); finished candidates leave the beam
    alive = [([START_ID], 0.0, h, c)]
    done = []  # (mean_logprob, ids)

    while alive and len(alive[0][0]) < max_len:
        expansions = []
        for ids, lp_sum, h, c in alive:
            logits, nh, nc, _ = _step_forward(ann, ids[-1], h, c, params, attn, False, None)
            logp = log_softmax(logits)
            logp[PAD_ID] = -np.inf
            n_emitted = len(ids)  # tokens after START once we add one more
            for tok in range(len(logp)):
                if tok == PAD_ID:
                    continue
                total = lp_sum + float(logp[tok])
                expansions.append((-(total / n_emitted), ids + [tok], total, nh, nc))
        expansions.sort(key=lambda e: (e[0], e[1]))
        survivors = expansions[:beam]
        alive = []
        for neg_mean, ids, total, nh, nc in survivors:
            if ids[-1] == END_ID:
                done.append((-neg_mean, ids))
            else:
                alive.append((ids, total, nh, nc))

    for ids, lp_sum, _, _ in alive:  # max_len reached without END
        done.append((lp_sum / (len(ids) - 1), ids))
    best = min(done, key=lambda d: (-d[0], d[1]))
    return TokenSequence(best[1])


def sequence_mean_logprob(annotations, ids, params: DecoderParams, attn: AttentionParams) -> float:
    """Mean log-prob the model assigns to an id sequence (diagnostic; the
    quantity beam search maximizes)."""
    ann = np.asarray(annotations, dtype=np.float64)
    h, c = init_state(ann, params)
    total = 0.0
    for t in range(1, len(ids)):
        logits, h, c, _ = _step_forward(ann, ids[t - 1], h, c, params, attn, False, None)
        total += float(log_softmax(logits)[ids[t]])
    return total / (len(ids) - 1)
