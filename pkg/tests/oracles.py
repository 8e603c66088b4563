"""Independent scalar reference implementations used as test oracles.

Everything here is plain Python over lists of floats so that it shares no
code path with the tensor implementation under test.
"""

from __future__ import annotations

import math


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def relu(x):
    return x if x > 0 else 0.0


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def matvec(W, x):
    return [sum(w * v for w, v in zip(row, x)) for row in W]


def linear(W, b, x):
    y = matvec(W, x)
    return [yi + bi for yi, bi in zip(y, b)] if b is not None else y


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def gat(nodes, mask, theta, a, slope=0.2, self_twice=True):
    """Single-head GAT over a fully connected masked graph, scalar loops."""
    h = [matvec(theta, g) for g in nodes]
    C = len(h[0])
    n = len(nodes)
    alpha = [[0.0] * n for _ in range(n)]
    out = [[0.0] * C for _ in range(n)]
    for i in range(n):
        if not mask[i]:
            continue
        js = [j for j in range(n) if mask[j]]
        scores = [leaky(sum(a[c] * h[i][c] for c in range(C)) + sum(a[C + c] * h[j][c] for c in range(C)), slope)
                  for j in js]
        for j, p in zip(js, softmax(scores)):
            alpha[i][j] = p
        for c in range(C):
            acc = sum(alpha[i][j] * h[j][c] for j in js)
            if self_twice:
                acc += alpha[i][i] * h[i][c]
            out[i][c] = acc
    return out, alpha


def mlp(W1, b1, W2, b2, x):
    return linear(W2, b2, [relu(v) for v in linear(W1, b1, x)])


def channel_gate(W1, b1, W2, b2, descriptor):
    return [sigmoid(v) for v in linear(W2, b2, [relu(v) for v in linear(W1, b1, descriptor)])]


def ieg_refine(f, present, W3, b3, lam=0.5):
    """Refined entity features: neighbour features, pairwise attention summed over queries,
    mean over weighted neighbour rows plus a residual."""
    E, C = len(f), len(f[0])
    valid = [e for e in range(E) if present[e]]
    n = len(valid)
    S = [[0.0] * C for _ in range(E)]
    for u in valid:
        z = linear(W3, b3, f[u])
        g = sum(z) / C
        S[u] = [lam * f[u][c] + (1 - lam) * g / max(n - 1, 1) for c in range(C)]
    out = [[0.0] * C for _ in range(E)]
    for e in range(E):
        if not present[e]:
            continue
        nb = [u for u in valid if u != e]
        ctx = [0.0] * C
        if nb:
            W = {u: 0.0 for u in nb}
            for q in nb:
                p = softmax([sum(S[k][c] * S[q][c] for c in range(C)) / math.sqrt(C) for k in nb])
                for k, pk in zip(nb, p):
                    W[k] += pk
            for u in nb:
                for c in range(C):
                    ctx[c] += W[u] * S[u][c] / len(nb)
        out[e] = [f[e][c] + ctx[c] for c in range(C)]
    return out


def gru_cell(x, h, Wih, Whh, bih, bhh):
    """PyTorch GRU gate layout (r, z, n)."""
    H = len(h)
    gi = linear(Wih, bih, x)
    gh = linear(Whh, bhh, h)
    r = [sigmoid(gi[i] + gh[i]) for i in range(H)]
    z = [sigmoid(gi[H + i] + gh[H + i]) for i in range(H)]
    n = [math.tanh(gi[2 * H + i] + r[i] * gh[2 * H + i]) for i in range(H)]
    return [(1 - z[i]) * n[i] + z[i] * h[i] for i in range(H)]


def bigru(xs, fwd, bwd):
    """fwd/bwd are (Wih, Whh, bih, bhh); returns concatenated states per step."""
    H = len(fwd[1][0])
    hf, hb = [0.0] * H, [0.0] * H
    outf, outb = [], [None] * len(xs)
    for x in xs:
        hf = gru_cell(x, hf, *fwd)
        outf.append(hf)
    for t in reversed(range(len(xs))):
        hb = gru_cell(xs[t], hb, *bwd)
        outb[t] = hb
    return [a + b for a, b in zip(outf, outb)]


def cross_entropy(logits, label):
    m = max(logits)
    return -(logits[label] - m - math.log(sum(math.exp(v - m) for v in logits)))


# ---------------------------------------------------------------- segments

def frame_iou(a, b):
    """IoU of inclusive (start, end) ranges computed on explicit frame sets."""
    fa, fb = set(range(a[0], a[1] + 1)), set(range(b[0], b[1] + 1))
    return len(fa & fb) / len(fa | fb)


def greedy_counts(pred, gt, k):
    """Greedy matching in prediction order on frame sets; returns (tp, fp, fn)."""
    used = set()
    tp = 0
    for p in pred:
        cands = [(frame_iou(p, g), -j) for j, g in enumerate(gt) if g[2] == p[2]]
        if cands:
            iou, negj = max(cands)
            if iou >= k and -negj not in used:
                used.add(-negj)
                tp += 1
    return tp, len(pred) - tp, len(gt) - len(used)


def optimal_tp(pred, gt, k):
    """Largest number of disjoint same-class pairs with IoU >= k (recursive search)."""
    edges = [[j for j, g in enumerate(gt) if g[2] == p[2] and frame_iou(p, g) >= k] for p in pred]

    def best(i, used):
        if i == len(pred):
            return 0
        top = best(i + 1, used)
        for j in edges[i]:
            if j not in used:
                top = max(top, 1 + best(i + 1, used | {j}))
        return top

    return best(0, frozenset())


def random_partition(rng, n_frames, max_segments, n_classes):
    """Contiguous labelled segments covering [0, n_frames)."""
    n = rng.randint(1, max_segments)
    cuts = sorted(rng.sample(range(1, n_frames), n - 1)) if n > 1 else []
    edges = [0, *cuts, n_frames]
    return [(edges[i], edges[i + 1] - 1, rng.randrange(n_classes)) for i in range(n)]


def f1(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0
