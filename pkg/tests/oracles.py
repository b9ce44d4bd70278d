"""Independent brute-force oracles for the feature and metric tests.

Everything here is deliberately written as plain Python loops over the
definitions, sharing no code with the package implementations.
"""

import math


def mean_oracle(xs):
    total = 0.0
    for v in xs:
        total += v
    return total / len(xs)


def sample_var_oracle(xs):
    mu = mean_oracle(xs)
    total = 0.0
    for v in xs:
        total += (v - mu) ** 2
    return total / (len(xs) - 1)


def sdnn_oracle(rr):
    return math.sqrt(sample_var_oracle(rr))


def rmssd_oracle(rr):
    total = 0.0
    for a, b in zip(rr, rr[1:]):
        total += (b - a) ** 2
    return math.sqrt(total / (len(rr) - 1))


def csi_oracle(rr):
    """Poincare-plot axes from the scatter of successive pairs."""
    diffs = [b - a for a, b in zip(rr, rr[1:])]
    var_d = sample_var_oracle(diffs)
    var_rr = sample_var_oracle(rr)
    sd1 = math.sqrt(var_d / 2.0)
    sd2_sq = 2.0 * var_rr - var_d / 2.0
    if sd1 == 0.0 or sd2_sq < 0.0:
        return 0.0
    return math.sqrt(sd2_sq) / sd1


def sampen_oracle(rr, m=2, r=None):
    """Direct O(N^2) template count, Chebyshev distance, no self-matches."""
    n = len(rr)
    if r is None:
        r = 0.2 * sdnn_oracle(rr)
    n_templates = n - m

    def count(length):
        matches = 0
        for i in range(n_templates):
            for j in range(i + 1, n_templates):
                dist = 0.0
                for k in range(length):
                    dist = max(dist, abs(rr[i + k] - rr[j + k]))
                if dist <= r:
                    matches += 1
        return matches

    b = count(m)
    a = count(m + 1)
    if a == 0 or b == 0:
        return 0.0
    return -math.log(a / b)


def rqa_oracle(rr, eps=None, min_line=2):
    """Direct diagonal-line scan of the recurrence matrix."""
    n = len(rr)
    if eps is None:
        eps = 0.2 * sdnn_oracle(rr)
    rec = [[1 if abs(rr[i] - rr[j]) <= eps else 0 for j in range(n)] for i in range(n)]

    total = 0
    for i in range(n):
        for j in range(n):
            if i != j and rec[i][j]:
                total += 1
    if total == 0:
        return 0.0, 0.0
    if total == n * n - n:  # fully recurrent plot: deterministic by convention
        det = 1.0
    else:
        det = None

    lengths = []
    for k in range(1, n):
        run = 0
        for i in range(n - k):
            if rec[i][i + k]:
                run += 1
            else:
                if run >= min_line:
                    lengths.append(run)
                run = 0
        if run >= min_line:
            lengths.append(run)

    if det is None:
        in_lines = 0
        for length in lengths:
            in_lines += length
        det = 2.0 * in_lines / total if lengths else 0.0
    if not lengths:
        return det, 0.0
    counts = {}
    for length in lengths:
        counts[length] = counts.get(length, 0) + 1
    n_lines = sum(counts.values())
    entropy = 0.0
    for c in counts.values():
        p = c / n_lines
        entropy -= p * math.log(p)
    return det, entropy


def auc_oracle(labels, scores):
    """Pair counting: P(score+ > score-) + 0.5 P(tie)."""
    correct = 0.0
    n_pairs = 0
    for yi, si in zip(labels, scores):
        if yi != 1:
            continue
        for yj, sj in zip(labels, scores):
            if yj != 0:
                continue
            n_pairs += 1
            if si > sj:
                correct += 1.0
            elif si == sj:
                correct += 0.5
    return correct / n_pairs


def ap_oracle(labels, scores):
    """Threshold sweep over distinct scores, descending, ties grouped."""
    n_pos = sum(1 for y in labels if y == 1)
    thresholds = sorted(set(scores), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        tp = sum(1 for y, s in zip(labels, scores) if s >= t and y == 1)
        fp = sum(1 for y, s in zip(labels, scores) if s >= t and y == 0)
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def log_loss_oracle(labels, probs, clip=1e-15):
    total = 0.0
    for y, p in zip(labels, probs):
        p = min(max(p, clip), 1.0 - clip)
        total += -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return total / len(labels)


def relu(v):
    return v if v > 0 else 0.0


def matvec(w, x):
    """w is (n_in, n_out) nested lists; x length n_in."""
    n_in = len(w)
    n_out = len(w[0])
    out = [0.0] * n_out
    for j in range(n_out):
        for i in range(n_in):
            out[j] += x[i] * w[i][j]
    return out


def np_encode_oracle(weights, xs, ys, clamp=10.0):
    """Loop re-implementation of the encoder forward pass."""
    reps = []
    for x, y in zip(xs, ys):
        v = list(x) + [float(y)]
        for layer in ("enc_w1", "enc_w2", "enc_w3"):
            b = layer.replace("w", "b")
            v = [relu(a + bb) for a, bb in zip(matvec(weights[layer], v), weights[b])]
        reps.append(v)
    rbar = [mean_oracle([r[i] for r in reps]) for i in range(len(reps[0]))]
    mu = [a + b for a, b in zip(matvec(weights["enc_mu_w"], rbar), weights["enc_mu_b"])]
    lv = [a + b for a, b in zip(matvec(weights["enc_lv_w"], rbar), weights["enc_lv_b"])]
    lv = [min(max(v, -clamp), clamp) for v in lv]
    return mu, lv


def np_decode_oracle(weights, z, xs):
    """Loop re-implementation of the decoder forward pass (no dropout)."""
    out = []
    for x in xs:
        v = list(x) + list(z)
        for layer in ("dec_w1", "dec_w2", "dec_w3"):
            b = layer.replace("w", "b")
            v = [relu(a + bb) for a, bb in zip(matvec(weights[layer], v), weights[b])]
        u = matvec(weights["dec_out_w"], v)[0] + weights["dec_out_b"][0]
        out.append(1.0 / (1.0 + math.exp(-u)))
    return out
