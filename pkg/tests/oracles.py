"""Independent oracles shared by unit and acceptance tests."""
import numpy as np


def inside_box(points, center, dims, yaw):
    """Point-in-box test written directly from the cuboid definition."""
    c, s = np.cos(yaw), np.sin(yaw)
    d = points - np.asarray(center)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    lz = d[:, 2]
    l, w, h = dims
    return (np.abs(lx) <= l / 2) & (np.abs(ly) <= w / 2) & (np.abs(lz) <= h / 2)


def monte_carlo_iou_3d(a, b, n, rng, chunk=250_000):
    """Volume IoU from uniform samples inside box ``a``."""
    hits = 0
    done = 0
    c, s = np.cos(a.yaw), np.sin(a.yaw)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    while done < n:
        m = min(chunk, n - done)
        local = (rng.random((m, 3)) - 0.5) * a.dims
        pts = local @ R.T + a.center
        hits += int(inside_box(pts, b.center, b.dims, b.yaw).sum())
        done += m
    inter = hits / n * a.volume
    return inter / (a.volume + b.volume - inter)


def monte_carlo_iou_3d_fast(a, b, n, rng):
    """Same estimator as :func:`monte_carlo_iou_3d`, with samples mapped straight into ``b``'s frame in float32."""
    rel = a.yaw - b.yaw
    c, s = np.float32(np.cos(rel)), np.float32(np.sin(rel))
    cb, sb = np.cos(b.yaw), np.sin(b.yaw)
    d = a.center - b.center
    off = np.array([cb * d[0] + sb * d[1], -sb * d[0] + cb * d[1], d[2]], dtype=np.float32)
    u = rng.random((3, n), dtype=np.float32) - np.float32(0.5)
    u *= a.dims.astype(np.float32)[:, None]
    half = (b.dims / 2).astype(np.float32)
    x = c * u[0] - s * u[1] + off[0]
    y = s * u[0] + c * u[1] + off[1]
    z = u[2] + off[2]
    hits = int(np.count_nonzero((np.abs(x) <= half[0]) & (np.abs(y) <= half[1]) & (np.abs(z) <= half[2])))
    inter = hits / n * a.volume
    return inter / (a.volume + b.volume - inter)


def monte_carlo_iou_bev(a, b, n, rng, chunk=1_000_000):
    """Area IoU from uniform samples over the joint bounding square."""
    ra = 0.5 * np.hypot(*a.dims[:2])
    rb = 0.5 * np.hypot(*b.dims[:2])
    lo = np.minimum(a.center[:2] - ra, b.center[:2] - rb)
    hi = np.maximum(a.center[:2] + ra, b.center[:2] + rb)
    ia = ib = both = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        xy = lo + rng.random((m, 2)) * (hi - lo)
        pts = np.column_stack([xy, np.zeros(m)])
        ina = inside_box(pts, (a.center[0], a.center[1], 0), (a.dims[0], a.dims[1], 1), a.yaw)
        inb = inside_box(pts, (b.center[0], b.center[1], 0), (b.dims[0], b.dims[1], 1), b.yaw)
        ia += int(ina.sum())
        ib += int(inb.sum())
        both += int((ina & inb).sum())
        done += m
    return both / (ia + ib - both)


def brute_force_nms(scores, overlaps, threshold):
    """Greedy NMS by explicit rule checking: a box survives iff no higher-ranked survivor overlaps it."""
    n = len(scores)
    rank = sorted(range(n), key=lambda i: (-scores[i], i))
    alive = {}
    for i in rank:
        alive[i] = not any(alive.get(j) and overlaps[i][j] > threshold for j in rank[:rank.index(i)])
    return [i for i in rank if alive[i]]


def greedy_match_oracle(scores, ious, thresh):
    """Score-ordered greedy matching via explicit search over all pairs."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    used = set()
    result = [-1] * len(scores)
    for i in order:
        best, best_j = -1.0, -1
        for j in range(len(ious[i])):
            if j not in used and ious[i][j] > best:
                best, best_j = ious[i][j], j
        if best_j >= 0 and best >= thresh:
            result[i] = best_j
            used.add(best_j)
    return result


def pr_auc_oracle(items, num_gt):
    """All-point AP from (score, tp_weight, is_tp) tuples, computed point by point."""
    items = sorted(items, key=lambda x: -x[0])
    precisions, recalls = [], []
    tp_w = 0.0
    tp = 0
    for k, (_, w, is_tp) in enumerate(items, 1):
        tp_w += w
        tp += is_tp
        precisions.append(tp_w / k)
        recalls.append(tp / num_gt)
    ap, prev_r = 0.0, 0.0
    for k in range(len(items)):
        ap += (recalls[k] - prev_r) * max(precisions[k:])
        prev_r = recalls[k]
    return ap


def central_difference(f, arr, h=1e-5, indices=None):
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def relative_error(a, b):
    """Norm-wise relative error between analytic and numeric gradients."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def forward_oracle(layers, x):
    """Layer-by-layer forward with explicit loops; ``layers`` = [(W, b, act)]."""
    a = [float(v) for v in x]
    for W, b, act in layers:
        z = []
        for r in range(W.shape[0]):
            s = float(b[r])
            for c in range(W.shape[1]):
                s += float(W[r, c]) * a[c]
            z.append(s)
        if act == "relu":
            a = [max(0.0, v) for v in z]
        elif act == "logistic":
            a = [1.0 / (1.0 + np.exp(-v)) for v in z]
        else:
            a = z
    return np.array(a)
