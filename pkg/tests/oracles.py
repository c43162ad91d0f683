"""Independent oracles used by the test suite.

Everything here is written from first principles (nested loops, direct
formulas) and deliberately shares no code with the package under test.
"""

import numpy as np


# ---------------------------------------------------------------------------
# Degradation oracles


def naive_pyramid_down(img):
    """Direct 5x5 binomial convolution with reflect padding, sampled at
    even coordinates."""
    k1 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    kernel = np.outer(k1, k1)
    h, w = img.shape
    padded = np.pad(img, 2, mode="reflect")
    smoothed = np.zeros_like(img, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            patch = padded[i : i + 5, j : j + 5]
            smoothed[i, j] = float(np.sum(patch * kernel))
    return smoothed[::2, ::2]


def naive_bilinear_up(img, th, tw):
    """Closed-form corner-aligned bilinear evaluation, one output pixel
    at a time."""
    h, w = img.shape
    out = np.zeros((th, tw), dtype=np.float64)
    for i in range(th):
        y = i * (h - 1) / (th - 1) if th > 1 else 0.0
        y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
        fy = y - y0
        for j in range(tw):
            x = j * (w - 1) / (tw - 1) if tw > 1 else 0.0
            x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
            fx = x - x0
            if h == 1 and w == 1:
                out[i, j] = img[0, 0]
                continue
            y1 = min(y0 + 1, h - 1)
            x1 = min(x0 + 1, w - 1)
            out[i, j] = (
                img[y0, x0] * (1 - fy) * (1 - fx)
                + img[y0, x1] * (1 - fy) * fx
                + img[y1, x0] * fy * (1 - fx)
                + img[y1, x1] * fy * fx
            )
    return out


# ---------------------------------------------------------------------------
# SSIM oracle: direct per-window formula with an explicit 2D Gaussian window


def gaussian_window_2d(size=11, sigma=1.5):
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    w = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return w / w.sum()


def naive_ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, drange=1.0):
    """Mean of the local SSIM index over all fully contained windows,
    computed window by window with weighted moments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = gaussian_window_2d(window_size, sigma)
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2
    h, ww = a.shape
    vals = []
    for i in range(h - window_size + 1):
        for j in range(ww - window_size + 1):
            pa = a[i : i + window_size, j : j + window_size]
            pb = b[i : i + window_size, j : j + window_size]
            mu_a = float(np.sum(w * pa))
            mu_b = float(np.sum(w * pb))
            var_a = float(np.sum(w * pa * pa)) - mu_a * mu_a
            var_b = float(np.sum(w * pb * pb)) - mu_b * mu_b
            cov = float(np.sum(w * pa * pb)) - mu_a * mu_b
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Metric oracle: per-pixel python loop


def brute_force_counts(pred, gt):
    tp = fp = fn = tn = 0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            p = pred[i, j] != 0
            g = gt[i, j] != 0
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif not p and g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def brute_force_metrics(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    iou = tp / (tp + fp + fn)
    dice = 2 * tp / (2 * tp + fp + fn)
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    return iou, dice, recall, precision


# ---------------------------------------------------------------------------
# Finite differences


def fd_grad(f, x, eps=1e-5):
    """Dense central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = f(x)
        flat[k] = orig - eps
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * eps)
    return grad


def fd_grad_entries(f, arr, indices, eps=1e-5):
    """Central differences at selected flat indices of `arr`; `f` takes no
    arguments and reads `arr` in place."""
    flat = arr.reshape(-1)
    out = []
    for k in indices:
        orig = flat[k]
        flat[k] = orig + eps
        fp = f()
        flat[k] = orig - eps
        fm = f()
        flat[k] = orig
        out.append((fp - fm) / (2.0 * eps))
    return np.array(out)


def max_rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# Mesh oracles


def mesh_edge_counts(faces):
    """Map each undirected edge to the number of faces that use it."""
    faces = np.asarray(faces)
    if faces.size == 0:
        return np.zeros((0, 2), dtype=int), np.zeros(0, dtype=int)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq, counts


def euler_characteristic(verts, faces):
    uniq, _ = mesh_edge_counts(faces)
    return len(verts) - len(uniq) + len(faces)


def is_watertight(faces):
    _, counts = mesh_edge_counts(faces)
    return counts.size > 0 and bool((counts == 2).all())


def mesh_volume(verts, faces):
    """Enclosed volume by the signed-tetrahedron sum over faces."""
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces)
    if faces.size == 0:
        return 0.0
    p0 = verts[faces[:, 0]]
    p1 = verts[faces[:, 1]]
    p2 = verts[faces[:, 2]]
    return float(abs(np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum()) / 6.0)
