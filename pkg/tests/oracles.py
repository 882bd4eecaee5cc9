"""Independent oracles shared by the test modules.

The gradient oracle recomputes forwards in float64 and compares analytic
reverse-mode gradients against central finite differences; it never calls
an op's backward rule itself. The SSIM and bilinear oracles are direct
loop/formula evaluations kept deliberately separate from the library path
they check.
"""

import numpy as np

from dmvfn.tensor import Tensor


def gradcheck(forward, leaves, tol=1e-3, h=1e-3, max_coords=None, seed=0):
    """Central finite-difference check of reverse-mode gradients.

    ``forward()`` must build a scalar from the current ``leaves`` data
    (float64). Each leaf coordinate (or a random subset of ``max_coords``)
    is perturbed by +-h; the analytic gradient must match the difference
    quotient within ``tol`` relative to the gradient scale.
    """
    for leaf in leaves:
        assert leaf.data.dtype == np.float64, "gradcheck requires float64 leaves"
        leaf.requires_grad = True
        leaf.grad = None
    out = forward()
    out.backward()
    analytic = [np.array(l.grad, copy=True) if l.grad is not None else np.zeros_like(l.data)
                for l in leaves]

    rng = np.random.default_rng(seed)
    for leaf in leaves:
        leaf.requires_grad = False
    try:
        for li, leaf in enumerate(leaves):
            flat = leaf.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            errs, mags = [], []
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = float(forward().data)
                flat[c] = orig - h
                fm = float(forward().data)
                flat[c] = orig
                fd = (fp - fm) / (2.0 * h)
                errs.append(abs(analytic[li].reshape(-1)[c] - fd))
                mags.append(abs(fd))
            # relative to the leaf's gradient scale, with a small absolute floor
            scale = max(np.abs(analytic[li]).max(), max(mags, default=0.0))
            threshold = max(tol * scale, 1e-7)
            worst = max(errs, default=0.0)
            assert worst <= threshold, (
                f"gradient mismatch on leaf {li}: max err {worst:.3e} > {threshold:.3e}"
            )
    finally:
        for leaf in leaves:
            leaf.requires_grad = True


def tensors(*arrays):
    """Wrap float64 numpy arrays as leaves for gradcheck."""
    return [Tensor(np.asarray(a, dtype=np.float64)) for a in arrays]


def bilinear_reference(row, out_w):
    """Scalar half-pixel-center bilinear resampling of a 1-d row."""
    n_in = len(row)
    scale = n_in / out_w
    out = []
    for d in range(out_w):
        src = (d + 0.5) * scale - 0.5
        x0 = int(np.floor(src))
        f = src - x0
        lo = min(max(x0, 0), n_in - 1)
        hi = min(max(x0 + 1, 0), n_in - 1)
        out.append((1 - f) * row[lo] + f * row[hi])
    return np.array(out)


def ssim_bruteforce(a, b, window, k1=0.01, k2=0.03):
    """Direct-loop single-scale SSIM on (C,H,W) float64 images.

    Slides the window over every valid position with explicit loops;
    channel maps are averaged. This is the independent check for the
    library's convolution-based implementation.
    """
    c1, c2 = k1 ** 2, k2 ** 2
    cch, h, w = a.shape
    ws = window.shape[0]
    vals = []
    for ch in range(cch):
        for i in range(h - ws + 1):
            for j in range(w - ws + 1):
                pa = a[ch, i:i + ws, j:j + ws]
                pb = b[ch, i:i + ws, j:j + ws]
                mu1 = (window * pa).sum()
                mu2 = (window * pb).sum()
                s1 = (window * pa * pa).sum() - mu1 * mu1
                s2 = (window * pb * pb).sum() - mu2 * mu2
                s12 = (window * pa * pb).sum() - mu1 * mu2
                lum = (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
                cs = (2 * s12 + c2) / (s1 + s2 + c2)
                vals.append(lum * cs)
    return float(np.mean(vals))


def adamw_reference(w0, grads, lr, beta1, beta2, eps, weight_decay):
    """Scalar AdamW trajectory in float64, decoupled decay."""
    w = float(w0)
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w = w - lr * weight_decay * w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return w
