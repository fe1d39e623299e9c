import numpy as np
import pytest

from pyrcodec import autodiff as ad


@pytest.fixture
def f64():
    """Run a test under float64 so finite differences are out of the noise."""
    with ad.using_dtype(np.float64):
        yield


def numeric_grad(f, tensor, h=1e-3, coords=None):
    """Central finite differences of a scalar-valued f() w.r.t. tensor.data."""
    if coords is None:
        coords = [
            np.unravel_index(i, tensor.data.shape) for i in range(tensor.data.size)
        ]
    out = np.zeros(len(coords))
    for n, idx in enumerate(coords):
        old = tensor.data[idx]
        tensor.data[idx] = old + h
        fp = float(f().data)
        tensor.data[idx] = old - h
        fm = float(f().data)
        tensor.data[idx] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def check_gradients(f, tensors, h=1e-3, rtol=1e-4, coords_per_tensor=None):
    """Assert reverse-mode grads match central differences for every tensor."""
    for t in tensors:
        t.grad = None
    out = f()
    ad.backward(out)
    worst = 0.0
    for t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if coords_per_tensor is None:
            coords = [
                np.unravel_index(i, t.data.shape) for i in range(t.data.size)
            ]
        else:
            rng = np.random.default_rng(0)
            n = min(coords_per_tensor, t.data.size)
            flat = rng.choice(t.data.size, size=n, replace=False)
            coords = [np.unravel_index(i, t.data.shape) for i in flat]
        num = numeric_grad(f, t, h, coords)
        for val, idx in zip(num, coords):
            den = max(abs(val), abs(g[idx]), 1e-6)
            worst = max(worst, abs(val - g[idx]) / den)
    assert worst < rtol, f"gradient mismatch: worst rel err {worst:.3e}"
    return worst


def away_from_kinks(rng, shape, margin=0.05):
    """Uniform values in [-1,1] nudged away from 0 so relu/abs FD is clean."""
    x = rng.uniform(-1.0, 1.0, size=shape)
    x = x + np.sign(x) * margin
    return np.clip(x, -1.0, 1.0)


def natural_crop(size, seed, offset=None):
    """A crop of a real photograph (skimage's astronaut portrait)."""
    import skimage.data

    img = skimage.data.astronaut()
    rng = np.random.default_rng(seed)
    if offset is None:
        r = int(rng.integers(0, img.shape[0] - size))
        c = int(rng.integers(0, img.shape[1] - size))
    else:
        r, c = offset
    return np.ascontiguousarray(img[r:r + size, c:c + size])


def synthetic_image(size, seed, kind="blobs"):
    """Procedural test content: gradients, blobs, edges, or pure noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    if kind == "gradient":
        img = np.stack([yy, xx, 0.5 * (yy + xx)], axis=-1)
    elif kind == "edges":
        img = np.zeros((size, size, 3))
        for _ in range(4):
            r = int(rng.integers(1, size))
            img[:r, :, rng.integers(0, 3)] += 0.4
        img += 0.2 * xx[..., None]
        img = np.clip(img, 0, 1)
    elif kind == "noise":
        img = rng.uniform(0, 1, (size, size, 3))
    else:  # blobs
        img = np.full((size, size, 3), 0.4)
        for _ in range(6):
            cy, cx = rng.uniform(0, 1, 2)
            s = rng.uniform(0.05, 0.3)
            amp = rng.uniform(-0.5, 0.5, 3)
            g = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)))
            img += g[..., None] * amp
        img = np.clip(img, 0, 1)
    return (img * 255).astype(np.uint8)
