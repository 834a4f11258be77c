"""Independent reference computations the implementation is checked against.

Each oracle is deliberately written the slow, literal way (explicit loops,
no shared helpers with the package) so that a bug cannot hide in both.
"""

from __future__ import annotations

import math

import numpy as np


def circular_convolve_bruteforce(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[i, j] = sum_{u,v} k[u, v] * x[(i - u + cy) mod H, (j - v + cx) mod W]."""
    h, w = image.shape
    kh, kw = kernel.shape
    cy, cx = kh // 2, kw // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in range(kh):
                for v in range(kw):
                    acc += kernel[u, v] * image[(i - u + cy) % h, (j - v + cx) % w]
            out[i, j] = acc
    return out


def circular_convolve_shifts(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Vectorized form of the same sum via np.roll, fast enough for 50 cases."""
    kh, kw = kernel.shape
    cy, cx = kh // 2, kw // 2
    out = np.zeros_like(image, dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            out += kernel[u, v] * np.roll(image, (u - cy, v - cx), axis=(0, 1))
    return out


def sn2n_loss_scalar(f1, f2, y1, y2, lam1: float) -> float:
    """Literal per-pixel loop over the three mean-squared terms."""
    f1, f2, y1, y2 = (np.asarray(a, dtype=np.float64).ravel() for a in (f1, f2, y1, y2))
    n = f1.size
    a = b = c = 0.0
    for i in range(n):
        a += (f1[i] - y2[i]) ** 2
        b += (f2[i] - y1[i]) ** 2
        c += (f1[i] - f2[i]) ** 2
    return a / n + b / n + lam1 * c / n


def deblur_loss_scalar(x_hat, y_prime, b, kernel, lam2: float, regularize: bool = True) -> float:
    """Both terms with the blur evaluated by the shift-sum oracle."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    y = np.asarray(y_prime, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    hx = circular_convolve_shifts(x_hat, kernel)
    first = float(np.mean((hx - (y - b)) ** 2))
    second = float(np.mean((hx - y) ** 2))
    return first + (lam2 * second if regularize else 0.0)


def ssim_reference(a: np.ndarray, b: np.ndarray, win: int = 7, L: float = 1.0) -> float:
    """Windowed SSIM with population statistics, written with plain loops."""
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i : i + win, j : j + win].ravel()
            pb = b[i : i + win, j : j + win].ravel()
            ma, mb = pa.mean(), pb.mean()
            va = ((pa - ma) ** 2).mean()
            vb = ((pb - mb) ** 2).mean()
            cov = ((pa - ma) * (pb - mb)).mean()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def psnr_reference(a, b, peak=1.0) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return 100.0 if mse < 1e-20 else 10 * math.log10(peak * peak / mse)


def richardson_lucy_literal(y: np.ndarray, kernel: np.ndarray, iterations: int) -> np.ndarray:
    """x <- x * (k^T (y / (k x))) with spatial circular sums, flat start."""
    flipped = kernel[::-1, ::-1]
    # the flipped kernel's center moves for even sizes; odd kernels only here
    assert kernel.shape[0] % 2 == 1 and kernel.shape[1] % 2 == 1
    x = np.full_like(y, y.mean())
    for _ in range(iterations):
        ratio = y / np.maximum(circular_convolve_shifts(x, kernel), 1e-12)
        x = x * circular_convolve_shifts(ratio, flipped)
    return x


def least_squares_descent(y: np.ndarray, kernel: np.ndarray, steps: int) -> tuple[np.ndarray, float]:
    """Gradient descent on ||k*x - y||^2 in the pixel domain, step 1/max|H|^2.

    The blur and its adjoint are wrapped spatial filters from scipy.ndimage,
    so this oracle shares no Fourier code with the implementation.
    """
    from scipy import ndimage

    assert kernel.shape[0] % 2 == 1 and kernel.shape[1] % 2 == 1
    x = np.zeros_like(y)
    # max |H| of a non-negative unit-sum kernel is its DC value 1
    eta = 1.0
    for _ in range(steps):
        r = ndimage.convolve(x, kernel, mode="wrap") - y
        x = x - eta * ndimage.correlate(r, kernel, mode="wrap")
    r = ndimage.convolve(x, kernel, mode="wrap") - y
    return x, float(np.sum(r**2))


def blur_matrix(kernel: np.ndarray, shape) -> np.ndarray:
    """Dense matrix of circular convolution, one column per unit impulse."""
    h, w = shape
    cols = []
    for k in range(h * w):
        e = np.zeros(h * w)
        e[k] = 1.0
        cols.append(circular_convolve_shifts(e.reshape(h, w), kernel).ravel())
    return np.stack(cols, axis=1)


def linear_bias_minimizer(y: np.ndarray, kernel: np.ndarray, gain: float, lam2: float) -> np.ndarray:
    """argmin_b of the deblurring loss with x_hat = gain * (y - b), by dense
    least squares on the stacked residuals."""
    n = y.size
    A = gain * blur_matrix(kernel, y.shape)
    I = np.eye(n)
    yv = y.ravel()
    # residual 1: (A - I)(y - b) = (A - I) y - (A - I) b
    # residual 2: sqrt(lam2) (A (y - b) - y)
    M = np.vstack([-(A - I), -np.sqrt(lam2) * A])
    rhs = -np.concatenate([(A - I) @ yv, np.sqrt(lam2) * (A @ yv - yv)])
    b, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return b.reshape(y.shape)
