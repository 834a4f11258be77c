"""Self-supervised defocus deblurring of multi-frame low-light sequences with a
learnable noise-bias field."""

__version__ = "0.1.0"

from .imaging import Image, Psf, convolve, load_image, psnr, quality, save_image, ssim  # noqa: E402

__all__ = ["Image", "Psf", "convolve", "load_image", "psnr", "quality", "save_image", "ssim", "__version__"]
