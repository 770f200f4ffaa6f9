"""
Image processing module.
Decodes the image references found in manifests into channels-first float tensors:
raw .npy tensors, lossless .png rasters and inline base-16 pixel blocks.
"""

import logging
import os
import re
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from src.exceptions import DataError

logger = logging.getLogger(__name__)

HEX_PREFIX = "hex:"
_HEX_BLOCK = re.compile(r"^hex:(\d+)x(\d+)x(\d+):([0-9a-fA-F]*)$")


class ImageProcessor:
    """
    Turns image references into C×H×W float64 arrays with values in [0, 1] for rasters.
    """

    def __init__(self, base_dir: str = ".", expected_shape: Optional[Tuple[int, int, int]] = None):
        """
        Initialize the image processor.

        Args:
            base_dir (str): Directory relative paths are resolved against
            expected_shape (tuple, optional): Reject images whose C×H×W differs
        """
        self.base_dir = base_dir
        self.expected_shape = tuple(expected_shape) if expected_shape else None

        self.supported_formats = {'.npy', '.png'}

    def validate_image(self, reference: str) -> bool:
        """
        Check whether a reference is something this processor can decode.

        Args:
            reference (str): Inline hex block or file path

        Returns:
            bool: True if the reference looks decodable
        """
        if reference.startswith(HEX_PREFIX):
            return bool(_HEX_BLOCK.match(reference))
        return Path(reference).suffix.lower() in self.supported_formats

    def load(self, reference: str) -> np.ndarray:
        """
        Decode one image reference.

        Args:
            reference (str): `hex:CxHxW:<bytes>`, or a path to a .npy or .png file

        Returns:
            np.ndarray: C×H×W float64 image
        """
        reference = reference.strip()
        if reference.startswith(HEX_PREFIX):
            image = decode_hex_block(reference)
        else:
            path = reference if os.path.isabs(reference) else os.path.join(self.base_dir, reference)
            suffix = Path(path).suffix.lower()
            if suffix not in self.supported_formats:
                raise DataError(f"Unsupported image format '{suffix}' for {reference}")
            if not os.path.exists(path):
                raise DataError(f"Image file '{reference}' not found")
            image = load_npy(path) if suffix == '.npy' else load_png(path)

        if image.ndim != 3:
            raise DataError(f"Image {reference[:40]} must be C×H×W, got shape {image.shape}")
        if not np.all(np.isfinite(image)):
            raise DataError(f"Image {reference[:40]} contains non-finite values")
        if self.expected_shape and image.shape != self.expected_shape:
            raise DataError(f"Image {reference[:40]} has shape {image.shape}, expected {self.expected_shape}")
        return image


def load_npy(path: str) -> np.ndarray:
    try:
        array = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DataError(f"Could not read tensor file {path}: {e}")
    return np.ascontiguousarray(array, dtype=np.float64)


def load_png(path: str) -> np.ndarray:
    """Decode a PNG to channels-first float64 in [0, 1]; grayscale yields one channel."""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise DataError(f"{path} is not a PNG file")
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"Could not decode image {path}: {e}")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return np.ascontiguousarray(pixels.transpose(2, 0, 1), dtype=np.float64) / 255.0


def save_png(path: str, image: np.ndarray):
    """Write a C×H×W image in [0, 1] (C = 1 or 3) as a PNG."""
    pixels = to_uint8(image)
    if pixels.shape[0] == 1:
        Image.fromarray(pixels[0], mode="L").save(path, format="PNG")
    elif pixels.shape[0] == 3:
        Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    else:
        raise DataError(f"PNG export supports 1 or 3 channels, got {pixels.shape[0]}")


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def decode_hex_block(block: str) -> np.ndarray:
    """
    Decode `hex:CxHxW:<hex>` where the payload holds C·H·W uint8 pixels in row-major order.

    Args:
        block (str): Inline pixel block

    Returns:
        np.ndarray: C×H×W float64 image scaled to [0, 1]
    """
    match = _HEX_BLOCK.match(block.strip())
    if not match:
        raise DataError("Inline image must look like hex:CxHxW:<hex digits>")
    shape = tuple(int(group) for group in match.groups()[:3])
    if min(shape) < 1:
        raise DataError(f"Inline image extents must be positive, got {shape}")
    payload = match.group(4)
    expected = int(np.prod(shape))
    if len(payload) != 2 * expected:
        raise DataError(f"Inline image {shape} needs {2 * expected} hex digits, got {len(payload)}")
    pixels = np.frombuffer(bytes.fromhex(payload), dtype=np.uint8).reshape(shape)
    return pixels.astype(np.float64) / 255.0


def encode_hex_block(image: np.ndarray) -> str:
    """Inverse of decode_hex_block up to uint8 quantization."""
    pixels = to_uint8(image)
    channels, height, width = pixels.shape
    return f"{HEX_PREFIX}{channels}x{height}x{width}:{pixels.tobytes().hex()}"
