"""
PNG codec for 8-bit rasters, backed by Pillow.
"""
import io

import numpy
from PIL import Image

from maskfuse.exceptions import MalformedInputError


PNG_CONTENT_TYPE = "image/png"


def encode_png(arr: numpy.ndarray) -> bytes:
    """
    Encode a ``(H, W)`` or ``(H, W, 3)`` array as PNG. Boolean arrays are
    written as 0/255.

    :raises ValueError: Unsupported array shape.
    """
    if arr.dtype == bool:
        arr = arr.astype(numpy.uint8) * 255
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise ValueError("Cannot encode array of shape %s as PNG"
                         % (arr.shape,))
    buf = io.BytesIO()
    # Mode is inferred: L for 2D, RGB for 3 channels.
    img = Image.fromarray(numpy.ascontiguousarray(arr, dtype=numpy.uint8))
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(b: bytes) -> numpy.ndarray:
    """
    Decode PNG bytes into a ``uint8`` array: ``(H, W)`` for grayscale and
    ``(H, W, 3)`` for color inputs. Alpha is discarded and palette images
    are expanded to RGB.

    :raises MalformedInputError: Bytes are not a decodable PNG.
    """
    try:
        with Image.open(io.BytesIO(b)) as img:
            if img.format != "PNG":
                raise MalformedInputError("Expected PNG data, found %s"
                                          % img.format)
            if img.mode in ("1", "L", "I", "I;16"):
                arr = numpy.asarray(img.convert("L") if img.mode == "1"
                                    else img)
                if arr.dtype != numpy.uint8:
                    if arr.max(initial=0) > 255:
                        raise MalformedInputError(
                            "PNG samples exceed 8 bits"
                        )
                    arr = arr.astype(numpy.uint8)
            else:
                arr = numpy.asarray(img.convert("RGB"))
    except (OSError, SyntaxError) as ex:
        raise MalformedInputError("Could not decode PNG: %s" % ex) from ex
    return numpy.array(arr, dtype=numpy.uint8)
