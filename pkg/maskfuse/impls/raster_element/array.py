from typing import Dict, Optional

import numpy
import numpy.typing as npt

from maskfuse.interfaces.raster_element import RasterElement
from maskfuse.raster import BinaryMask
from maskfuse.utils.png import PNG_CONTENT_TYPE, encode_png


class RasterArrayElement (RasterElement):  # lgtm[py/missing-equals]
    """
    Raster element whose content lives natively as a ``numpy.ndarray``.

    PNG bytes are encoded on demand from the current array, so this is the
    element to use when writing masks and images produced in memory.
    Boolean arrays encode as 0/255 single channel PNGs.
    """

    @classmethod
    def is_usable(cls) -> bool:
        return True

    @classmethod
    def from_mask(cls, mask: BinaryMask) -> "RasterArrayElement":
        return cls(mask.bits)

    def __init__(self, mat: Optional[npt.ArrayLike] = None):
        """
        :param mat: ``(H, W)`` boolean or 8-bit array, or ``(H, W, 3)`` 8-bit
            array.
        """
        super(RasterArrayElement, self).__init__()
        self._matrix: Optional[numpy.ndarray] = None
        if mat is not None:
            self._matrix = numpy.asarray(mat)

    def __repr__(self) -> str:
        shape = None if self._matrix is None else self._matrix.shape
        return super(RasterArrayElement, self).__repr__() + \
            "{{shape: {}}}".format(shape)

    @property
    def matrix(self) -> Optional[numpy.ndarray]:
        return self._matrix

    def get_config(self) -> Dict:
        mat_json = None
        if self._matrix is not None:
            mat_json = self._matrix.tolist()
        return {
            'mat': mat_json,
        }

    def content_type(self) -> Optional[str]:
        return PNG_CONTENT_TYPE

    def is_empty(self) -> bool:
        return self._matrix is None or self._matrix.size == 0

    def get_bytes(self) -> bytes:
        if self.is_empty():
            return bytes()
        assert self._matrix is not None
        return encode_png(self._matrix)

    def load_array(self) -> numpy.ndarray:
        """
        Short-cut the PNG round trip for boolean and 8-bit arrays; values
        match a decode of ``get_bytes()``.
        """
        mat = self._matrix
        if mat is None or mat.size == 0 or \
                mat.dtype not in (bool, numpy.uint8):
            return super(RasterArrayElement, self).load_array()
        if mat.dtype == bool:
            return mat.astype(numpy.uint8) * 255
        return mat.copy()
