"""
Interface for byte sources holding PNG-encoded rasters, addressable by URI.
"""
import abc
import base64
import logging
from typing import Callable, Iterable, Optional, Type

import numpy

from maskfuse.exceptions import InvalidUriError, MalformedInputError, \
    NoUriResolutionError
from maskfuse.raster import BinaryMask
from maskfuse.utils.png import decode_png
from smqtk_core import Configurable, Pluggable


LOG = logging.getLogger(__name__)


class RasterElement (Configurable, Pluggable):
    """
    Abstract container for the encoded bytes of a mask or image.

    Implementations decide where the bytes live (file, memory, a live
    array). Decoding into rasters is shared here so every source yields
    identical masks for identical bytes.
    """

    @classmethod
    def from_uri(cls, uri: str) -> "RasterElement":
        """
        Construct a new instance based on the given URI.

        This function may not be implemented for all RasterElement types.

        :param uri: URI string to resolve into an element instance.

        :raises NoUriResolutionError:
            This element type does not implement URI resolution.
        :raises InvalidUriError:
            This element type could not resolve the provided URI string.

        :return: New element instance of our type.
        """
        raise NoUriResolutionError()

    # Backing bytes may change underneath us.
    __hash__ = None  # type: ignore

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RasterElement) and \
            self.get_bytes() == other.get_bytes()

    def __ne__(self, other: object) -> bool:
        return not (self == other)

    @abc.abstractmethod
    def __repr__(self) -> str:
        return self.__class__.__name__

    def to_data_uri(self) -> str:
        """
        :return: ``data:<content type>;base64,<data>`` URI embedding this
            element's bytes, resolvable by the memory element.
        """
        ct = self.content_type() or "application/octet-stream"
        return "data:%s;base64,%s" \
            % (ct, base64.b64encode(self.get_bytes()).decode("ascii"))

    def load_array(self) -> numpy.ndarray:
        """
        Decode content into a ``uint8`` array, ``(H, W)`` or ``(H, W, 3)``.

        :raises MalformedInputError: Element is empty or not a PNG.
        """
        if self.is_empty():
            raise MalformedInputError("%s holds no bytes" % (self,))
        return decode_png(self.get_bytes())

    def load_mask(self) -> BinaryMask:
        """
        Decode content as a mask: any nonzero sample (in any channel) is
        foreground.
        """
        arr = self.load_array()
        if arr.ndim == 3:
            arr = arr.any(axis=2)
        return BinaryMask.adopt(arr != 0)

    ###
    # Abstract methods
    #

    @abc.abstractmethod
    def content_type(self) -> Optional[str]:
        """
        :return: Standard type/subtype string for this element, or None if
            the content type is unknown.
        """

    @abc.abstractmethod
    def is_empty(self) -> bool:
        """
        :return: If this element contains 0 bytes.
        """

    @abc.abstractmethod
    def get_bytes(self) -> bytes:
        """
        :return: The encoded bytes of this element.
        """


def from_uri(
    uri: str,
    impl_generator: Callable[[], Iterable[Type[RasterElement]]] = RasterElement.get_impls
) -> RasterElement:
    """
    Create a raster element from the available plugin implementations.

    The first implementation that resolves the URI is returned.

    :param uri: URI to try to resolve into a RasterElement instance.
    :param impl_generator: Function returning the candidate implementation
        types. Defaults to the standard plugin discovery.

    :raises InvalidUriError: No implementation could resolve the given URI.

    :return: New element providing access to the data the URI points to.
    """
    LOG.debug("Trying to parse URI: '%s'", uri[:64])

    inst = None
    # Sorted for a stable resolution order across runs.
    for elem_type in sorted(impl_generator(), key=lambda t: t.__name__):
        try:
            inst = elem_type.from_uri(uri)
        except NoUriResolutionError:
            pass
        except InvalidUriError as ex:
            LOG.debug("Implementation '%s' failed to parse URI: %s",
                      elem_type.__name__, ex.reason)
        if inst is not None:
            break
    if inst is None:
        raise InvalidUriError(uri, "No available implementation to handle URI.")
    return inst
