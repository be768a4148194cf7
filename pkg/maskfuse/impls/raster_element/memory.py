import base64
import binascii
import re
from typing import Any, Dict, Optional, Type, TypeVar

from smqtk_core.dict import merge_dict

from maskfuse.exceptions import InvalidUriError
from maskfuse.interfaces.raster_element import RasterElement


BYTES_CONFIG_ENCODING = 'latin-1'
T = TypeVar("T", bound="RasterMemoryElement")


class RasterMemoryElement (RasterElement):  # lgtm [py/missing-equals]
    """
    Raster bytes held in memory, typically decoded from an embedded base64
    payload in an instance document.
    """

    # Base64 including URL-safe character replacements
    B64_PATTERN = '[a-zA-Z0-9+/_-]*={0,2}'
    URI_B64_RE = re.compile('^base64://(?P<base64>{})$'.format(B64_PATTERN))
    URI_DATA_B64_RE = re.compile(r"^data:(?P<ct>[\w/.+-]+);base64,(?P<base64>{})$"
                                 .format(B64_PATTERN))

    @classmethod
    def is_usable(cls) -> bool:
        # No dependencies
        return True

    @classmethod
    def from_config(
        cls: Type[T],
        config_dict: Dict,
        merge_default: bool = True
    ) -> T:
        """
        Instantiate from a JSON-compliant configuration. The ``bytes`` value
        is carried as a latin-1 string in configuration and encoded back here.
        """
        if merge_default:
            config_dict = merge_dict(cls.get_default_config(), config_dict)
        else:
            config_dict = dict(config_dict)
        if config_dict.get("bytes") is not None:
            config_dict["bytes"] = \
                config_dict["bytes"].encode(BYTES_CONFIG_ENCODING)
        return super(RasterMemoryElement, cls).from_config(config_dict,
                                                           merge_default=False)

    @classmethod
    def from_uri(cls, uri: str) -> "RasterMemoryElement":
        """
        Resolve byte-string URIs in two formats:
            - ``base64://<data>``
            - ``data:<mimetype>;base64,<data>``

        ``<data>`` may use the standard or the URL-safe base64 alphabet.

        :raises InvalidUriError: The URI is not one of the above.
        """
        m = cls.URI_B64_RE.match(uri)
        if m is not None:
            return cls.from_base64(m.group('base64'), None)
        m = cls.URI_DATA_B64_RE.match(uri)
        if m is not None:
            return cls.from_base64(m.group('base64'), m.group('ct'))
        raise InvalidUriError(uri, "Did not detect byte format URI")

    @classmethod
    def from_base64(
        cls,
        b64_str: str,
        content_type: Optional[str] = None
    ) -> "RasterMemoryElement":
        """
        :raises InvalidUriError: Payload is not valid base64.
        """
        # Normalize the URL-safe alphabet so either encoding decodes.
        normalized = b64_str.replace('-', '+').replace('_', '/')
        try:
            data = base64.b64decode(normalized, validate=True)
        except binascii.Error as ex:
            raise InvalidUriError(b64_str[:32], "Invalid base64: %s" % ex)
        return RasterMemoryElement(data, content_type)

    # noinspection PyShadowingBuiltins
    def __init__(
        self,
        bytes: Optional[bytes] = None,
        content_type: Optional[str] = None,
    ):
        """
        :param bytes: Encoded raster bytes, or None for no content.
        :param content_type: Content type of the given bytes.
        """
        super(RasterMemoryElement, self).__init__()
        self._bytes = bytes
        self._content_type = content_type

    def __repr__(self) -> str:
        return super(RasterMemoryElement, self).__repr__() + \
            "{len(bytes): %d, content_type: %s}" \
            % (len(self.get_bytes()), self._content_type)

    def get_config(self) -> Dict[str, Any]:
        b_str: Optional[str] = None
        if self._bytes is not None:
            b_str = self._bytes.decode(BYTES_CONFIG_ENCODING)
        return {
            "bytes": b_str,
            "content_type": self._content_type,
        }

    def content_type(self) -> Optional[str]:
        return self._content_type

    def is_empty(self) -> bool:
        return not self._bytes

    def get_bytes(self) -> bytes:
        return self._bytes or b''
