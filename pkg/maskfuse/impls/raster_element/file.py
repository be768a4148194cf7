import mimetypes
import os.path as osp
import re
from typing import Dict, Optional

from maskfuse.exceptions import InvalidUriError
from maskfuse.interfaces.raster_element import RasterElement


class RasterFileElement (RasterElement):  # lgtm [py/missing-equals]
    """
    Raster bytes stored in a file on disk.
    """

    # File paths optionally prefixed by file://, any characters between
    # slashes.
    FILE_URI_RE = re.compile("^(?:file://)?(/?[^/]+(?:/[^/]+)*)$")
    # Any other scheme prefix, e.g. "data:" or "base64:".
    SCHEME_RE = re.compile("^[a-zA-Z][a-zA-Z0-9+.-]+:")

    @classmethod
    def is_usable(cls) -> bool:
        # No dependencies
        return True

    @classmethod
    def from_uri(cls, uri: str) -> "RasterFileElement":
        """
        Resolve relative or absolute paths, or ``file://`` URIs carrying an
        absolute path (``file:///data/mask.png``).

        URIs with another scheme header (e.g. ``base64://`` or ``data:``) are
        rejected.

        :raises InvalidUriError: Not a path-like URI.
        """
        if not uri.startswith("file://") and cls.SCHEME_RE.match(uri):
            raise InvalidUriError(uri, "Not a file URI scheme")
        path_match = cls.FILE_URI_RE.match(uri)
        if path_match is None:
            raise InvalidUriError(uri, "Malformed URI")
        path = path_match.group(1)
        if uri.startswith("file://") and not osp.isabs(path):
            raise InvalidUriError(uri, "Found file:// prefix, but path was "
                                       "not absolute")
        return RasterFileElement(path)

    def __init__(self, filepath: str, explicit_mimetype: Optional[str] = None):
        """
        :param filepath: Path to the file, which may not exist yet. Relative
            paths are interpreted against the current working directory.
        :param explicit_mimetype: Content type to report instead of guessing
            from the file extension.
        """
        super(RasterFileElement, self).__init__()
        self._filepath = osp.expanduser(filepath)
        self._explicit_mimetype = explicit_mimetype
        self._content_type = explicit_mimetype or \
            mimetypes.guess_type(filepath)[0]

    def __repr__(self) -> str:
        return super(RasterFileElement, self).__repr__() + \
            "{filepath: %s}" % self._filepath

    @property
    def filepath(self) -> str:
        return self._filepath

    def get_config(self) -> Dict[str, Optional[str]]:
        return {
            "filepath": self._filepath,
            "explicit_mimetype": self._explicit_mimetype,
        }

    def content_type(self) -> Optional[str]:
        return self._content_type

    def is_empty(self) -> bool:
        """
        :return: If the file does not exist or has zero bytes.
        """
        return not osp.exists(self._filepath) or \
            osp.getsize(self._filepath) == 0

    def get_bytes(self) -> bytes:
        """
        :return: File content, or empty bytes for a missing file.
        """
        if not osp.isfile(self._filepath):
            return b''
        with open(self._filepath, 'rb') as f:
            return f.read()
