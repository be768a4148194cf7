import os
import os.path as osp
import tempfile
from typing import Union


def safe_create_dir(d: str) -> str:
    """
    Recursively create the given directory, tolerating its prior existence.

    :param d: Directory path to create. ``~`` is expanded.

    :return: Absolute path of the directory.
    """
    d = osp.abspath(osp.expanduser(d))
    os.makedirs(d, exist_ok=True)
    return d


def safe_file_write(path: str, b: Union[str, bytes]) -> None:
    """
    Write content so that ``path`` never holds a partially written file.

    Content goes to a temporary file in the destination directory first,
    which is then renamed over the target. The rename is atomic on POSIX
    filesystems.

    :param path: Destination file path. Missing parent directories are
        created.
    :param b: Text or bytes to write.
    """
    file_dir = osp.dirname(osp.abspath(path))
    safe_create_dir(file_dir)
    base, ext = osp.splitext(osp.basename(path))
    fd, tmp_path = tempfile.mkstemp(suffix=ext, prefix=base + '.', dir=file_dir)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(b.encode('utf-8') if isinstance(b, str) else b)
        os.replace(tmp_path, path)
    except Exception:
        if osp.exists(tmp_path):
            os.remove(tmp_path)
        raise
