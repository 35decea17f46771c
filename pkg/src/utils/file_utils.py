"""
File helpers shared by every writer in the project.
"""

import os
import tempfile
from contextlib import contextmanager
from typing import IO, Iterator

FILE_MODE = 0o644


def current_umask() -> int:
    """The process umask, read by setting and restoring it."""
    mask = os.umask(0)
    os.umask(mask)
    return mask


@contextmanager
def atomic_write(path: str, mode: str = "wb", encoding: str = None) -> Iterator[IO]:
    """
    Open a temporary file next to ``path`` and move it into place on success.

    Readers never observe a partially written file; on error the temporary
    file is removed and ``path`` is left as it was. The final file gets
    mode 0644 with the umask applied.

    Args:
        path: Final destination.
        mode: "wb" or "w".
        encoding: Text encoding for mode "w".
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, mode, encoding=encoding if "b" not in mode else None) as f:
            yield f
        os.chmod(tmp, FILE_MODE & ~current_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
