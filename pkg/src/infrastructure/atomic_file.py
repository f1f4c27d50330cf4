import logging
import os
from tempfile import NamedTemporaryFile
from typing import Union

logger = logging.getLogger(__name__)


def atomic_write(path: str, data: Union[bytes, str]) -> None:
    """Write `data` to a temp file beside `path`, then move it into place."""
    dir_name = os.path.dirname(os.path.abspath(path))
    os.makedirs(dir_name, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    encoding = None if isinstance(data, bytes) else "utf-8"
    temp_name = None
    try:
        with NamedTemporaryFile(mode, dir=dir_name, delete=False, suffix=".tmp",
                                encoding=encoding, **({} if encoding is None else {"newline": ""})) as tf:
            tf.write(data)
            temp_name = tf.name
        os.replace(temp_name, path)
    except Exception:
        logger.error(f"Failed to write {path}")
        if temp_name and os.path.exists(temp_name):
            os.remove(temp_name)
        raise
