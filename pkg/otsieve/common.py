import logging
import os
import tempfile
import time

import numpy as np

from otsieve.errors import DataError, DimensionError
from otsieve.settings import settings


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level=None):
    """
    Sets up the root handler once, using `settings.log_level` unless a level
    is given.
    """
    level = (level or settings.log_level or "info").upper()
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    root.setLevel(level)


def seconds_elapsed(start_seconds):
    return time.time() - start_seconds


def as_matrix(name, a, cols=None, rows=None):
    """
    Returns `a` as a finite 2D float array, checking the column (and
    optionally row) count.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and cols is not None and a.shape[0] == cols:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(
            "%s must be a 2D array, got shape %s" % (name, a.shape),
            shape=a.shape,
        )
    if cols is not None and a.shape[1] != cols:
        raise DimensionError(
            "%s must have %d columns, got shape %s" % (name, cols, a.shape),
            shape=a.shape,
        )
    if rows is not None and a.shape[0] != rows:
        raise DimensionError(
            "%s must have %d rows, got shape %s" % (name, rows, a.shape),
            shape=a.shape,
        )
    if not np.all(np.isfinite(a)):
        raise DataError("%s contains non-finite entries" % name)
    return a


def as_vector(name, a, size=None):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or (size is not None and a.shape[0] != size):
        raise DimensionError(
            "%s must be a vector of length %s, got shape %s"
            % (name, size if size is not None else "n", a.shape),
            shape=a.shape,
        )
    if not np.all(np.isfinite(a)):
        raise DataError("%s contains non-finite entries" % name)
    return a


def atomic_write(path, writer, mode="w"):
    """
    Calls `writer(fp)` on a temp file next to `path` and renames it into
    place, so a failing writer never leaves a partial file behind.
    """
    path = os.path.abspath(path)
    dirname = os.path.dirname(path)
    if not os.path.exists(dirname):
        os.makedirs(dirname)
    fd, tmp = tempfile.mkstemp(
        prefix="." + os.path.basename(path) + ".", dir=dirname
    )
    try:
        with os.fdopen(fd, mode) as fp:
            writer(fp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def print_table(title, header, rows, width=12):
    """
    Prints rows of numbers under a header, one fixed-width column each.
    """
    row_format = "{:>%d}" % width * len(header)
    border = "-" * (width * len(header) + 5)
    print("\n%s" % title)
    print(border)
    print(row_format.format(*header))
    for row in rows:
        print(
            row_format.format(
                *[
                    "%.4f" % v if isinstance(v, float) else str(v)
                    for v in row
                ]
            )
        )
    print(border)
    print("")
