import hashlib
import logging
import math
import os
import shutil
from os import PathLike
from pathlib import Path

import numpy as np
import requests
import scipy.linalg
from filelock import FileLock
from rich.logging import RichHandler

logger = logging.getLogger("stoch_rnn")
logger.setLevel("INFO")
handler = RichHandler(rich_tracebacks=True)
handler.setLevel("NOTSET")
handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
logger.handlers = []
logger.addHandler(handler)


ROOT_DIR = Path(__file__).resolve().parent
DEFAULT_CACHE_DIR = Path(os.environ.get("STOCH_RNN_CACHE_DIR", ROOT_DIR / "cache"))
JAPANESE_VOWELS_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/JapaneseVowels-mld"
JAPANESE_VOWELS_FILES = ("ae.train", "ae.test")
DOWNLOAD_TIMEOUT = 60


class StochRNNError(Exception):
    """Base class for all errors raised by `stoch_rnn`."""


class DomainError(StochRNNError, ValueError):
    """An argument lies outside the domain of the operation."""


class DataParseError(StochRNNError, ValueError):
    """A dataset or configuration file could not be parsed."""

    def __init__(self, message: str, path: str | PathLike | None = None, line: int | None = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(location + message)
        self.path = path
        self.line = line


class RegimeError(StochRNNError, ValueError):
    """The covariance matrix is not in the regime required by the operation (e.g. not positive definite)."""


class DegenerateDirectionError(RegimeError):
    """The read-out direction lies in the kernel of the covariance matrix (omega^T A omega <= 0)."""


class NumericalError(StochRNNError, ArithmeticError):
    """A numerical procedure did not converge or produced non-finite values."""


def clear_cache():
    shutil.rmtree(DEFAULT_CACHE_DIR, ignore_errors=True)


def check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise DomainError(f"`{name}` has non-finite entries.")


def spectral_norm(matrix: np.ndarray) -> float:
    """Largest singular value of a matrix (0 for empty matrices)."""
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix, negative round-off eigenvalues clipped to 0."""
    eigenvalues, eigenvectors = scipy.linalg.eigh((A + A.T) / 2)
    root = (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
    root.setflags(write=False)
    return root


def psd_inv_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    eigenvalues, eigenvectors = scipy.linalg.eigh((A + A.T) / 2)
    if eigenvalues.min() <= 0:
        raise RegimeError(f"Matrix is not positive definite (smallest eigenvalue {eigenvalues.min():.3e}).")
    return (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T


def fingerprint(*arrays: np.ndarray | float | int | str) -> str:
    """Stable SHA-256 digest of a sequence of arrays and scalars."""
    digest = hashlib.sha256()
    for item in arrays:
        if isinstance(item, np.ndarray):
            arr = np.ascontiguousarray(item, dtype=np.float64)
            digest.update(str(arr.shape).encode())
            digest.update(arr.tobytes())
        else:
            digest.update(repr(item).encode())
        digest.update(b"|")
    return digest.hexdigest()


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Split `seed` into `count` independent streams, keyed by task index."""
    return np.random.SeedSequence(seed).spawn(count)


def gauss_legendre_grid(
    breakpoints: np.ndarray, min_nodes_per_unit: float = 64.0, min_order: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule with one panel per interval of `breakpoints`.

    Each panel of length h receives `max(min_order, ceil(min_nodes_per_unit * h))` nodes,
    so integrands that are smooth inside each panel (e.g. built from a piecewise-linear path) are integrated
    to high order.

    Returns:
        The nodes and weights, both of shape (num_nodes,).
    """
    breakpoints = np.asarray(breakpoints, dtype=float)
    lengths = np.diff(breakpoints)
    orders = np.maximum(min_order, np.ceil(min_nodes_per_unit * lengths).astype(int))
    nodes: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    rules: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for left, length, order in zip(breakpoints[:-1], lengths, orders):
        if order not in rules:
            rules[order] = np.polynomial.legendre.leggauss(int(order))
        ref_nodes, ref_weights = rules[order]
        nodes.append(left + 0.5 * length * (ref_nodes + 1.0))
        weights.append(0.5 * length * ref_weights)
    return np.concatenate(nodes), np.concatenate(weights)


def uniform_gauss_legendre(T: float, num_nodes: int, order: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, T] with equal panels and at least `num_nodes` nodes."""
    num_panels = max(1, math.ceil(num_nodes / order))
    return gauss_legendre_grid(np.linspace(0.0, T, num_panels + 1), min_nodes_per_unit=0.0, min_order=order)


def download_file(url: str, destination: str | PathLike, verbose: bool = False) -> Path:
    """
    Download `url` to `destination` unless it is already there.

    The download happens under a file lock so that concurrent processes sharing the cache directory
    fetch the file only once.
    """
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(f"{destination}.lock"):
        if destination.is_file() and destination.stat().st_size > 0:
            logger.debug("Using cached file %s", destination)
            return destination
        if verbose:
            logger.info("Downloading %s", url)
        try:
            response = requests.get(url, timeout=DOWNLOAD_TIMEOUT)
            response.raise_for_status()
        except requests.RequestException as e:
            raise FileNotFoundError(f"Could not download `{url}` to `{destination}`: {e}") from e
        tmp_path = destination.with_suffix(destination.suffix + ".part")
        tmp_path.write_bytes(response.content)
        tmp_path.replace(destination)
        logger.debug("Saved %s (%d bytes)", destination, len(response.content))
    return destination
