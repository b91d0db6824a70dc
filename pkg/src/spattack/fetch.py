"""Locate or download the MovieLens-100K ratings file."""
from __future__ import annotations

import hashlib
import io
import logging
import os
import re
import urllib.parse
import urllib.request
import zipfile
from pathlib import Path

log = logging.getLogger(__name__)

DATA_DIR_ENV = "SPATTACK_DATA_DIR"
GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
# The recbole wheel ships ML-100K as a tab-separated file with a typed header.
RECBOLE_INDEX = "https://pypi.org/simple/recbole/"
RECBOLE_WHEEL = "recbole-1.2.1-py3-none-any.whl"
RECBOLE_SHA256 = "9c9948202011f37eb0a7c6768129313f00d6403ad221ec940d5e2d5d5f33a407"
RECBOLE_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def ml100k_path(data_dir: str | Path | None = None) -> Path:
    return Path(data_dir or default_data_dir()) / "ml-100k" / "u.data"


def _get(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def _from_grouplens(timeout: float) -> bytes:
    with zipfile.ZipFile(io.BytesIO(_get(GROUPLENS_URL, timeout))) as zf:
        return zf.read("ml-100k/u.data")


def _from_recbole(timeout: float) -> bytes:
    index = _get(RECBOLE_INDEX, timeout).decode("utf-8")
    match = re.search(r'href="([^"]*/' + re.escape(RECBOLE_WHEEL) + r')[#"]', index)
    if match is None:
        raise RuntimeError(f"{RECBOLE_WHEEL} not listed in {RECBOLE_INDEX}")
    blob = _get(urllib.parse.urljoin(RECBOLE_INDEX, match.group(1)), timeout)
    if hashlib.sha256(blob).hexdigest() != RECBOLE_SHA256:
        raise RuntimeError(f"{RECBOLE_WHEEL}: sha256 mismatch")
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        lines = zf.read(RECBOLE_MEMBER).decode("utf-8").splitlines()
    if not lines or not lines[0].startswith("user_id"):
        raise RuntimeError("unexpected layout of the recbole ML-100K file")
    return ("\n".join(lines[1:]) + "\n").encode("utf-8")


def fetch_ml100k(data_dir: str | Path | None = None, timeout: float = 60.0) -> Path:
    """Return the path to ``u.data``, downloading it when absent."""
    target = ml100k_path(data_dir)
    if target.exists():
        return target
    errors = []
    for source in (_from_grouplens, _from_recbole):
        try:
            payload = source(timeout)
            break
        except Exception as exc:  # network-dependent, try the next mirror
            log.info("ML-100K source %s failed: %s", source.__name__, exc)
            errors.append(f"{source.__name__}: {exc}")
    else:
        raise RuntimeError("could not obtain ML-100K; " + "; ".join(errors))
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(".tmp")
    tmp.write_bytes(payload)
    tmp.replace(target)
    return target
