"""Locating and fetching the MovieLens-100K ratings used by the experiments.

GroupLens downloads are not always reachable, but the RecBole wheel on PyPI
ships the MovieLens-100K interaction file.  :func:`fetch_movielens_100k`
pulls that wheel with pip and extracts the ratings as a TSV file
(``user, item, rating, timestamp`` with a header line).
"""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

RECBOLE_SPEC = "recbole==1.2.1"
_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"

DEFAULT_DATA_DIR = Path(os.environ.get("PRIORMF_DATA", Path.cwd() / "data"))
ML100K_FILE = "ml-100k.tsv"


def movielens_100k_path(data_dir=None) -> Path:
    return Path(data_dir or DEFAULT_DATA_DIR) / ML100K_FILE


def extract_from_wheel(wheel, dest) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        raw = z.read(_MEMBER).decode("utf-8")
    lines = raw.splitlines()
    tmp = dest.with_suffix(".part")
    with open(tmp, "w") as f:
        f.write("user\titem\trating\ttimestamp\n")
        for line in lines[1:]:
            if line.strip():
                f.write(line + "\n")
    tmp.replace(dest)
    return dest


def fetch_movielens_100k(data_dir=None, wheel=None) -> Path:
    """Return the path of the MovieLens-100K TSV, fetching it if absent."""
    dest = movielens_100k_path(data_dir)
    if dest.exists():
        return dest
    if wheel is not None:
        return extract_from_wheel(wheel, dest)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", "-d", tmp, RECBOLE_SPEC],
            check=True,
        )
        wheels = list(Path(tmp).glob("recbole-*.whl"))
        if not wheels:
            raise FileNotFoundError("pip did not produce a recbole wheel")
        return extract_from_wheel(wheels[0], dest)
