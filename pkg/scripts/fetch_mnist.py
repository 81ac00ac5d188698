"""Populate data/mnist/ with gzipped MNIST IDX files.

The raw IDX files are taken from the ``mnist-data`` npm tarball, which ships
them verbatim, so no access to the original host is needed. Pass
``--from-dir`` to copy already-downloaded raw (or .gz) IDX files instead.
"""
from __future__ import annotations

import argparse
import gzip
import shutil
import subprocess
import tarfile
import tempfile
from pathlib import Path

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
NPM_PACKAGE = "mnist-data@1.2.6"
DEFAULT_OUT = Path(__file__).resolve().parents[1] / "data" / "mnist"


def _write_gz(src: Path, dst: Path) -> None:
    if src.suffix == ".gz":
        shutil.copyfile(src, dst)
        return
    with open(src, "rb") as fin, gzip.GzipFile(dst, "wb", mtime=0) as fout:
        shutil.copyfileobj(fin, fout)


def from_npm(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", NPM_PACKAGE], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        (tarball,) = Path(tmp).glob("mnist-data-*.tgz")
        with tarfile.open(tarball) as tf:
            tf.extractall(tmp, filter="data")
        for name in FILES:
            _write_gz(Path(tmp) / "package" / "data" / name, out / f"{name}.gz")


def from_dir(src: Path, out: Path) -> None:
    for name in FILES:
        for cand in (src / name, src / f"{name}.gz"):
            if cand.exists():
                _write_gz(cand, out / f"{name}.gz")
                break
        else:
            raise FileNotFoundError(f"{name} not found in {src}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    ap.add_argument("--from-dir", type=Path, default=None)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.from_dir is not None:
        from_dir(args.from_dir, args.out)
    else:
        from_npm(args.out)
    for name in FILES:
        print(args.out / f"{name}.gz")


if __name__ == "__main__":
    main()
