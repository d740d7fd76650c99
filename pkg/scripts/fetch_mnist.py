"""Download the MNIST IDX files into data/mnist.

The four gzip files are taken from a source archive on the Python package
index, which is reachable from sandboxes without general web access, and
checked against the well-known MD5 sums.

    python scripts/fetch_mnist.py [--dest data/mnist]
"""

import argparse
import hashlib
import io
import urllib.request
import zipfile
from pathlib import Path

from analytic_conv.dataio import atomic_write

ARCHIVE = (
    "https://files.pythonhosted.org/packages/e1/03/"
    "d463caa4606696f3bba11686983ab1e4655eb0695c809d45e8c630c8bc31/bob.db.mnist-2.1.0.zip"
)
PREFIX = "bob.db.mnist-2.1.0/bob/db/mnist/data/"
MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dest", default=str(Path(__file__).resolve().parents[1] / "data" / "mnist"))
    p.add_argument("--url", default=ARCHIVE)
    args = p.parse_args(argv)
    dest = Path(args.dest)

    missing = [n for n, h in MD5.items() if not (dest / n).exists() or hashlib.md5((dest / n).read_bytes()).hexdigest() != h]
    if not missing:
        print(f"MNIST already present in {dest}")
        return
    print(f"downloading {args.url}")
    with urllib.request.urlopen(args.url, timeout=120) as r:
        archive = zipfile.ZipFile(io.BytesIO(r.read()))
    for name in missing:
        blob = archive.read(PREFIX + name)
        got = hashlib.md5(blob).hexdigest()
        if got != MD5[name]:
            raise SystemExit(f"checksum mismatch for {name}: {got}")
        atomic_write(dest / name, blob)
        print(f"wrote {dest / name}")


if __name__ == "__main__":
    main()
