import os
from pathlib import Path

import pytest

FIXTURES = Path(os.environ.get("SLIMPART_FIXTURE_DIR", Path(__file__).resolve().parents[1] / "fixtures"))


def build_tree(root, listing):
    """Creates a filesystem from the fixture listing format (d/f/s/l lines)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for line in listing.splitlines():
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        kind = fields[0]
        if kind == "l":
            path, target = fields[1], fields[2]
        elif kind == "d":
            mode, path = fields[1], fields[2]
        else:
            mode, size, path = fields[1], int(fields[2]), fields[3]
        host = root / path.lstrip("/")
        host.parent.mkdir(parents=True, exist_ok=True)
        if kind == "d":
            host.mkdir(exist_ok=True)
        elif kind == "l":
            host.symlink_to(target)
            continue
        else:
            head = (f"#!{fields[4]}\n" if kind == "s" else path + "\n").encode()
            host.write_bytes((head + b"x" * size)[:size] if size >= len(head) else b"x" * size)
        os.chmod(host, int(mode, 8))


@pytest.fixture
def mediawiki(tmp_path):
    src = tmp_path / "src"
    build_tree(src, (FIXTURES / "mediawiki" / "tree.txt").read_text())
    return {
        "source": src,
        "trace": FIXTURES / "mediawiki" / "trace.strace",
        "policy": (FIXTURES / "mediawiki" / "policy.txt").read_text(),
    }
