"""Run manifest: config echo plus a hashed index of every output file.

All file writes go through the manifest so nothing ends up on disk
unindexed; hashes make reruns comparable byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os

from .. import __version__

__all__ = ["RunManifest"]


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, config_echo: dict, out_dir: str):
        self.command = command
        self.config_echo = config_echo
        self.out_dir = out_dir
        self.outputs = []
        self.extra = {}
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def register(self, name: str) -> str:
        """Record an already-written file; returns its absolute-ish path."""
        full = self.path(name)
        self.outputs.append({
            "path": name,
            "sha256": _sha256(full),
            "bytes": os.path.getsize(full),
        })
        return full

    def write_json(self, name: str, payload) -> str:
        full = self.path(name)
        with open(full, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        return self.register(name)

    def finalize(self, name: str = "manifest.json") -> str:
        doc = {
            "toolkit_version": __version__,
            "command": self.command,
            "config": self.config_echo,
            "outputs": self.outputs,
        }
        doc.update(self.extra)
        full = self.path(name)
        with open(full, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        return full

    def verify(self, manifest_path: str | None = None) -> bool:
        """Re-hash every listed output; True iff everything matches."""
        for entry in self.outputs:
            full = self.path(entry["path"])
            if not os.path.exists(full) or _sha256(full) != entry["sha256"]:
                return False
        return True

    @staticmethod
    def verify_file(manifest_path: str) -> bool:
        with open(manifest_path) as f:
            doc = json.load(f)
        base = os.path.dirname(manifest_path)
        for entry in doc.get("outputs", []):
            full = os.path.join(base, entry["path"])
            if not os.path.exists(full) or _sha256(full) != entry["sha256"]:
                return False
        return True
