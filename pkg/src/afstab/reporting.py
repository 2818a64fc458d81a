"""Run manifests and artifact bookkeeping.

Every CLI run writes its reports first and a manifest last; the manifest
records the config hash, per-stage status, and a content hash for every
artifact in the output directory, so reruns can be checked for
byte-identical outputs.  The manifest itself carries timestamps and is the
one file exempt from the byte-identity guarantee.
"""

import datetime
import hashlib
import json
import os

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()


class RunManifest:
    def __init__(self, cfg, out_dir):
        self.out_dir = str(out_dir)
        self.data = {
            "tool_version": __version__,
            "config_hash": config_hash(cfg),
            "started": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished": None,
            "stages": {},
            "artifacts": {},
        }

    def stage(self, name: str, status: str = "ok"):
        self.data["stages"][name] = status

    def finish(self):
        """Hash every artifact under the output directory and write last."""
        artifacts = {}
        for root, _, files in os.walk(self.out_dir):
            for fn in sorted(files):
                if fn == MANIFEST_NAME:
                    continue
                path = os.path.join(root, fn)
                rel = os.path.relpath(path, self.out_dir)
                artifacts[rel] = sha256_file(path)
        self.data["artifacts"] = artifacts
        self.data["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = os.path.join(self.out_dir, MANIFEST_NAME)
        with open(path, "w") as f:
            json.dump(self.data, f, sort_keys=True, indent=2)
            f.write("\n")
        return path

    def verify(self) -> list:
        """Return mismatches between recorded hashes and files on disk."""
        problems = []
        for rel, digest in self.data["artifacts"].items():
            path = os.path.join(self.out_dir, rel)
            if not os.path.exists(path):
                problems.append(f"missing artifact {rel}")
            elif sha256_file(path) != digest:
                problems.append(f"hash mismatch for {rel}")
        return problems


def load_manifest(out_dir):
    path = os.path.join(str(out_dir), MANIFEST_NAME)
    with open(path) as f:
        data = json.load(f)
    m = RunManifest.__new__(RunManifest)
    m.out_dir = str(out_dir)
    m.data = data
    return m


def write_json(path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
