"""Stage artifact files

Every artifact is a JSON document with a header naming its kind, the schema
version and the sha256 of the file it was produced from. Writes go through
a temp file and a rename so an interrupted command never leaves half a file.
"""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from src import __version__
from src.domain.exceptions import ArtifactError
from src.domain.models import SCHEMA_VERSION

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Artifact kinds
SEGMENTS = "segments"
EXTRACTION = "extraction"
CONSOLIDATED = "consolidated_graph"
VALIDATED = "validated_graph"
METRICS = "metrics_summary"
NATIVE_EXPORT = "graph_export"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_text(text: str) -> str:
    return sha256_bytes(text.encode("utf-8"))


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_header(artifact: str, input_sha256: str) -> Dict[str, str]:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact": artifact,
        "created_by": f"regkg {__version__}",
        "input_sha256": input_sha256,
    }


def dumps(payload: Any) -> str:
    """Canonical JSON text: stable key order as given, trailing newline"""
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def write_atomic(path: PathLike, text: str) -> Path:
    """Write text to path via a sibling temp file and os.replace"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {target}")
    return target


def write_artifact(path: PathLike, artifact: str, input_sha256: str, body: Dict[str, Any]) -> Path:
    """Header first, then the body's keys in order"""
    payload = {"header": make_header(artifact, input_sha256)}
    payload.update(body)
    return write_atomic(path, dumps(payload))


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
    lines = [json.dumps(record, ensure_ascii=False) for record in records]
    return write_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_json(path: PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ArtifactError(f"File not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Cannot read {path}: {e}")


def read_artifact(path: PathLike, expected: Optional[str] = None) -> Dict[str, Any]:
    """Load an artifact and check its header"""
    payload = read_json(path)
    header = payload.get("header") if isinstance(payload, dict) else None
    if not isinstance(header, dict):
        raise ArtifactError(f"{path} has no artifact header")
    if expected and header.get("artifact") != expected:
        raise ArtifactError(f"{path} is a {header.get('artifact')!r} artifact, expected {expected!r}")
    if header.get("schema_version") != SCHEMA_VERSION:
        logger.warning(f"{path} has schema_version {header.get('schema_version')}, expected {SCHEMA_VERSION}")
    return payload


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    try:
        with open(path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except FileNotFoundError:
        raise ArtifactError(f"File not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Cannot read {path}: {e}")
