"""
Artifact writers for the command-line front end.

Every file goes through ``ReportWriter`` so that it is recorded in the run
manifest. Outputs are deterministic: CSV floats use 17 significant digits,
JSON keys are sorted, gzip headers carry no timestamp, and the manifest
records no wall-clock time.
"""

import gzip
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.config import get_global_config
from core.exceptions import RecurnetException, error_code_for

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
ERROR_NAME = 'error.json'

_VERSIONED_PACKAGES = ('recurnet', 'numpy', 'scipy', 'pandas', 'networkx', 'pydantic')


def json_default(obj: Any) -> Any:
    """JSON encoder fallback for numpy scalars, arrays, enums and paths"""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (Path, frozenset, set)):
        return str(obj) if isinstance(obj, Path) else sorted(obj)
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def _finite(obj: Any) -> Any:
    """Replace non-finite floats by strings; strict JSON has no inf or nan"""
    if isinstance(obj, float) and not math.isfinite(obj):
        return 'nan' if math.isnan(obj) else ('inf' if obj > 0 else '-inf')
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    normalized = _finite(json.loads(json.dumps(obj, default=json_default)))
    return json.dumps(normalized, sort_keys=True, indent=2, allow_nan=False) + '\n'


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in _VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


@dataclass
class ArtifactEntry:
    """Manifest record of one written file"""
    file: str
    module: str
    operation: str
    certificate: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {'file': self.file, 'module': self.module, 'operation': self.operation,
                'certificate': self.certificate}


@dataclass
class ReportWriter:
    """
    Writes artifacts under ``out_dir`` and keeps the manifest entries.

    Writes are serialized by a lock even when computations ran in parallel.
    """
    out_dir: Path
    artifacts: List[ArtifactEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def _record(self, name: str, module: str, operation: str, certificate: Any) -> Path:
        if hasattr(certificate, 'to_dict'):
            certificate = certificate.to_dict()
        self.artifacts.append(ArtifactEntry(name, module, operation, _finite(certificate)))
        logger.info(f"Wrote {name} ({module}.{operation})")
        return self.out_dir / name

    def write_csv(self, name: str, frame: pd.DataFrame, module: str, operation: str,
                  certificate: Any = None) -> Path:
        fmt = get_global_config().output.float_format
        with self._lock:
            path = self.out_dir / name
            frame.to_csv(path, index=False, float_format=fmt, lineterminator='\n')
            return self._record(name, module, operation, certificate)

    def write_series(self, name: str, x: Sequence[float], y: Sequence[float],
                     stderr: Optional[Sequence[float]], module: str, operation: str,
                     certificate: Any = None) -> Path:
        """Plot data as (x, y, stderr) columns"""
        frame = pd.DataFrame({
            'x': list(x),
            'y': list(y),
            'stderr': list(stderr) if stderr is not None else [0.0] * len(x),
        })
        return self.write_csv(name, frame, module, operation, certificate)

    def write_json(self, name: str, payload: Any, module: str, operation: str,
                   certificate: Any = None) -> Path:
        with self._lock:
            path = self.out_dir / name
            path.write_text(dumps(payload), encoding='utf-8')
            return self._record(name, module, operation, certificate)

    def write_lines(self, name: str, lines: Iterable[str], module: str, operation: str,
                    compress: bool = False, certificate: Any = None) -> Path:
        """Newline-delimited text, gzip-compressed with a zero mtime when requested"""
        data = ''.join(f"{line}\n" for line in lines).encode('utf-8')
        with self._lock:
            if compress:
                name = f"{name}.gz"
                with open(self.out_dir / name, 'wb') as raw:
                    with gzip.GzipFile(filename='', mode='wb', fileobj=raw, mtime=0) as gz:
                        gz.write(data)
            else:
                (self.out_dir / name).write_bytes(data)
            return self._record(name, module, operation, certificate)

    def write_manifest(self, command: str, spec: Optional[Dict[str, Any]], arguments: Dict[str, Any],
                       seed: int, status: str = 'ok') -> Path:
        manifest = {
            'command': command,
            'network': spec,
            'arguments': arguments,
            'seed': seed,
            'status': status,
            'versions': package_versions(),
            'artifacts': [a.to_dict() for a in self.artifacts],
        }
        with self._lock:
            path = self.out_dir / MANIFEST_NAME
            path.write_text(dumps(manifest), encoding='utf-8')
        return path


def error_payload(exc: BaseException, command: Optional[str] = None) -> Dict[str, Any]:
    """Machine-readable error document"""
    payload: Dict[str, Any] = {
        'error': type(exc).__name__,
        'code': error_code_for(exc).value,
        'message': str(exc),
        'command': command,
    }
    if isinstance(exc, RecurnetException):
        payload.update(exc.to_dict())
        field_name = exc.context.get('field')
        if field_name:
            payload['field'] = field_name
        certificate = getattr(exc, 'certificate', None)
        if certificate is not None and hasattr(certificate, 'to_dict'):
            payload['certificate'] = certificate.to_dict()
    return payload


def write_error(out_dir: Path, exc: BaseException, command: Optional[str] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ERROR_NAME
    path.write_text(dumps(error_payload(exc, command)), encoding='utf-8')
    return path
