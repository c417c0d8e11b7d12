"""Hash-keyed cache for oracle counts and reward estimates

Sweeps re-evaluate the same systems under the same settings; results are
stored as JSON files named by the SHA256 of the system payload and settings.
"""

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from .quadric import QuadricSystem, system_to_dict

logger = logging.getLogger(__name__)


class ResultCache:
    """
    Disk cache of JSON results keyed by (kind, system, settings).

    Example:
        >>> cache = ResultCache(".quadricrl_cache")
        >>> key = cache.key_for("count", system, opts.model_dump())
        >>> data = cache.load(key)
        >>> if data is None:
        ...     data = count_real_solutions(system, opts).to_dict()
        ...     cache.save(key, data)
    """

    def __init__(self, cache_dir: str = ".quadricrl_cache", max_cache_size_mb: int = 500):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_cache_size = max_cache_size_mb * 1024 * 1024
        self.manifest_path = self.cache_dir / "manifest.json"
        self._load_manifest()

    def _load_manifest(self) -> None:
        if self.manifest_path.exists():
            with open(self.manifest_path, "r") as f:
                self.manifest: Dict[str, Dict[str, Any]] = json.load(f)
        else:
            self.manifest = {}

    def _save_manifest(self) -> None:
        with open(self.manifest_path, "w") as f:
            json.dump(self.manifest, f, indent=2)

    def _entry_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    @staticmethod
    def key_for(kind: str, system: QuadricSystem, settings: Mapping[str, Any]) -> str:
        """SHA256 of the canonical JSON of kind, system and settings"""
        payload = json.dumps(
            {"kind": kind, "system": system_to_dict(system), "settings": dict(settings)},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def has(self, key: str) -> bool:
        return key in self.manifest and self._entry_path(key).exists()

    def save(self, key: str, data: Dict[str, Any], metadata: Optional[Dict[str, Any]] = None) -> None:
        with open(self._entry_path(key), "w") as f:
            json.dump({"key": key, "data": data, "metadata": metadata or {}}, f)
        self.manifest[key] = {"created_at": datetime.now().isoformat()}
        self._save_manifest()
        self._cleanup_cache()

    def load(self, key: str) -> Optional[Dict[str, Any]]:
        if not self.has(key):
            return None
        with open(self._entry_path(key), "r") as f:
            return json.load(f)["data"]

    def _cache_size(self) -> int:
        return sum(self._entry_path(k).stat().st_size for k in self.manifest if self._entry_path(k).exists())

    def _cleanup_cache(self) -> None:
        """Drop the oldest entries until the cache fits its size cap"""
        cache_size = self._cache_size()
        if cache_size <= self.max_cache_size:
            return
        for key, _ in sorted(self.manifest.items(), key=lambda item: item[1]["created_at"]):
            if cache_size <= self.max_cache_size:
                break
            path = self._entry_path(key)
            if path.exists():
                cache_size -= path.stat().st_size
                path.unlink()
            del self.manifest[key]
            logger.debug("evicted cache entry %s", key[:12])
        self._save_manifest()

    def get_stats(self) -> Dict[str, Any]:
        return {
            "entries": len(self.manifest),
            "cache_size_mb": self._cache_size() / (1024**2),
            "cache_dir": str(self.cache_dir),
            "max_size_mb": self.max_cache_size / (1024**2),
        }


__all__ = ["ResultCache"]
