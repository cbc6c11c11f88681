"""Scene loading through dataset adapters."""

import csv
import logging
import threading
from pathlib import Path
from typing import Any, Dict, List

from axisprompt.config import SceneAdapter, SceneSpec
from axisprompt.exceptions import AxisPromptError, SceneLoadError
from axisprompt.models import PointCloud
from axisprompt.plyio import PointFormat, read_point_file

logger = logging.getLogger(__name__)

RAW_COLUMN = "raw_category"
CANONICAL_COLUMN = "category"


class SceneLoader:
    """
    Load scene point files, remapping labels where the adapter asks for it.

    One loader may be shared by render workers; the label-map cache is locked.
    """

    def __init__(
        self, raw_column: str = RAW_COLUMN, canonical_column: str = CANONICAL_COLUMN
    ) -> None:
        """
        Initialize the scene loader.

        Args:
            raw_column: Label-map column holding dataset labels
            canonical_column: Label-map column holding the names to use
        """
        self.raw_column = raw_column
        self.canonical_column = canonical_column
        self._label_maps: Dict[Path, Dict[str, str]] = {}
        self._lock = threading.Lock()

    def read_label_map(self, path: Path) -> Dict[str, str]:
        """
        Read a raw-to-canonical label table (tab-separated for .tsv, else comma).

        Args:
            path: Label table with a header row

        Returns:
            Mapping from raw label to canonical label

        Raises:
            ValueError: If the table is empty or misses a required column
        """
        path = Path(path)
        with self._lock:
            if path not in self._label_maps:
                self._label_maps[path] = self._parse_label_map(path)
            return self._label_maps[path]

    def _parse_label_map(self, path: Path) -> Dict[str, str]:
        delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f, delimiter=delimiter)
            rows = list(reader)
        if not rows:
            raise ValueError(f"label map is empty: {path}")

        required_columns = [self.raw_column, self.canonical_column]
        missing_columns = [col for col in required_columns if col not in rows[0]]
        if missing_columns:
            raise ValueError(f"label map missing required columns: {missing_columns}")

        mapping: Dict[str, str] = {}
        errors: List[str] = []
        for idx, row in enumerate(rows):
            raw = (row.get(self.raw_column) or "").strip()
            canonical = (row.get(self.canonical_column) or "").strip()
            if not raw or not canonical:
                errors.append(f"Row {idx + 2}: empty label")
                continue
            mapping[raw] = canonical
        if errors:
            logger.warning(f"Skipped {len(errors)} rows of {path.name}: {errors[:5]}")

        logger.debug(f"Read {len(mapping)} label mappings from {path}")
        return mapping

    def _remap(self, cloud: PointCloud, mapping: Dict[str, str]) -> PointCloud:
        labels = {i: mapping.get(name, name) for i, name in cloud.semantic_labels.items()}
        unmapped = sorted({n for n in cloud.semantic_labels.values() if n not in mapping})
        if unmapped:
            logger.debug(f"Labels without a mapping kept as-is: {unmapped}")
        return cloud.replace(semantic_labels=labels)

    def load(self, spec: SceneSpec) -> PointCloud:
        """
        Load one scene in its source frame.

        Args:
            spec: Scene entry from the pipeline configuration

        Returns:
            PointCloud with the configured up axis

        Raises:
            SceneLoadError: If the file cannot be read or remapped
        """
        logger.info(f"Loading scene {spec.id} from {spec.path} ({spec.adapter.value})")
        try:
            if spec.adapter == SceneAdapter.XYZ:
                cloud = read_point_file(spec.path, PointFormat.XYZ_TEXT)
            else:
                cloud = read_point_file(spec.path)
            if spec.adapter == SceneAdapter.SCANNET:
                if spec.label_map is None:
                    raise ValueError("the scannet adapter needs a label_map")
                cloud = self._remap(cloud, self.read_label_map(spec.label_map))
            cloud = cloud.replace(up_axis=spec.up_axis)
        except (AxisPromptError, OSError, ValueError) as e:
            raise SceneLoadError(spec.id, str(e)) from e

        logger.info(
            f"Loaded scene {spec.id}: {len(cloud)} points, {len(cloud.instances())} instances"
        )
        return cloud

    def close(self) -> None:
        """Drop cached label maps."""
        with self._lock:
            self._label_maps.clear()

    def __enter__(self) -> "SceneLoader":
        """Context manager entry."""
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        """Context manager exit."""
        self.close()
