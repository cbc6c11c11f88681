"""Tests for the scene loader and its dataset adapters."""

import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List

import pytest

from axisprompt.config import SceneAdapter, SceneSpec
from axisprompt.exceptions import SceneLoadError
from axisprompt.models import PointCloud
from axisprompt.plyio import write_point_file
from pipeline.scene_loader import SceneLoader

LABEL_MAP = "raw_category\tcategory\nkitchen table\ttable\ncoffee mug\tcup\n"


@pytest.fixture
def raw_scene(tmp_path: Path, two_boxes: PointCloud) -> Path:
    """Two-box scene carrying dataset-style raw labels."""
    raw = two_boxes.replace(semantic_labels={3: "kitchen table", 7: "coffee mug"})
    path = tmp_path / "scene.ply"
    path.write_bytes(write_point_file(raw))
    return path


@pytest.fixture
def label_map(tmp_path: Path) -> Path:
    path = tmp_path / "labels.tsv"
    path.write_text(LABEL_MAP, encoding="utf-8")
    return path


class TestGenericPly:
    """Test the generic PLY adapter."""

    def test_load(self, raw_scene: Path, two_boxes: PointCloud) -> None:
        """Labels come from the header and the configured up axis is applied."""
        with SceneLoader() as loader:
            cloud = loader.load(SceneSpec(id="s", path=raw_scene, up_axis=1))
        assert len(cloud) == len(two_boxes)
        assert cloud.semantic_labels == {3: "kitchen table", 7: "coffee mug"}
        assert cloud.up_axis == 1

    def test_full_alignment_request(self, raw_scene: Path) -> None:
        """A null up axis is kept so normalization runs full 3D alignment."""
        cloud = SceneLoader().load(SceneSpec(id="s", path=raw_scene, up_axis=None))
        assert cloud.up_axis is None

    def test_malformed_file(self, tmp_path: Path) -> None:
        """Read errors carry the scene id."""
        path = tmp_path / "broken.ply"
        path.write_bytes(b"not a ply file")
        with pytest.raises(SceneLoadError) as exc_info:
            SceneLoader().load(SceneSpec(id="broken", path=path))
        assert exc_info.value.scene_id == "broken"

    def test_missing_path_rejected(self, tmp_path: Path) -> None:
        with pytest.raises(ValueError, match="does not exist"):
            SceneSpec(id="s", path=tmp_path / "missing.ply")


class TestScannetAdapter:
    """Test label remapping."""

    def test_remap(self, raw_scene: Path, label_map: Path) -> None:
        spec = SceneSpec(
            id="s", path=raw_scene, adapter=SceneAdapter.SCANNET, label_map=label_map
        )
        cloud = SceneLoader().load(spec)
        assert cloud.semantic_labels == {3: "table", 7: "cup"}

    def test_unmapped_labels_kept(self, raw_scene: Path, tmp_path: Path) -> None:
        """Raw labels missing from the table pass through unchanged."""
        partial = tmp_path / "partial.csv"
        partial.write_text("raw_category,category\nkitchen table,table\n", encoding="utf-8")
        spec = SceneSpec(id="s", path=raw_scene, adapter=SceneAdapter.SCANNET, label_map=partial)
        cloud = SceneLoader().load(spec)
        assert cloud.semantic_labels == {3: "table", 7: "coffee mug"}

    def test_blank_rows_skipped(self, tmp_path: Path) -> None:
        path = tmp_path / "labels.tsv"
        path.write_text(LABEL_MAP + "\tchair\n", encoding="utf-8")
        assert SceneLoader().read_label_map(path) == {"kitchen table": "table", "coffee mug": "cup"}

    def test_label_map_cached(self, label_map: Path) -> None:
        """A table is read once per loader."""
        loader = SceneLoader()
        first = loader.read_label_map(label_map)
        label_map.write_text("raw_category\tcategory\nsofa\tcouch\n", encoding="utf-8")
        assert loader.read_label_map(label_map) is first
        loader.close()
        assert loader.read_label_map(label_map) == {"sofa": "couch"}

    def test_shared_loader_reads_once(
        self, label_map: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Workers sharing a loader parse a table once and all get the same mapping."""
        loader = SceneLoader()
        parse = loader._parse_label_map
        calls: List[Path] = []

        def slow_parse(path: Path) -> Dict[str, str]:
            calls.append(path)
            time.sleep(0.05)
            return parse(path)

        monkeypatch.setattr(loader, "_parse_label_map", slow_parse)
        with ThreadPoolExecutor(max_workers=8) as pool:
            maps = list(pool.map(lambda _: loader.read_label_map(label_map), range(16)))
        assert len(calls) == 1
        assert all(m is maps[0] for m in maps)
        assert maps[0] == {"kitchen table": "table", "coffee mug": "cup"}

    def test_needs_label_map(self, raw_scene: Path) -> None:
        spec = SceneSpec(id="s", path=raw_scene, adapter=SceneAdapter.SCANNET)
        with pytest.raises(SceneLoadError, match="label_map"):
            SceneLoader().load(spec)

    def test_missing_columns(self, raw_scene: Path, tmp_path: Path) -> None:
        path = tmp_path / "labels.csv"
        path.write_text("name,category\nkitchen table,table\n", encoding="utf-8")
        spec = SceneSpec(id="s", path=raw_scene, adapter=SceneAdapter.SCANNET, label_map=path)
        with pytest.raises(SceneLoadError, match="missing required columns"):
            SceneLoader().load(spec)

    def test_empty_map(self, raw_scene: Path, tmp_path: Path) -> None:
        path = tmp_path / "labels.csv"
        path.write_text("raw_category,category\n", encoding="utf-8")
        spec = SceneSpec(id="s", path=raw_scene, adapter=SceneAdapter.SCANNET, label_map=path)
        with pytest.raises(SceneLoadError, match="empty"):
            SceneLoader().load(spec)


class TestXyzAdapter:
    """Test plain-text point files."""

    def test_load(self, tmp_path: Path) -> None:
        path = tmp_path / "points.txt"
        path.write_text("# x y z r g b\n0 0 0 255 0 0\n1 2 3 0 255 0\n", encoding="utf-8")
        cloud = SceneLoader().load(SceneSpec(id="s", path=path, adapter=SceneAdapter.XYZ))
        assert len(cloud) == 2
        assert cloud.positions[1].tolist() == [1.0, 2.0, 3.0]
        assert cloud.up_axis == 2

    def test_bad_row(self, tmp_path: Path) -> None:
        path = tmp_path / "points.txt"
        path.write_text("0 0 0\n1 2\n", encoding="utf-8")
        with pytest.raises(SceneLoadError, match="line 2"):
            SceneLoader().load(SceneSpec(id="s", path=path, adapter=SceneAdapter.XYZ))
