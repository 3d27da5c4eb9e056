import pytest

from opgkit.geometry import BBox
from opgkit.memory import PHASE_GLOBAL, CaseMemory
from opgkit.toolbox import (
    CATEGORY_DETECTION,
    CATEGORY_EXPERT,
    CATEGORY_SPATIAL,
    CATEGORY_UTILITY,
    CropRef,
    ToolDescriptor,
    ToolRegistry,
    ToolRequest,
    Toolbox,
    ToolboxError,
    TransportError,
    crop_roi,
    validate_payload,
)


def desc(**kw):
    base = dict(
        id="t1",
        category=CATEGORY_EXPERT,
        endpoint="dead:x",
        capabilities=("read_image",),
        vote_eligible=True,
    )
    base.update(kw)
    return ToolDescriptor(**base)


class TestToolDescriptor:
    def test_unknown_category(self):
        with pytest.raises(ToolboxError):
            desc(category="oracle")

    def test_unknown_capability(self):
        with pytest.raises(ToolboxError):
            desc(capabilities=("divine",))

    def test_utility_must_be_builtin(self):
        with pytest.raises(ToolboxError, match="builtin"):
            desc(category=CATEGORY_UTILITY, vote_eligible=False)
        # and the valid spelling works
        desc(category=CATEGORY_UTILITY, endpoint="builtin", vote_eligible=False)

    def test_only_detection_and_expert_vote(self):
        with pytest.raises(ToolboxError, match="vote"):
            desc(category=CATEGORY_SPATIAL, vote_eligible=True)
        desc(category=CATEGORY_DETECTION, capabilities=("detect_pathology",))


class TestToolRegistry:
    def test_duplicate_id_rejected(self):
        reg = ToolRegistry()
        reg.register(desc())
        with pytest.raises(ToolboxError, match="duplicate"):
            reg.register(desc())

    def test_unknown_lookup(self):
        with pytest.raises(ToolboxError, match="unknown tool"):
            ToolRegistry().get("nope")

    def test_manifest_round_trip(self):
        reg = ToolRegistry()
        reg.register(desc())
        reg.register(desc(id="t2", category=CATEGORY_SPATIAL, vote_eligible=False, capabilities=("detect_teeth",)))
        again = ToolRegistry.from_manifest(reg.manifest())
        assert again.manifest() == reg.manifest()

    def test_relative_mock_paths_resolve_against_manifest(self, tmp_path):
        from opgkit.jsonutil import write_canonical

        manifest = {
            "tools": [
                {
                    "id": "m",
                    "category": "expert",
                    "endpoint": "mock:cases",
                    "capabilities": ["read_image"],
                    "vote_eligible": True,
                }
            ]
        }
        path = tmp_path / "manifest.json"
        write_canonical(path, manifest)
        reg = ToolRegistry.from_manifest(path)
        assert reg.get("m").endpoint == f"mock:{tmp_path / 'cases'}"

    def test_list_is_sorted_and_filterable(self, registry):
        ids = [d.id for d in registry.list()]
        assert ids == sorted(ids)
        assert all(d.category == CATEGORY_EXPERT for d in registry.list(CATEGORY_EXPERT))
        assert len(registry.list(CATEGORY_EXPERT)) == 4


class TestPayloadValidation:
    def test_valid_payloads(self):
        assert validate_payload({}) is None
        assert validate_payload({"boxes": [{"label": "16", "box": [0, 0, 1, 1], "confidence": 0.5}]}) is None
        assert validate_payload({"opinions": [{"location": "tooth:16", "field": "caries", "value": "icdas-3"}]}) is None

    @pytest.mark.parametrize(
        "payload",
        [
            {"boxes": [{"box": [0, 0, 1, 1]}]},  # no label
            {"boxes": [{"label": "16", "box": [5, 0, 1, 1]}]},  # inverted box
            {"boxes": [{"label": "16", "box": [0, 0, 1, 1], "confidence": 1.5}]},
            {"masks": [{"label": "16", "mask": [[0, 0], [1, 1]]}]},  # 2 vertices
            {"opinions": [{"location": "tooth:99", "field": "caries", "value": "x"}]},
            {"opinions": [{"location": "tooth:16", "value": "x"}]},  # no field
        ],
    )
    def test_invalid_payloads(self, payload):
        assert validate_payload(payload) is not None


class TestInvoke:
    def make_toolbox(self, endpoint="dead:x", retries=1):
        reg = ToolRegistry()
        reg.register(desc(endpoint=endpoint))
        mem = CaseMemory("case-t")
        return Toolbox(reg, mem, retries=retries), mem

    def test_dead_endpoint_never_raises(self):
        toolbox, mem = self.make_toolbox()
        result = toolbox.invoke(ToolRequest("t1", "read_image", "img"), phase=PHASE_GLOBAL)
        assert not result.response.ok
        assert result.claim_evidence_ids == []
        items = mem.evidence
        assert len(items) == 1 and items[0].kind == "tool-failure"
        assert items[0].raw["error"]

    def test_retry_then_success(self, monkeypatch):
        toolbox, mem = self.make_toolbox(retries=2)
        attempts = []

        def flaky(desc_, req):
            attempts.append(req.kind)
            if len(attempts) < 3:
                raise TransportError("still warming up")
            return {
                "status": "ok",
                "payload": {"opinions": [{"location": "tooth:16", "field": "caries", "value": "icdas-3"}]},
            }

        monkeypatch.setattr(toolbox, "_transport", flaky)
        result = toolbox.invoke(ToolRequest("t1", "read_image", "img"), phase=PHASE_GLOBAL)
        assert result.response.ok
        assert len(attempts) == 3
        assert len(result.claim_evidence_ids) == 1
        assert mem.get(result.claim_evidence_ids[0]).claim.field == "caries"

    def test_retry_budget_exhausted(self, monkeypatch):
        toolbox, _ = self.make_toolbox(retries=1)
        attempts = []

        def always_down(desc_, req):
            attempts.append(1)
            raise TransportError("nope")

        monkeypatch.setattr(toolbox, "_transport", always_down)
        result = toolbox.invoke(ToolRequest("t1", "read_image", "img"), phase=PHASE_GLOBAL)
        assert not result.response.ok
        assert len(attempts) == 2  # first try + one retry

    def test_schema_invalid_payload_yields_no_claims(self, monkeypatch):
        toolbox, mem = self.make_toolbox()
        monkeypatch.setattr(
            toolbox,
            "_transport",
            lambda d, r: {"status": "ok", "payload": {"opinions": [{"location": "planet:9", "field": "caries", "value": "x"}]}},
        )
        result = toolbox.invoke(ToolRequest("t1", "read_image", "img"), phase=PHASE_GLOBAL)
        assert not result.response.ok
        assert "schema-invalid" in result.response.error
        assert all(item.claim is None for item in mem.evidence)

    def test_unsupported_kind_is_a_caller_bug(self):
        toolbox, _ = self.make_toolbox()
        with pytest.raises(ToolboxError, match="does not support"):
            toolbox.invoke(ToolRequest("t1", "detect_teeth", "img"), phase=PHASE_GLOBAL)


class TestCropRoi:
    def test_padding_arithmetic(self):
        crop = crop_roi("img", BBox(100, 100, 200, 220), padding=0.25)
        # width 100 -> 25 per side; height 120 -> 30 per side
        assert crop.box == BBox(75, 70, 225, 250)
        assert crop.ref == "img#75,70,225,250"

    def test_clamped_to_bounds(self):
        bounds = BBox(0, 0, 210, 240)
        crop = crop_roi("img", BBox(100, 100, 200, 220), padding=0.25, bounds=bounds)
        assert crop.box == BBox(75, 70, 210, 240)

    def test_clamped_at_origin(self):
        crop = crop_roi("img", BBox(5, 5, 20, 20), padding=1.0)
        assert crop.box.x_min == 0.0 and crop.box.y_min == 0.0

    def test_empty_region_rejected(self):
        with pytest.raises(ToolboxError):
            crop_roi("img", BBox(5, 5, 5, 9), padding=0.1)

    def test_coordinate_round_trip(self):
        crop = CropRef("img", BBox(75, 70, 225, 250))
        x, y = crop.to_crop_coords(100, 100)
        assert crop.to_image_coords(x, y) == (100, 100)
