import json

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from dispatchsim.errors import ExtractionError, InputError, TransportError
from dispatchsim.llm import (
    GeneratorClient,
    GeneratorConfig,
    OperatorKind,
    build_bundle,
    compose_prompt,
    dyn_block,
    extract_objective,
)
from dispatchsim.objectives import builtin, serialize

from conftest import make_matrix, make_snapshot


@pytest.fixture
def bundle(line_matrix):
    return build_bundle(line_matrix)


@pytest.fixture
def snap():
    return make_snapshot(vehicles=[(0, 100), (2, 40)], requests=[(0, 1, 30), (3, 2, 90)], clock=100)


class TestComposePrompt:
    def test_block_order_fixed(self, bundle, snap):
        text = compose_prompt(bundle, OperatorKind.RANDOM, snap)
        positions = [text.index(marker) for marker in
                     ("[role]", "[geography]", "[objective schema]", "[state]", "[task]", "[rules]")]
        assert positions == sorted(positions)
        for marker in ("[role]", "[geography]", "[objective schema]", "[state]", "[task]", "[rules]"):
            assert text.count(marker) == 1

    def test_random_operator_has_no_parent(self, bundle, snap):
        text = compose_prompt(bundle, OperatorKind.RANDOM, snap)
        assert "without historical" in text
        assert "[parent]" not in text
        with pytest.raises(InputError):
            compose_prompt(bundle, OperatorKind.RANDOM, snap, parent_text="x")

    def test_refine_embeds_parent_and_fitness(self, bundle, snap):
        parent = "objective 1: {}\nfitness: 3.2 min mean wait"
        text = compose_prompt(bundle, OperatorKind.REFINE, snap, parent_text=parent)
        assert "[parent]" in text
        assert "fitness: 3.2" in text
        assert "half of the parent" in text

    def test_reinvent_needs_parent(self, bundle, snap):
        with pytest.raises(InputError):
            compose_prompt(bundle, OperatorKind.REINVENT, snap)

    def test_purity(self, bundle, snap):
        a = compose_prompt(bundle, OperatorKind.RANDOM, snap)
        b = compose_prompt(bundle, OperatorKind.RANDOM, snap)
        assert a == b

    def test_dyn_block_lists_state(self, snap):
        text = dyn_block(snap)
        assert "pending_count: 2" in text
        assert "veh 0: zone=0 free_at=100" in text
        assert "req 1: origin=3 dest=2 t=90" in text

    def test_geo_block_caps_rendered_zones(self):
        import numpy as np

        big = make_matrix(np.zeros((30, 30)))
        bundle = build_bundle(big)
        assert "11 more zones omitted" in bundle.geo


class TestMockClient:
    def test_valid_mode_always_parses(self, bundle, snap):
        client = GeneratorClient(GeneratorConfig(mode="mock", mock_invalid_rate=0.0, mock_seed=3))
        for k in range(20):
            snap_k = make_snapshot(vehicles=[(0, k)], requests=[(0, 1, k)], clock=k)
            prompt = compose_prompt(bundle, OperatorKind.RANDOM, snap_k)
            spec = extract_objective(client.complete(prompt))
            assert spec.components

    def test_invalid_mode_never_parses(self, bundle, snap):
        client = GeneratorClient(GeneratorConfig(mode="mock", mock_invalid_rate=1.0, mock_seed=3))
        for k in range(20):
            snap_k = make_snapshot(vehicles=[(0, k)], requests=[(0, 1, k)], clock=k)
            prompt = compose_prompt(bundle, OperatorKind.RANDOM, snap_k)
            with pytest.raises(ExtractionError):
                extract_objective(client.complete(prompt))

    def test_deterministic_per_seed_and_prompt(self, bundle, snap):
        cfg = GeneratorConfig(mode="mock", mock_invalid_rate=0.5, mock_seed=9)
        a = GeneratorClient(cfg)
        b = GeneratorClient(cfg)
        prompt = compose_prompt(bundle, OperatorKind.RANDOM, snap)
        assert a.complete(prompt) == b.complete(prompt)
        other = GeneratorClient(GeneratorConfig(mode="mock", mock_invalid_rate=0.5, mock_seed=10))
        # a different seed gives a different stream somewhere
        prompts = [
            compose_prompt(bundle, OperatorKind.RANDOM,
                           make_snapshot(vehicles=[(0, k)], requests=[(0, 1, k)], clock=k))
            for k in range(10)
        ]
        assert any(a.complete(p) != other.complete(p) for p in prompts)

    def test_invalid_rate_statistics(self, bundle):
        client = GeneratorClient(GeneratorConfig(mode="mock", mock_invalid_rate=0.5, mock_seed=1))
        bad = 0
        n = 1000
        for k in range(n):
            snap_k = make_snapshot(vehicles=[(0, k)], requests=[(0, 1, k)], clock=k)
            prompt = compose_prompt(bundle, OperatorKind.RANDOM, snap_k)
            try:
                extract_objective(client.complete(prompt))
            except ExtractionError:
                bad += 1
        assert 0.45 <= bad / n <= 0.55


class TestAdaptiveClient:
    def test_utilization_scales_with_pending(self, bundle):
        client = GeneratorClient(GeneratorConfig(mode="adaptive"))
        small = make_snapshot(vehicles=[(0, 0)], requests=[(0, 1, 0)])
        big = make_snapshot(vehicles=[(0, 0)], requests=[(0, 1, 0)] * 12)
        spec_small = extract_objective(client.complete(compose_prompt(bundle, OperatorKind.RANDOM, small)))
        spec_big = extract_objective(client.complete(compose_prompt(bundle, OperatorKind.RANDOM, big)))
        assert spec_big.weights[-1] > spec_small.weights[-1]


def test_audit_log_records_exchanges(tmp_path, bundle, snap):
    audit = tmp_path / "audit.jsonl"
    client = GeneratorClient(
        GeneratorConfig(mode="mock", mock_seed=4, audit_path=str(audit))
    )
    prompt = compose_prompt(bundle, OperatorKind.RANDOM, snap)
    first = client.complete(prompt)
    client.complete(prompt)
    lines = audit.read_text().strip().splitlines()
    assert len(lines) == 2
    entry = json.loads(lines[0])
    assert entry["prompt"] == prompt
    assert entry["response"] == first


class TestRemoteClient:
    def _cfg(self, **kw):
        defaults = dict(mode="remote", endpoint_url="https://llm.test/v1/chat",
                        max_retries=2, backoff_base=0.0)
        defaults.update(kw)
        return GeneratorConfig(**defaults)

    def test_round_trip_against_stub(self):
        doc = serialize(builtin("distance"))

        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            assert body["model"] == "micro-model"
            assert body["temperature"] == 0.9
            assert body["messages"][0]["role"] == "user"
            return httpx.Response(
                200, json={"choices": [{"message": {"content": f"Sure: {doc}"}}]}
            )

        client = GeneratorClient(self._cfg(model_name="micro-model"),
                                 transport=httpx.MockTransport(handler))
        raw = client.complete("prompt text")
        assert extract_objective(raw) == builtin("distance")

    def test_retries_then_succeeds(self):
        calls = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(429, json={"error": "rate limited"})
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        client = GeneratorClient(self._cfg(), transport=httpx.MockTransport(handler))
        assert client.complete("p") == "ok"
        assert calls["n"] == 3

    def test_transport_error_after_retries(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(503, json={"error": "down"})

        client = GeneratorClient(self._cfg(), transport=httpx.MockTransport(handler))
        with pytest.raises(TransportError, match="3 attempts"):
            client.complete("p")

    def test_malformed_payload_is_transport_error(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"unexpected": True})

        client = GeneratorClient(self._cfg(), transport=httpx.MockTransport(handler))
        with pytest.raises(TransportError):
            client.complete("p")

    def test_remote_requires_endpoint(self):
        with pytest.raises(InputError):
            GeneratorConfig(mode="remote")


class TestExtraction:
    def test_json_wrapped_in_prose(self):
        doc = serialize(builtin("distance"))
        raw = f"Let me think.\nHere is my answer:\n{doc}\nHope this helps."
        assert extract_objective(raw) == builtin("distance")

    def test_refusal_is_error(self):
        with pytest.raises(ExtractionError, match="no JSON"):
            extract_objective("I cannot help with that.")

    def test_six_components_rejected(self):
        doc = json.dumps(
            {"components": [{"form": "LoadQuadratic"}] * 6, "weights": [1] * 6}
        )
        with pytest.raises(ExtractionError, match="rejected"):
            extract_objective(f"Answer: {doc}")

    def test_skips_non_objective_braces(self):
        doc = serialize(builtin("temporal"))
        raw = "context {not json} then " + doc
        assert extract_objective(raw) == builtin("temporal")

    @given(st.text(max_size=300))
    @settings(max_examples=200)
    def test_never_panics(self, text):
        try:
            extract_objective(text)
        except ExtractionError:
            pass

    @given(st.binary(max_size=200))
    def test_never_panics_on_bytes(self, blob):
        try:
            extract_objective(blob.decode("latin-1"))
        except ExtractionError:
            pass
