"""Gateway behavior: schema validation, HTTP retries, and the two mocks."""
import json

import httpx
import pytest

from radflag.gateway import (
    DETECTION_PASSES,
    PASS_COMBINED_RAW,
    PASS_DETECT,
    PASS_EXTRACT,
    PASS_VERIFY,
    FixtureMiss,
    GatewayError,
    HttpProvider,
    MalformedOutput,
    ModelSpec,
    ProtocolError,
    ProviderConfig,
    ProviderError,
    SchemaConstraint,
    SchemaViolation,
    ScriptedMockProvider,
    ScriptedReply,
    StochasticMockProvider,
    TransportFailure,
    validate_structured,
)

MODEL = ModelSpec("o3", "advanced")
SCHEMA = SchemaConstraint("error_report", ("error", "error_reason"))


class TestSchemaConstraint:
    def test_json_schema_shape(self):
        assert SCHEMA.to_json_schema() == {
            "type": "object",
            "properties": {
                "error": {"type": "string"},
                "error_reason": {"type": "string"},
            },
            "required": ["error", "error_reason"],
            "additionalProperties": False,
        }

    def test_strict_forbids_additional_properties(self):
        with pytest.raises(ValueError):
            SchemaConstraint("x", ("a",), strict=True, additional_properties_allowed=True)

    def test_empty_keys_rejected(self):
        with pytest.raises(ValueError):
            SchemaConstraint("x", ())


class TestValidateStructured:
    def test_valid_reply(self):
        fields = validate_structured(
            '{"error": "no error", "error_reason": "N/A"}', SCHEMA
        )
        assert fields == {"error": "no error", "error_reason": "N/A"}

    def test_missing_key(self):
        with pytest.raises(SchemaViolation, match="error_reason"):
            validate_structured('{"error": "x"}', SCHEMA)

    def test_extra_key(self):
        with pytest.raises(SchemaViolation, match="confidence"):
            validate_structured(
                '{"error": "x", "error_reason": "y", "confidence": "0.9"}', SCHEMA
            )

    def test_non_object(self):
        with pytest.raises(MalformedOutput):
            validate_structured('["error", "reason"]', SCHEMA)

    def test_unparseable(self):
        with pytest.raises(MalformedOutput):
            validate_structured('{"error": "x", ', SCHEMA)

    def test_non_string_value(self):
        with pytest.raises(SchemaViolation, match="error_reason"):
            validate_structured('{"error": "x", "error_reason": 3}', SCHEMA)

    def test_extra_key_tolerated_when_allowed(self):
        loose = SchemaConstraint(
            "loose", ("a",), strict=False, additional_properties_allowed=True
        )
        assert validate_structured('{"a": "1", "b": "2"}', loose) == {"a": "1"}


def _response(content='{"error": "no error", "error_reason": "N/A"}',
              prompt_tokens=120, completion_tokens=9):
    return {
        "choices": [{"message": {"content": content}}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
    }


def _provider(handler, **config_kwargs):
    config_kwargs.setdefault("base_url", "https://llm.example")
    config_kwargs.setdefault("backoff_base", 0.0)
    config = ProviderConfig(**config_kwargs)
    return HttpProvider(config, transport=httpx.MockTransport(handler))


class TestHttpProvider:
    def test_success_parses_content_and_usage(self):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=_response())

        provider = _provider(handler)
        result = provider.complete(MODEL, "system", "user", SCHEMA)
        assert result.content == '{"error": "no error", "error_reason": "N/A"}'
        assert (result.input_tokens, result.output_tokens) == (120, 9)
        assert result.model_name == "o3"
        assert seen["url"] == "https://llm.example/chat/completions"
        assert seen["body"]["model"] == "o3"
        assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
        fmt = seen["body"]["response_format"]
        assert fmt["type"] == "json_schema"
        assert fmt["json_schema"]["schema"] == SCHEMA.to_json_schema()

    def test_api_key_sent_as_bearer(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=_response())

        provider = HttpProvider(
            ProviderConfig(base_url="https://llm.example"),
            api_key="sk-test",
            transport=httpx.MockTransport(handler),
        )
        provider.complete(MODEL, "s", "u", SCHEMA)
        assert seen["auth"] == "Bearer sk-test"

    def test_key_read_from_named_environment_variable(self, monkeypatch):
        monkeypatch.setenv("RADFLAG_TEST_KEY", "sk-env")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=_response())

        provider = HttpProvider(
            ProviderConfig(base_url="https://llm.example", api_key_ref="RADFLAG_TEST_KEY"),
            transport=httpx.MockTransport(handler),
        )
        provider.complete(MODEL, "s", "u", SCHEMA)
        assert seen["auth"] == "Bearer sk-env"

    def test_missing_environment_variable_is_loud(self, monkeypatch):
        monkeypatch.delenv("RADFLAG_ABSENT_KEY", raising=False)
        with pytest.raises(GatewayError, match="RADFLAG_ABSENT_KEY"):
            HttpProvider(
                ProviderConfig(
                    base_url="https://llm.example", api_key_ref="RADFLAG_ABSENT_KEY"
                )
            )

    def test_retries_429_then_succeeds(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            if len(attempts) < 3:
                return httpx.Response(429, text="slow down")
            return httpx.Response(200, json=_response())

        provider = _provider(handler, max_retries=3)
        result = provider.complete(MODEL, "s", "u", SCHEMA)
        assert len(attempts) == 3
        assert result.input_tokens == 120

    @pytest.mark.parametrize("status", [500, 502, 503, 504])
    def test_retryable_statuses_exhaust_to_provider_error(self, status):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(status, text="boom")

        provider = _provider(handler, max_retries=2)
        with pytest.raises(ProviderError) as excinfo:
            provider.complete(MODEL, "s", "u", SCHEMA)
        assert excinfo.value.status_code == status
        assert len(attempts) == 3  # initial + 2 retries

    def test_client_error_fails_fast(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(400, text="bad request")

        provider = _provider(handler, max_retries=5)
        with pytest.raises(ProviderError):
            provider.complete(MODEL, "s", "u", SCHEMA)
        assert len(attempts) == 1

    def test_transport_failure_exhausts_to_transport_error(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            raise httpx.ConnectError("refused")

        provider = _provider(handler, max_retries=2)
        with pytest.raises(TransportFailure):
            provider.complete(MODEL, "s", "u", SCHEMA)
        assert len(attempts) == 3

    def test_missing_usage_is_protocol_error(self):
        def handler(request):
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "{}"}}]}
            )

        with pytest.raises(ProtocolError, match="usage"):
            _provider(handler).complete(MODEL, "s", "u", SCHEMA)

    def test_non_json_response_is_protocol_error(self):
        def handler(request):
            return httpx.Response(200, text="<html>gateway</html>")

        with pytest.raises(ProtocolError):
            _provider(handler).complete(MODEL, "s", "u", SCHEMA)

    def test_empty_prompts_rejected(self):
        provider = _provider(lambda request: httpx.Response(200, json=_response()))
        with pytest.raises(ValueError):
            provider.complete(MODEL, "", "u", SCHEMA)


class TestScriptedMock:
    def test_replays_fixture(self, scripted_provider):
        result = scripted_provider.complete(
            MODEL, "s", "u", SCHEMA, pass_id=PASS_DETECT, report_id="r03"
        )
        fields = json.loads(result.content)
        assert fields["error"] != "no error"
        assert result.input_tokens > 0 and result.output_tokens > 0

    def test_call_log_and_counts(self, scripted_provider):
        scripted_provider.complete(
            MODEL, "s", "u", SCHEMA, pass_id=PASS_EXTRACT, report_id="r01"
        )
        scripted_provider.complete(
            MODEL, "s", "u", SCHEMA, pass_id=PASS_EXTRACT, report_id="r02"
        )
        assert scripted_provider.calls == [("p1", "r01"), ("p1", "r02")]
        assert scripted_provider.call_count(PASS_EXTRACT) == 2
        assert scripted_provider.call_count(PASS_VERIFY) == 0

    def test_fixture_miss_names_call(self, scripted_provider):
        with pytest.raises(FixtureMiss, match="r99"):
            scripted_provider.complete(
                MODEL, "s", "u", SCHEMA, pass_id=PASS_DETECT, report_id="r99"
            )

    def test_dict_replies_serialized_on_load(self, tmp_path):
        path = tmp_path / "fixtures.jsonl"
        path.write_text(
            json.dumps(
                {
                    "pass": "p2",
                    "report_id": "a",
                    "reply": {"error": "no error", "error_reason": "N/A"},
                    "input_tokens": 10,
                    "output_tokens": 2,
                }
            )
            + "\n"
        )
        provider = ScriptedMockProvider.from_jsonl(path)
        result = provider.complete(MODEL, "s", "u", SCHEMA, pass_id="p2", report_id="a")
        assert json.loads(result.content) == {"error": "no error", "error_reason": "N/A"}

    def test_direct_fixture_mapping(self):
        provider = ScriptedMockProvider(
            {("p2", "a"): ScriptedReply('{"error":"no error","error_reason":"N/A"}', 5, 1)}
        )
        result = provider.complete(MODEL, "s", "u", SCHEMA, pass_id="p2", report_id="a")
        assert result.input_tokens == 5


class TestStochasticMock:
    def _flags(self, provider, ids):
        flagged = set()
        for rid in ids:
            result = provider.complete(
                MODEL, "s", "u", SCHEMA, pass_id=PASS_DETECT, report_id=rid
            )
            if json.loads(result.content)["error"] != "no error":
                flagged.add(rid)
        return flagged

    def test_same_seed_identical_decisions(self):
        ids = [f"r{i}" for i in range(200)]
        labels = {rid: i < 20 for i, rid in enumerate(ids)}
        a = StochasticMockProvider(0.8, 0.9, labels, seed=42)
        b = StochasticMockProvider(0.8, 0.9, labels, seed=42)
        assert self._flags(a, ids) == self._flags(b, ids)

    def test_decisions_independent_of_call_order(self):
        ids = [f"r{i}" for i in range(100)]
        labels = {rid: i < 10 for i, rid in enumerate(ids)}
        forward = StochasticMockProvider(0.7, 0.85, labels, seed=5)
        backward = StochasticMockProvider(0.7, 0.85, labels, seed=5)
        assert self._flags(forward, ids) == self._flags(backward, list(reversed(ids)))

    def test_detection_identical_across_detection_passes(self):
        # all detection passes share one keyed draw, so f1/f2/f3 agree
        labels = {"a": True, "b": False, "c": False}
        provider = StochasticMockProvider(0.9, 0.6, labels, seed=9)
        verdicts = {}
        for pass_id in sorted(DETECTION_PASSES):
            for rid in labels:
                result = provider.complete(
                    MODEL, "s", "u", SCHEMA, pass_id=pass_id, report_id=rid
                )
                verdicts.setdefault(rid, set()).add(
                    json.loads(result.content)["error"] == "no error"
                )
        assert all(len(values) == 1 for values in verdicts.values())

    def test_perfect_operating_point(self):
        ids = [f"r{i}" for i in range(50)]
        labels = {rid: i % 2 == 0 for i, rid in enumerate(ids)}
        provider = StochasticMockProvider(1.0, 1.0, labels, seed=0)
        flagged = self._flags(provider, ids)
        assert flagged == {rid for rid in ids if labels[rid]}

    def test_flag_rate_tracks_specificity(self):
        ids = [f"n{i}" for i in range(2000)]  # all clean
        provider = StochasticMockProvider(1.0, 0.9, {}, seed=3)
        rate = len(self._flags(provider, ids)) / len(ids)
        assert 0.07 < rate < 0.13

    def test_extract_reply_matches_preprocessing_schema(self):
        provider = StochasticMockProvider(1.0, 1.0, {}, seed=0)
        result = provider.complete(
            MODEL, "s", "u",
            SchemaConstraint("preprocessing", ("findings", "impression")),
            pass_id=PASS_EXTRACT, report_id="x",
        )
        fields = json.loads(result.content)
        assert set(fields) == {"findings", "impression"}

    def test_verifier_confirms(self):
        provider = StochasticMockProvider(0.5, 0.5, {}, seed=0)
        result = provider.complete(
            MODEL, "s", "u", SCHEMA, pass_id=PASS_VERIFY, report_id="x"
        )
        assert json.loads(result.content)["error"] != "no error"

    def test_unknown_pass_rejected(self):
        provider = StochasticMockProvider(0.5, 0.5, {}, seed=0)
        with pytest.raises(FixtureMiss):
            provider.complete(MODEL, "s", "u", SCHEMA, pass_id="p9", report_id="x")

    @pytest.mark.parametrize("sens,spec", [(-0.1, 0.5), (1.1, 0.5), (0.5, -0.1), (0.5, 2)])
    def test_operating_point_bounds(self, sens, spec):
        with pytest.raises(ValueError):
            StochasticMockProvider(sens, spec, {}, seed=0)

    def test_combined_raw_pass_also_detects(self):
        provider = StochasticMockProvider(1.0, 1.0, {"a": True}, seed=1)
        result = provider.complete(
            MODEL, "s", "u", SCHEMA, pass_id=PASS_COMBINED_RAW, report_id="a"
        )
        assert json.loads(result.content)["error"] != "no error"
