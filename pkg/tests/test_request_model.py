"""Core data types: request lifecycle, latency models, config validation."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from specsim.acceptance_model import AcceptanceModel
from specsim.errors import ConfigError
from specsim.request_model import (
    TERMINAL_STATES,
    LatencyModel,
    Request,
    RequestState,
    SimConfig,
    StepRecord,
    validate_config,
)

LEGAL_EDGES = {
    (RequestState.WAITING, RequestState.PREFILL),
    (RequestState.PREFILL, RequestState.DECODING),
    (RequestState.DECODING, RequestState.FINISHED),
    (RequestState.DECODING, RequestState.PREEMPTED),
    (RequestState.DECODING, RequestState.ABORTED),
}


def make_config(**overrides) -> SimConfig:
    base = dict(
        mode="psd",
        m=16,
        k=3,
        capacity=48,
        draft_latency=LatencyModel("constant", 1.0, 0.0, 0.0),
        verify_latency=LatencyModel("constant", 1.0, 0.0, 0.0),
        comm_overhead=0.0,
        acceptance=AcceptanceModel("deterministic-accept-all"),
        block_size=16,
        seed=0,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestRequestLifecycle:
    @given(
        src=st.sampled_from(list(RequestState)),
        dst=st.sampled_from(list(RequestState)),
    )
    def test_only_documented_edges(self, src, dst):
        req = Request(id=0, arrival_time=0.0, prompt_len=4, target_output_len=8)
        req.state = src
        if (src, dst) in LEGAL_EDGES:
            req.transition(dst)
            assert req.state is dst
        else:
            with pytest.raises(ValueError):
                req.transition(dst)

    def test_terminal_states_have_no_exits(self):
        for state in TERMINAL_STATES:
            req = Request(id=1, arrival_time=0.0, prompt_len=4, target_output_len=8)
            req.state = state
            for dst in RequestState:
                with pytest.raises(ValueError):
                    req.transition(dst)

    def test_remaining(self):
        req = Request(id=2, arrival_time=0.0, prompt_len=4, target_output_len=10)
        assert req.remaining == 10
        req.generated = 7
        assert req.remaining == 3


class TestLatencyModel:
    def test_constant_ignores_shape(self):
        lm = LatencyModel("constant", 2.5, 0.0, 0.0)
        assert lm.duration(0, 1) == 2.5
        assert lm.duration(1000, 64) == 2.5

    def test_constant_zero_requests_is_free(self):
        lm = LatencyModel("constant", 2.5, 0.0, 0.0)
        assert lm.duration(0, 0) == 0.0

    def test_affine(self):
        lm = LatencyModel("affine", 1.0, 0.5, 0.25)
        assert lm.duration(4, 2) == pytest.approx(1.0 + 2.0 + 0.5)

    def test_affine_zero_requests_is_free(self):
        lm = LatencyModel("affine", 1.0, 0.5, 0.25)
        assert lm.duration(0, 0) == 0.0

    @given(
        tokens=st.integers(0, 10_000),
        requests=st.integers(0, 64),
        base=st.floats(0.0, 10.0),
        per_token=st.floats(0.0, 1.0),
        per_request=st.floats(0.0, 1.0),
    )
    def test_never_negative(self, tokens, requests, base, per_token, per_request):
        lm = LatencyModel("affine", base, per_token, per_request)
        assert lm.duration(tokens, requests) >= 0.0

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            LatencyModel("quadratic", 1.0, 0.0, 0.0)

    def test_negative_coefficients_rejected(self):
        with pytest.raises(ValueError):
            LatencyModel("affine", -1.0, 0.0, 0.0)


class TestValidateConfig:
    def test_consistent_passes(self):
        cfg = make_config()
        assert validate_config(cfg) is cfg

    def test_capacity_mismatch(self):
        with pytest.raises(ConfigError, match="capacity mismatch"):
            validate_config(make_config(capacity=47))

    def test_block_size_must_be_positive(self):
        with pytest.raises(ConfigError, match="block size must be positive"):
            validate_config(make_config(block_size=0))

    def test_capacity_defaults_to_m_times_k(self):
        cfg = make_config(capacity=None)
        assert cfg.effective_capacity == 48
        validate_config(cfg)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            validate_config(make_config(mode="turbo"))

    def test_nonpositive_m_k(self):
        with pytest.raises(ConfigError):
            validate_config(make_config(m=0))
        with pytest.raises(ConfigError):
            validate_config(make_config(k=0))

    def test_negative_comm(self):
        with pytest.raises(ConfigError):
            validate_config(make_config(comm_overhead=-0.5))

    def test_bad_policy_names(self):
        with pytest.raises(ConfigError):
            validate_config(make_config(assign_policy="round-robin"))
        with pytest.raises(ConfigError):
            validate_config(make_config(kv_policy="lazy"))

    def test_k_overrides_relax_capacity_rule(self):
        cfg = make_config(m=2, k=3, capacity=5, k_overrides=(2, 3))
        validate_config(cfg)

    def test_k_overrides_must_be_positive(self):
        with pytest.raises(ConfigError):
            validate_config(make_config(m=2, capacity=None, k_overrides=(3, 0)))


class TestDraftLen:
    def test_uniform_default(self):
        cfg = make_config()
        assert cfg.draft_len(0) == 3
        assert cfg.draft_len(11) == 3

    def test_positional_overrides(self):
        cfg = make_config(m=2, capacity=None, k_overrides=(5, 2))
        assert cfg.draft_len(0) == 5
        assert cfg.draft_len(1) == 2
        assert cfg.draft_len(2) == 3


def test_step_record_shape():
    rec = StepRecord(
        step_index=1,
        target_batch=0,
        draft_batch=1,
        drafted_tokens=12,
        accepted_tokens=9,
        bonus_tokens=4,
        draft_duration=1.0,
        verify_duration=1.0,
        prefill_duration=0.0,
        step_duration=1.0,
        fallback=False,
    )
    assert rec.accepted_tokens <= rec.drafted_tokens
    with pytest.raises(AttributeError):
        rec.step_index = 2
