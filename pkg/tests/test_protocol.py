import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wiswitch.protocol import (
    Cause,
    InvalidDeviceId,
    MalformedJson,
    ProtocolError,
    SchemaViolation,
    StatusReport,
    SwitchState,
    decode_command,
    decode_status,
    encode_command,
    encode_status,
    validate_device_id,
)

DEVICE_IDS = st.from_regex(r"[a-z0-9-]{1,64}", fullmatch=True)
CAUSES = st.one_of(
    st.just(Cause.local()),
    st.just(Cause.boot()),
    st.builds(Cause.cloud, st.text(min_size=1, max_size=24)),
    st.builds(Cause.schedule, st.integers(min_value=0, max_value=10**9)),
)
REPORTS = st.builds(
    StatusReport,
    device=DEVICE_IDS,
    state=st.sampled_from(SwitchState),
    at=st.integers(min_value=0, max_value=2**53),
    cause=CAUSES,
)


class TestCommandPayload:
    def test_exact_wire_bytes(self):
        assert encode_command(SwitchState.ON) == b'{"Switch":"on"}'
        assert encode_command(SwitchState.OFF) == b'{"Switch":"off"}'

    def test_round_trip(self):
        for state in SwitchState:
            assert decode_command(encode_command(state)) is state

    def test_encode_decode_identity_on_wire(self):
        payload = b'{"Switch":"on"}'
        assert encode_command(decode_command(payload)) == payload

    def test_decode_accepts_whitespace_variant(self):
        # whitespace is JSON, not schema; only canonical bytes come out of encoders
        assert decode_command(b'{ "Switch": "off" }') is SwitchState.OFF

    def test_uppercase_value_rejected(self):
        with pytest.raises(SchemaViolation, match="ON"):
            decode_command(b'{"Switch":"ON"}')

    def test_extra_key_rejected(self):
        with pytest.raises(SchemaViolation, match="x"):
            decode_command(b'{"Switch":"on","x":1}')

    def test_wrong_key_rejected(self):
        with pytest.raises(SchemaViolation):
            decode_command(b'{"switch":"on"}')

    def test_non_object_rejected(self):
        with pytest.raises(SchemaViolation):
            decode_command(b'"Switch:on"')

    def test_malformed_json(self):
        with pytest.raises(MalformedJson):
            decode_command(b"{")

    def test_invalid_utf8(self):
        with pytest.raises(MalformedJson):
            decode_command(b'\xff\xfe{"Switch":"on"}')


class TestStatusPayload:
    def test_exact_wire_bytes_boot(self):
        report = StatusReport("lamp-1", SwitchState.ON, 0, Cause.boot())
        assert encode_status(report) == b'{"Switch":"on","at":0,"cause":"boot"}'

    def test_exact_wire_bytes_cloud(self):
        report = StatusReport("lamp-1", SwitchState.OFF, 1500, Cause.cloud("c1"))
        assert encode_status(report) == b'{"Switch":"off","at":1500,"cause":"cloud:c1"}'

    def test_decode_inverse(self):
        got = decode_status(b'{"Switch":"on","at":0,"cause":"boot"}', "lamp-1")
        assert got == StatusReport("lamp-1", SwitchState.ON, 0, Cause.boot())

    def test_missing_fields_rejected(self):
        with pytest.raises(SchemaViolation, match="missing"):
            decode_status(b'{"Switch":"on"}', "lamp-1")

    def test_negative_timestamp_rejected(self):
        with pytest.raises(SchemaViolation, match="-1"):
            decode_status(b'{"Switch":"on","at":-1,"cause":"boot"}', "lamp-1")

    @pytest.mark.parametrize("at", ["true", "1.5", '"7"'])
    def test_non_integer_timestamp_rejected(self, at):
        with pytest.raises(SchemaViolation):
            decode_status(b'{"Switch":"on","at":%s,"cause":"boot"}' % at.encode(), "lamp-1")

    @pytest.mark.parametrize(
        "tag", ["cloud:", "schedule:", "schedule:x", "schedule:01", "Boot", "", "cloud"]
    )
    def test_bad_cause_tags_rejected(self, tag):
        payload = ('{"Switch":"on","at":1,"cause":"%s"}' % tag).encode()
        with pytest.raises(SchemaViolation):
            decode_status(payload, "lamp-1")

    def test_non_string_cause_rejected(self):
        with pytest.raises(SchemaViolation):
            decode_status(b'{"Switch":"on","at":1,"cause":7}', "lamp-1")

    def test_extra_key_rejected(self):
        with pytest.raises(SchemaViolation, match="extra"):
            decode_status(b'{"Switch":"on","at":1,"cause":"boot","extra":0}', "lamp-1")

    @given(REPORTS)
    def test_round_trip_property(self, report):
        assert decode_status(encode_status(report), report.device) == report

    @given(REPORTS)
    def test_deterministic_encoding(self, report):
        assert encode_status(report) == encode_status(report)


class TestCauseTags:
    def test_schedule_round_trip(self):
        assert Cause.from_tag("schedule:0") == Cause.schedule(0)
        assert Cause.schedule(12).tag() == "schedule:12"

    def test_cloud_id_may_contain_colons(self):
        cause = Cause.from_tag("cloud:a:b")
        assert cause == Cause.cloud("a:b")
        assert cause.tag() == "cloud:a:b"


class TestDeviceIds:
    def test_accepts_typical_id(self):
        assert validate_device_id("kitchen-1") == "kitchen-1"

    def test_rejects_empty(self):
        with pytest.raises(InvalidDeviceId, match="empty"):
            validate_device_id("")

    def test_rejects_uppercase(self):
        with pytest.raises(InvalidDeviceId):
            validate_device_id("Kitchen")

    def test_rejects_too_long(self):
        with pytest.raises(InvalidDeviceId, match="64"):
            validate_device_id("a" * 65)

    def test_accepts_max_length(self):
        validate_device_id("a" * 64)

    @pytest.mark.parametrize("bad", ["lamp_1", "lamp 1", "lämp", "a.b"])
    def test_rejects_charset_violations(self, bad):
        with pytest.raises(InvalidDeviceId):
            validate_device_id(bad)


def test_fuzz_decoders_never_crash():
    rng = random.Random(0xF00D)
    for _ in range(2000):
        data = rng.randbytes(rng.randint(0, 48))
        for decoder in (lambda b: decode_command(b), lambda b: decode_status(b, "lamp-1")):
            try:
                decoder(data)
            except ProtocolError:
                pass
