import json
from pathlib import Path

import pytest

from cosim_bridge import protocol

FIXTURES = Path(__file__).resolve().parent.parent.parent / "docs" / "fixtures"


class TestCorpusConformance:
    def test_valid_corpus_round_trips_byte_for_byte(self):
        lines = (FIXTURES / "messages_valid.jsonl").read_text().splitlines()
        assert len(lines) >= 6
        for line in lines:
            msg = protocol.decode(line)
            assert protocol.encode(msg) == line

    def test_invalid_corpus_all_rejected(self):
        entries = json.loads((FIXTURES / "messages_invalid.json").read_text())
        assert len(entries) >= 8
        for entry in entries:
            with pytest.raises(protocol.DecodeError):
                protocol.decode(entry["line"])


class TestCodec:
    def test_close_canonical_form(self):
        assert protocol.encode({"type": "close"}) == '{"v":1,"type":"close"}'

    def test_field_order_is_canonical(self):
        line = protocol.encode({"type": "reset", "day": "2025-08-04", "seed": 1})
        assert line == '{"v":1,"type":"reset","seed":1,"day":"2025-08-04"}'

    def test_extra_fields_ignored_on_decode(self):
        msg = protocol.decode('{"v":1,"type":"act","action":0.5,"note":"x"}')
        assert msg == {"type": "act", "action": 0.5}

    def test_wrong_version_rejected(self):
        with pytest.raises(protocol.DecodeError, match="version"):
            protocol.decode('{"v":2,"type":"close"}')

    def test_missing_field_rejected(self):
        with pytest.raises(protocol.DecodeError, match="seed"):
            protocol.decode('{"v":1,"type":"reset","day":"2025-08-04"}')

    def test_unknown_type_rejected(self):
        with pytest.raises(protocol.DecodeError, match="type"):
            protocol.decode('{"v":1,"type":"ping"}')
