from intentrefine import extractor, factbase
from intentrefine.extractor import (
    KIND_DESTINATION_IP,
    KIND_SOURCE_IP,
    KIND_URL,
    extract_indicators,
    indicators_to_knowledge,
)

from conftest import read_fixture


def kinds_and_values(indicators):
    return [(i.kind, i.value) for i in indicators]


def test_source_cue_classifies_as_source():
    text = "The malware compromises vulnerable hosts and sends requests from the address 1.2.3.4 continuously."
    assert kinds_and_values(extract_indicators(text)) == [(KIND_SOURCE_IP, "1.2.3.4")]


def test_bare_ioc_defaults_to_destination():
    text = read_fixture("scenario1", "cti.txt")
    assert kinds_and_values(extract_indicators(text)) == [
        (KIND_DESTINATION_IP, "80.71.158.96")
    ]


def test_domain_extraction_lowercases():
    text = read_fixture("scenario2", "cti.txt")
    assert kinds_and_values(extract_indicators(text)) == [
        (KIND_URL, "hadleyshope.3utilities.com")
    ]
    assert kinds_and_values(extract_indicators(text.upper()))[0][1] == (
        "hadleyshope.3utilities.com"
    )


def test_empty_text():
    assert extract_indicators("") == []


def test_invalid_ip_octets_skipped():
    assert extract_indicators("contacted 999.1.2.3 yesterday") == []


def test_ip_fragments_not_matched_as_domains():
    inds = extract_indicators("the host at 10.20.30.40 was flagged")
    assert all(i.kind != KIND_URL for i in inds)


def test_duplicates_collapse_by_kind_and_value():
    text = "IoC list: 5.6.7.8 and again 5.6.7.8, plus bad.example.org and BAD.example.org"
    got = kinds_and_values(extract_indicators(text))
    assert got == [
        (KIND_DESTINATION_IP, "5.6.7.8"),
        (KIND_URL, "bad.example.org"),
    ]


def test_first_occurrence_order():
    text = "first evil.example.net then address 9.8.7.6 appears"
    got = kinds_and_values(extract_indicators(text))
    assert got == [(KIND_URL, "evil.example.net"), (KIND_DESTINATION_IP, "9.8.7.6")]


def test_determinism():
    text = read_fixture("scenario1", "cti.txt") + read_fixture("scenario2", "cti.txt")
    assert extract_indicators(text) == extract_indicators(text)


def test_indicators_extend_schema(scenario1_knowledge):
    indicators = extract_indicators(read_fixture("scenario2", "cti.txt"))
    k = indicators_to_knowledge(indicators, scenario1_knowledge)
    assert k.templates["entity"].slot_names() == ("destination-ip-address", "url")
    assert len(k.facts) == len(scenario1_knowledge.facts) + 1
    assert k.facts[-1].get("url") == "hadleyshope.3utilities.com"


def test_no_indicators_is_identity(scenario1_knowledge):
    assert indicators_to_knowledge([], scenario1_knowledge) == scenario1_knowledge


def test_existing_kinds_leave_template_unchanged(scenario1_knowledge):
    text = "IoCs: 1.1.1.1 and 2.2.2.2 observed"
    indicators = extract_indicators(text)
    k = indicators_to_knowledge(indicators, scenario1_knowledge)
    assert k.templates == scenario1_knowledge.templates
    assert len(k.facts) == len(scenario1_knowledge.facts) + 2


def test_asserted_facts_validate(scenario1_knowledge):
    text = read_fixture("scenario1", "cti.txt") + read_fixture("scenario2", "cti.txt")
    k = indicators_to_knowledge(extract_indicators(text), scenario1_knowledge)
    for fact in k.facts:
        factbase.validate_fact(k, fact)


def test_extraction_from_empty_base():
    k = indicators_to_knowledge(
        extract_indicators("spotted 4.4.4.4 in logs"), factbase.Knowledge()
    )
    assert k.templates["entity"].slot_names() == ("destination-ip-address",)
    assert len(k.facts) == 1
