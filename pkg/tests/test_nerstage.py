import pytest

from adeqa.corpus import AnnotationPair, Label, LabeledSentence
from adeqa.errors import EmptyLexicon, FormatError
from adeqa.nerstage import DrugLexicon, LexiconRecognizer, build_lexicon, recognize_drugs


def _pos(text, drug, ae):
    b, a = text.index(drug), text.index(ae)
    return LabeledSentence("x", text, Label.POSITIVE, (AnnotationPair(drug, (b, b + len(drug)), ae, (a, a + len(ae)), (b, b + len(drug)), (a, a + len(ae))),))


def test_build_lexicon_set():
    train = [_pos("Rash on ibuprofen.", "ibuprofen", "Rash"), _pos("Prednisone caused acne.", "Prednisone", "acne"),
             _pos("More rash on ibuprofen.", "ibuprofen", "rash")]
    lex = build_lexicon(train)
    assert lex.entries == {"ibuprofen", "prednisone"}


def test_build_lexicon_needs_positives():
    with pytest.raises(EmptyLexicon):
        build_lexicon([LabeledSentence("n", "Nothing.", Label.NEGATIVE)])


def test_recognize_span_by_substring():
    s = "14-year-old girl developed a pruritic bullous eruption while on prednisone"
    (m,) = recognize_drugs(s, DrugLexicon(["prednisone"]))
    b = s.find("prednisone")
    assert m.char_span == (b, b + len("prednisone")) and m.surface == "prednisone"


def test_no_hits():
    assert recognize_drugs("No drugs here.", DrugLexicon(["aspirin"])) == []


def test_case_fold():
    (m,) = recognize_drugs("Ibuprofen was stopped.", DrugLexicon(["ibuprofen"]))
    assert m.surface == "Ibuprofen" and "Ibuprofen".lower() == "ibuprofen"


def test_whole_token_only():
    assert recognize_drugs("aspirinate was given", DrugLexicon(["aspirin"])) == []
    assert len(recognize_drugs("aspirin, then (aspirin).", DrugLexicon(["aspirin"]))) == 2


def test_longest_match_first_non_overlapping():
    lex = DrugLexicon(["interferon", "interferon alfa", "alfa"])
    ms = recognize_drugs("Interferon alfa and alfa alone.", lex)
    assert [m.surface for m in ms] == ["Interferon alfa", "alfa"]
    assert all(a.char_span[1] <= b.char_span[0] for a, b in zip(ms, ms[1:]))


def test_mentions_slice_to_lexicon(small_corpus):
    lex = build_lexicon(small_corpus.positives)
    rec = LexiconRecognizer(lex)
    for s in small_corpus:
        for m in rec.recognize(s.text):
            assert s.text[slice(*m.char_span)].lower() in lex


def test_training_recall_is_total(small_corpus):
    lex = build_lexicon(small_corpus.positives)
    for s in small_corpus.positives:
        found = {m.surface.lower() for m in recognize_drugs(s.text, lex)}
        for p in s.pairs:
            assert p.drug_surface.lower() in found


def test_lexicon_file(tmp_path):
    lex = DrugLexicon(["  Warfarin ", "heparin"])
    path = tmp_path / "lex.txt"
    lex.save(path)
    assert path.read_text().splitlines() == ["lexicon-v1", "heparin", "warfarin"]
    assert DrugLexicon.load(path) == lex
    with pytest.raises(FormatError):
        DrugLexicon.loads("heparin\n")
    with pytest.raises(EmptyLexicon):
        DrugLexicon.loads("lexicon-v1\n")
