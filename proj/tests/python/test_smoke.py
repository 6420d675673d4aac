import json

import pytest

import ende

NAMES = ["Alice", "Bruno", "Chen", "Dana", "Emil", "Farah", "Goran", "Hana"]
CITIES = ["Austin", "Boston", "Cairo", "Dublin", "Essen", "Fresno", "Geneva", "Hanoi"]


def sentence(i):
    name, city = NAMES[i % 8], CITIES[(i * 3) % 8]
    tokens = ["The", city, "mayor", name, "spoke"]
    return {
        "id": f"s{i:02d}",
        "tokens": tokens,
        "pos": ["DT", "NNP", "NN", "NNP", "VBD"],
        "constituency": "(S (NP (DT The) (NNP %s) (NN mayor) (NNP %s)) (VP (VBD spoke)))" % (city, name),
        "entities": [
            {"start": 1, "end": 2, "label": "GPE"},
            {"start": 1, "end": 4, "label": "PER"},
        ],
    }


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


@pytest.fixture
def workspace(tmp_path):
    write_jsonl(tmp_path / "train.jsonl", [{"label_set": ["PER", "GPE"]}] + [sentence(i) for i in range(12)])
    write_jsonl(tmp_path / "test.jsonl", [{"label_set": ["PER", "GPE"]}] + [sentence(i) for i in range(12, 16)])
    (tmp_path / "exp.cfg").write_text(
        "train = train.jsonl\ntest = test.jsonl\nout = out\nk = 1\nm = 2\nseeds = 1, 2\n"
        "epochs = 2\ndim = 8\ntoken_dim = 8\npos_dim = 4\nhidden = 4\nnode_dim = 4\n"
    )
    return tmp_path


def test_load_and_stats(workspace):
    ds = ende.load_dataset(workspace / "train.jsonl")
    assert len(ds) == 12
    assert ds.labels == ["PER", "GPE"]
    assert ds.examples[0].entities[0] == ende.EntitySpan(1, 2, "GPE")
    assert ds.examples[0].has_boundary
    stats = ende.nesting_stats(ds)
    assert stats["sentences"] == 12
    assert stats["nested_pairs"] == 12


def test_bad_data_raises(tmp_path):
    write_jsonl(tmp_path / "bad.jsonl", [{"id": "x", "tokens": ["a"], "entities": [{"start": 0, "end": 3, "label": "P"}]}])
    with pytest.raises(ende.DataError):
        ende.load_dataset(tmp_path / "bad.jsonl")


def test_score():
    gold = {"a": [ende.EntitySpan(0, 2, "PER"), ende.EntitySpan(1, 2, "GPE")]}
    pred = {"a": [ende.EntitySpan(0, 2, "PER"), ende.EntitySpan(1, 2, "ORG")]}
    report = ende.score(gold, pred)
    assert report["precision"] == pytest.approx(0.5)
    assert report["recall"] == pytest.approx(0.5)
    assert ende.score(gold, gold)["f1"] == 1.0


def test_prompt_and_parse(workspace):
    ds = ende.load_dataset(workspace / "train.jsonl")
    test = ende.Sentence("t", ["The", "Oslo", "mayor", "Ivan", "spoke"])
    text = ende.render_prompt(ds.examples[:2], ds.labels, test)
    assert text.endswith("Sentence: The Oslo mayor Ivan spoke\nEntities:")
    parsed = ende.parse_lm_output('"Oslo" (GPE), "Oslo mayor Ivan" (PER)', test, ds.labels)
    assert parsed["spans"] == [ende.EntitySpan(1, 2, "GPE"), ende.EntitySpan(1, 4, "PER")]
    assert parsed["diagnostics"] == []
    garbage = ende.parse_lm_output("no idea", test, ds.labels)
    assert garbage["spans"] == [] and garbage["diagnostics"]


def test_train_and_run(workspace):
    trace = ende.train(workspace / "exp.cfg")
    assert [r["epoch"] for r in trace] == [0, 1]
    assert (workspace / "out" / "checkpoint.json").exists()
    summary = ende.run(workspace / "exp.cfg")
    assert summary["mean_f1"] == 1.0
    with pytest.raises(ende.ConfigError):
        ende.run(workspace / "exp.cfg", ["colour=red"])
