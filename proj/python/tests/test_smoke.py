import json
import os
from pathlib import Path

import pytest

import promptforge as pf

ROOT = Path(__file__).resolve().parents[2]
TWEETS = ROOT / "tests" / "fixtures" / "te_hate_sample.csv"
LABELS = ["hateful", "non-hateful"]
HATEFUL_WORDS = ["deport", "Women are", "animals", "where they came", "No woman", "disease", "quota", "rats"]


def tweets():
    return pf.load_dataset(str(TWEETS), LABELS, label_column="label", id_column="id", task="te-hate")


def keyword_script():
    return {"rules": [{"contains": w, "reply": "hateful"} for w in HATEFUL_WORDS], "default": "non-hateful"}


def test_normalize_label():
    assert pf.normalize_label("Hateful.", LABELS) == "hateful"
    assert pf.normalize_label("I think... non-hateful", LABELS, extraction="last-word") == "non-hateful"
    assert pf.normalize_label("banana", LABELS) is None
    with pytest.raises(pf.InvalidArgument):
        pf.normalize_label("x", [])


def test_wald_and_micro_f1():
    lo, hi = pf.wald_ci(0.570, 2970)
    assert abs(lo - 0.552) <= 0.001 and abs(hi - 0.588) <= 0.001
    assert pf.micro_f1(["a", None, "b"], ["a", "b", "b"], ["a", "b"]) == pytest.approx(2 / 3)


def test_dataset_round_trip(tmp_path):
    d = tweets()
    assert len(d["records"]) == 20
    out = tmp_path / "copy.jsonl"
    pf.save_dataset(d, str(out))
    back = pf.load_dataset(str(out), LABELS, label_column="label", id_column="id", task="te-hate")
    assert back["records"] == d["records"]
    a, b = pf.split_dataset(d, 0.25, seed=1, stratify=True)
    assert len(a["records"]) == 5 and len(b["records"]) == 15
    assert not {r["id"] for r in a["records"]} & {r["id"] for r in b["records"]}
    with pytest.raises(pf.UnknownLabel):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,text,label\n1,x,zebra\n")
        pf.load_dataset(str(bad), LABELS, label_column="label", id_column="id")


def test_label_and_evaluate_with_scripted_rules():
    d = tweets()
    prompt = (ROOT / "prompts" / "te-hate" / "simple.txt").read_text().strip()
    ann = pf.label(d, prompt, keyword_script())
    assert len(ann["annotations"]) == 20
    assert ann["unparsed"] == 0
    report = pf.evaluate(d, prompt, keyword_script())
    assert report["micro_f1"] == 1.0
    assert report["display"] == "100.0 [100.0, 100.0]"


def test_callable_provider_sees_fresh_single_message():
    seen = []

    def provider(messages, variant):
        seen.append((len(messages), variant))
        return "hateful" if "rats" in messages[-1]["content"] else "non-hateful"

    report = pf.evaluate(tweets(), "Is this hateful?", provider, policy={"parallelism": 4})
    assert len(seen) == 20
    assert all(n == 1 and v == 0 for n, v in seen)
    assert report["n"] == 20
    assert report["micro_f1"] == pytest.approx(13 / 20)


def test_provider_exception_surfaces():
    def provider(messages, variant):
        raise ValueError("boom")

    with pytest.raises(pf.ProviderError, match="boom"):
        pf.label(tweets(), "x", provider)


def test_missing_gold_and_missing_key(tmp_path, monkeypatch):
    plain = tmp_path / "plain.csv"
    plain.write_text("id,text\n1,hello\n2,world\n")
    d = pf.load_dataset(str(plain), LABELS, id_column="id")
    with pytest.raises(pf.MissingGold):
        pf.evaluate(d, "x", {"default": "hateful"})
    monkeypatch.delenv("PF_PY_NO_KEY", raising=False)
    with pytest.raises(pf.AuthError, match="PF_PY_NO_KEY"):
        pf.label(d, "x", None, key_env="PF_PY_NO_KEY")


def test_optimize_writes_run_log(tmp_path):
    # records containing "rats" or "quota" are answered correctly only when the
    # instruction mentions "slurs"; the rewriter adds that word
    def provider(messages, variant):
        content = messages[-1]["content"]
        if content.startswith("Generate a variation"):
            return "Look for slurs. Output only \"hateful\" or \"non-hateful\" without quotes."
        instruction, text = content.rsplit("\n\n", 1)
        hateful = any(w in text for w in HATEFUL_WORDS)
        if ("rats" in text or "quota" in text) and "slurs" not in instruction:
            hateful = not hateful
        return "hateful" if hateful else "non-hateful"

    d = tweets()
    log = tmp_path / "run.jsonl"
    seed = "Classify the tweet. Output only \"hateful\" or \"non-hateful\" without quotes."
    config = {"population": 4, "elites": 2, "mutations_per_elite": 1, "generations": 2, "fitness_subset_size": 12}
    summary = pf.optimize(d, seed, provider, config=config, run_log=str(log))
    assert summary["generations"] == 3
    assert "slurs" in summary["best"]["prompt"]["instruction"]
    run = pf.read_run_log(str(log))
    assert run["final"]["best_prompt_id"] == summary["best"]["prompt"]["id"]
    assert not set(run["fitness_subset_ids"]) & set(run["final"]["report"]["record_ids"])
    assert len(run["entries"]) == 12


def test_run_cli(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps(keyword_script()))
    rc, out, err = pf.run_cli([
        "eval", "--dataset", str(TWEETS), "--labels", "hateful,non-hateful", "--id-col", "id",
        "--label-col", "label", "--prompt", "x", "--script", str(script), "--report", "json",
    ])
    assert rc == 0, err
    assert json.loads(out)["micro_f1"] == 1.0
    rc, _, err = pf.run_cli(["cache", "clear"])
    assert rc == 2 and "no cache configured" in err
